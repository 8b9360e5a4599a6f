#!/usr/bin/env python3
"""Measure how the corpus metrics react to increasing token corruption.

Generates a synthetic corpus, corrupts each ground-truth sequence by
replacing tokens uniformly at random at a range of error rates, repairs the
corrupted sequences with the layout post-processor, and prints all five
corpus metrics per rate.  Useful for getting a feel for the metrics'
sensitivity and for sanity-checking the evaluation stack end to end.

Example:
    python3 scripts/metric_degradation.py --docs 20 --seed 3
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from docrec.fonts import builtin_fonts
from docrec.grammar import builtin_grammar
from docrec.metrics import evaluate_corpus, score_subsequences
from docrec.model import Vocabulary, inject_errors
from docrec.synthdoc import BUILTIN_STYLES, LineDataset, generate_document

LINES = LineDataset((
    ("bonjour monsieur", "B"), ("merci pour votre aide", "B"),
    ("veuillez agreer", "B"), ("paul durand", "S"), ("objet du courrier", "O"),
    ("12 rue des lilas", "R"), ("paris le 3 mai", "W"),
    ("cordialement", "Y"), ("pd", "P"),
))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=20)
    ap.add_argument("--max-lines", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rates", type=float, nargs="+",
                    default=(0.0, 0.02, 0.05, 0.10, 0.20, 0.40))
    args = ap.parse_args()

    grammar = builtin_grammar("rimes2009")
    style = BUILTIN_STYLES["rimes-style"]()
    fonts = list(builtin_fonts())
    vocab = Vocabulary.from_grammar(grammar)

    docs = []
    for i in range(args.docs):
        rng = np.random.default_rng([args.seed, i])
        l_doc = int(rng.integers(1, args.max_lines + 1))
        docs.append(generate_document((512, 384), l_doc, style, LINES, fonts,
                                      rng, grammar))
    gt = [d.ground_truth for d in docs]
    print(f"generated {len(docs)} documents, "
          f"{sum(len(g) for g in gt)} tokens total\n")

    print(f"{'rate':>6}  {'CER%':>7}  {'WER%':>7}  {'LOER%':>7}  "
          f"{'mAP%':>7}  {'PPER%':>7}")
    for rate in args.rates:
        rng = np.random.default_rng([args.seed, 999])
        pred = [inject_errors(g, rate, rng, vocab) for g in gt]
        report = evaluate_corpus(gt, pred, grammar)
        print(f"{rate:>6.2f}  {report.cer:>7.2f}  {report.wer:>7.2f}  "
              f"{report.loer:>7.2f}  {report.map_cer:>7.2f}  "
              f"{report.pper:>7.2f}")

    # confidence-ordered entity dump for the first document, using synthetic
    # per-token probabilities
    rng = np.random.default_rng(args.seed)
    seq = gt[0]
    probs = np.clip(rng.normal(0.9, 0.05, len(seq)), 0.0, 1.0)
    print("\nper-entity confidence scores (document 0):")
    for cls, entries in sorted(score_subsequences(seq, probs).items()):
        for score, text in entries:
            shown = text if len(text) <= 40 else text[:37] + "..."
            print(f"  {cls}  {score:.3f}  {shown!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
