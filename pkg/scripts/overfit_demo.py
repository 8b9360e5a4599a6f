#!/usr/bin/env python3
"""Overfit a desk-scale recognizer on a handful of synthetic documents.

Generates a few fixed synthetic documents, trains the document recognizer on
them with single-sample updates, and reports corpus CER / LOER as training
progresses.  With default settings the model reaches 0% error on its own
training set within a few thousand updates — a quick end-to-end sanity check
of the full pipeline (generator, encoder-decoder, training loop, decoding,
post-processing, metrics).

Example:
    python3 scripts/overfit_demo.py --docs 5 --steps 4000 --out /tmp/overfit
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from docrec.fonts import builtin_fonts
from docrec.grammar import builtin_grammar
from docrec.markup import serialize
from docrec.metrics import evaluate_corpus
from docrec.model import (
    ModelConfig,
    RecognitionModel,
    Vocabulary,
    preprocess_image,
    save_checkpoint,
)
from docrec.synthdoc import EntitySpec, LineDataset, StyleSheet, generate_document
from docrec.train import TrainConfig, train_documents

STYLE = StyleSheet(
    "overfit-demo",
    (
        EntitySpec("B", "main", min_count=1, max_count=1, weight=1.0,
                   min_lines=2, max_lines=2, max_chars=12, scale=2),
        EntitySpec("O", "main", min_count=1, max_count=1, weight=1.0,
                   min_lines=1, max_lines=1, max_chars=12, scale=2),
    ),
    margin_frac=0.0,
)

LINES = LineDataset((
    ("bonjour", "B"), ("merci bien", "B"), ("a bientot", "B"), ("cordial", "B"),
    ("objet vente", "O"), ("recu note", "O"), ("dossier no 4", "O"),
))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=5)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--eval-every", type=int, default=250)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=77)
    ap.add_argument("--out", help="directory for the final checkpoint")
    args = ap.parse_args()

    grammar = builtin_grammar("rimes2009")
    fonts = list(builtin_fonts())
    docs = []
    for i in range(args.docs):
        rng = np.random.default_rng([args.seed, i])
        d = generate_document((192, 224), 3, STYLE, LINES, fonts, rng, grammar)
        docs.append((d.image, d.ground_truth))
        print(f"doc {i}: {d.image.shape[0]}x{d.image.shape[1]}  "
              f"{serialize(d.ground_truth)}")

    vocab = Vocabulary.from_grammar(grammar)
    model = RecognitionModel(ModelConfig.desk_scale(vocab.size), vocab, seed=123)
    cfg = TrainConfig(learning_rate=args.lr, seed=9, steps_per_epoch=100,
                      l_max_lines=3)

    gt = [g for _, g in docs]
    t0 = time.time()
    step = 0
    print(f"\n{'step':>6}  {'loss':>9}  {'CER%':>7}  {'LOER%':>7}  {'sec':>6}")
    while step < args.steps:
        chunk = min(args.eval_every, args.steps - step)
        history = train_documents(model, docs, None, cfg, steps=chunk,
                                  start_step=step, use_augment=False)
        step += chunk
        preds = [model.decode_autoregressive(preprocess_image(img),
                                             max_len=len(g) + 20)[0]
                 for img, g in docs]
        report = evaluate_corpus(gt, preds, grammar)
        print(f"{step:>6}  {history[-1]['loss']:>9.3f}  {report.cer:>7.2f}  "
              f"{report.loer:>7.2f}  {time.time() - t0:>6.1f}", flush=True)
        if report.cer == 0.0 and report.loer == 0.0:
            print(f"\nreached 0% CER and 0% LOER after {step} updates")
            break
    else:
        print("\ndid not fully converge; try more steps")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "overfit.ckpt", model, extra={"step": step})
        print(f"checkpoint written to {out / 'overfit.ckpt'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
