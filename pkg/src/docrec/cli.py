"""Command-line surface: evaluation, synthetic data generation, training,
inference, and attention-map export.

Exit codes: 0 success, 2 validation failure, 3 I/O failure, 4 checkpoint
incompatibility.  Every command is deterministic under ``--seed``.

Manifests are UTF-8, tab-separated, one document per line:
``id TAB image-path TAB transcript`` with an optional fourth column of
space-separated per-token probabilities.  Paths are resolved relative to
the manifest's directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .grammar import GrammarError, LayoutGrammar, builtin_grammar, load_grammar
from .markup import parse_markup, serialize
from .metrics import document_counts, evaluate_corpus, score_subsequences
from .model import (
    CheckpointError,
    ModelConfig,
    RecognitionModel,
    ShapeMismatch,
    Vocabulary,
    attention_overlay,
    load_checkpoint,
    preprocess_image,
    restore_model,
    save_checkpoint,
)
from .fonts import builtin_fonts, load_font
from .synthdoc import (
    BUILTIN_STYLES,
    LineDataset,
    PlacementInfeasible,
    generate_document,
    load_stylesheet,
    render_line,
)
from .train import (
    LineOcrModel,
    TrainConfig,
    VALID_INTERPRETATIONS,
    pretrain_lines,
    restore_line_model,
    train_documents,
    transfer_weights,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_CHECKPOINT = 4

PROFILES = {
    "full": lambda n: ModelConfig(vocab_size=n),
    "desk": ModelConfig.desk_scale,
    "tiny": ModelConfig.tiny,
}

# distinct tints for the combined attention map, cycled per layout class
_PALETTE = (
    (220, 60, 60), (60, 140, 220), (60, 180, 90), (230, 160, 40),
    (160, 90, 210), (220, 100, 180), (90, 200, 200), (150, 150, 60),
)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    doc_id: str
    image_path: Path
    transcript: str
    probs: tuple[float, ...] | None = None


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ManifestError(
                    f"{path}:{lineno}: expected 3 or 4 tab-separated fields, "
                    f"got {len(parts)}")
            doc_id, rel, transcript = parts[0], parts[1], parts[2]
            if not doc_id:
                raise ManifestError(f"{path}:{lineno}: empty document id")
            if doc_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {doc_id!r}")
            seen.add(doc_id)
            probs = None
            if len(parts) == 4 and parts[3]:
                try:
                    probs = tuple(float(x) for x in parts[3].split())
                except ValueError:
                    raise ManifestError(
                        f"{path}:{lineno}: malformed probability column")
            entries.append(ManifestEntry(doc_id, base / rel, transcript, probs))
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    base = path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            try:
                rel = e.image_path.relative_to(base)
            except ValueError:
                rel = e.image_path
            row = f"{e.doc_id}\t{rel}\t{e.transcript}"
            if e.probs is not None:
                row += "\t" + " ".join(f"{p:.6f}" for p in e.probs)
            fh.write(row + "\n")


def resolve_grammar(spec: str) -> LayoutGrammar:
    try:
        return builtin_grammar(spec)
    except GrammarError:
        if Path(spec).exists():
            return load_grammar(spec)
        raise GrammarError(
            f"unknown grammar {spec!r}: not a built-in name or readable file")


def resolve_stylesheet(spec: str):
    if spec in BUILTIN_STYLES:
        return BUILTIN_STYLES[spec]()
    if Path(spec).exists():
        return load_stylesheet(spec)
    raise ValueError(
        f"unknown stylesheet {spec!r}: not a built-in name "
        f"({', '.join(sorted(BUILTIN_STYLES))}) or readable file")


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def save_image(path, array: np.ndarray) -> None:
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array.astype(np.uint8), mode=mode).save(path)


# -- eval -----------------------------------------------------------------------------------


def _counts_star(args):
    return document_counts(*args[:3], max_nodes=args[3])


def _read_predictions(spec: str, gt_entries) -> dict[str, ManifestEntry]:
    """Prediction source: a manifest file or a directory of <id>.txt files."""
    path = Path(spec)
    if path.is_dir():
        out = {}
        for e in gt_entries:
            txt = path / f"{e.doc_id}.txt"
            if not txt.exists():
                raise ManifestError(f"missing prediction file {txt}")
            out[e.doc_id] = ManifestEntry(
                e.doc_id, txt, txt.read_text(encoding="utf-8").strip("\n"))
        return out
    return {e.doc_id: e for e in read_manifest(path)}


def cmd_eval(args) -> int:
    grammar = resolve_grammar(args.grammar)
    gt_entries = read_manifest(args.gt)
    pred_map = _read_predictions(args.pred, gt_entries)
    gt_ids = [e.doc_id for e in gt_entries]
    missing = [i for i in gt_ids if i not in pred_map]
    extra = sorted(set(pred_map) - set(gt_ids))
    if missing or extra:
        for i in missing:
            print(f"error: no prediction for document {i}", file=sys.stderr)
        for i in extra:
            print(f"error: prediction for unknown document {i}", file=sys.stderr)
        return EXIT_VALIDATION
    gt_seqs, pred_seqs, failures = [], [], []
    for e in gt_entries:
        p = pred_map[e.doc_id]
        try:
            gt_seqs.append(parse_markup(e.transcript, grammar))
            pred_seqs.append(parse_markup(p.transcript, grammar))
        except ValueError as exc:
            failures.append((e.doc_id, exc))
    if failures:
        for doc_id, exc in failures:
            print(f"error: {doc_id}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    work = [(g, p, grammar, args.max_nodes)
            for g, p in zip(gt_seqs, pred_seqs)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            counts = list(pool.map(_counts_star, work))
    else:
        counts = [_counts_star(w) for w in work]
    report = evaluate_corpus(gt_seqs, pred_seqs, grammar, counts=counts)
    if args.records:
        with open(args.records, "w", encoding="utf-8") as fh:
            for e, c in zip(gt_entries, counts):
                fh.write(json.dumps({"id": e.doc_id, **asdict(c)},
                                    sort_keys=True) + "\n")
    if args.subsequences:
        with open(args.subsequences, "w", encoding="utf-8") as fh:
            for e, seq in zip(gt_entries, pred_seqs):
                probs = pred_map[e.doc_id].probs
                if probs is None:
                    raise ManifestError(
                        f"{e.doc_id}: subsequence dump needs a probability "
                        f"column in the prediction manifest")
                for cls, entries in sorted(score_subsequences(seq, probs).items()):
                    for score, text in entries:
                        fh.write(f"{e.doc_id}\t{cls}\t{score:.6f}\t{text}\n")
    print(report.to_json() if args.json else str(report))
    return EXIT_OK


# -- gen-synth ------------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    grammar = resolve_grammar(args.grammar)
    style = resolve_stylesheet(args.stylesheet)
    dataset = LineDataset.load(args.lines)
    dataset.validate_against(grammar)
    style.validate_against(grammar)
    fonts = list(builtin_fonts())
    if args.font:
        fonts.append(load_font(args.font))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        l_doc = int(rng.integers(1, args.max_lines + 1))
        doc = generate_document((args.height, args.width), l_doc, style,
                                dataset, fonts, rng, grammar)
        name = f"synth-{i:05d}.png"
        save_image(out_dir / name, doc.image)
        entries.append(ManifestEntry(f"synth-{i:05d}", out_dir / name,
                                     serialize(doc.ground_truth)))
    write_manifest(out_dir / "manifest.tsv", entries)
    print(f"wrote {len(entries)} documents to {out_dir}")
    return EXIT_OK


# -- pretrain-lines -------------------------------------------------------------------------


def _line_sampler(dataset: LineDataset, fonts, sizes):
    def sample(rng: np.random.Generator):
        for _ in range(100):
            text, _cls = dataset.records[int(rng.integers(len(dataset.records)))]
            usable = [f for f in fonts if f.supports(text)]
            if not usable:
                continue
            font = usable[int(rng.integers(len(usable)))]
            size = int(sizes[int(rng.integers(len(sizes)))])
            return render_line(text, font, size), text
        raise ValueError("no font renders any line of the dataset")
    return sample


def _train_config(args, **overrides) -> TrainConfig:
    base = dict(
        learning_rate=args.lr, seed=args.seed,
        dropout_interpretation=args.interpretation,
        total_updates=args.total_updates,
    )
    base.update(overrides)
    return TrainConfig(**base)


def cmd_pretrain_lines(args) -> int:
    grammar = resolve_grammar(args.grammar)
    vocab = Vocabulary.from_grammar(grammar)
    charset = tuple(t.value for t in vocab.char_tokens())
    dataset = LineDataset.load(args.lines)
    dataset.validate_against(grammar)
    config = PROFILES[args.profile](vocab.size)
    model = LineOcrModel(config, charset, seed=args.seed)
    cfg = _train_config(args, batch_size=args.batch_size)
    sample = _line_sampler(dataset, list(builtin_fonts()),
                           sizes=(14, 21, 28))
    history = pretrain_lines(model, sample, cfg, args.steps,
                             use_augment=not args.no_augment,
                             log_path=args.log)
    save_checkpoint(args.out, model,
                    extra={"model_kind": "line", "steps": args.steps,
                           "final_loss": history[-1]["loss"] if history else None})
    if history:
        print(f"step {history[-1]['step']}  loss {history[-1]['loss']:.4f}")
    print(f"saved line checkpoint to {args.out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------------------


def _load_real_documents(manifest_path, grammar):
    docs = []
    for e in read_manifest(manifest_path):
        image = load_image(e.image_path)
        docs.append((image, parse_markup(e.transcript, grammar)))
    return docs


def _synth_sampler(style, dataset, fonts, grammar, shape, v_stride):
    def sample(rng: np.random.Generator, l_doc: int):
        for attempt in range(4):
            try:
                return generate_document(shape, max(1, l_doc - attempt), style,
                                         dataset, fonts, rng, grammar,
                                         v_stride=v_stride)
            except PlacementInfeasible:
                continue
        return generate_document(shape, 1, style, dataset, fonts, rng, grammar,
                                 v_stride=v_stride)
    return sample


def cmd_train(args) -> int:
    grammar = resolve_grammar(args.grammar)
    vocab = Vocabulary.from_grammar(grammar)
    config = PROFILES[args.profile](vocab.size)
    model = RecognitionModel(config, vocab, seed=args.seed)
    if args.init:
        try:
            ckpt = load_checkpoint(args.init)
            line = restore_line_model(ckpt)
            transfer_weights(line, model)
        except ShapeMismatch as exc:
            raise CheckpointError(str(exc))
    real = _load_real_documents(args.manifest, grammar) if args.manifest else []
    sampler = None
    if args.lines:
        style = resolve_stylesheet(args.stylesheet)
        dataset = LineDataset.load(args.lines)
        dataset.validate_against(grammar)
        style.validate_against(grammar)
        sampler = _synth_sampler(style, dataset, list(builtin_fonts()), grammar,
                                 (args.height, args.width), config.v_stride)
    cfg = _train_config(
        args, error_rate=args.error_rate, steps_per_epoch=args.steps_per_epoch,
        l_max_lines=args.max_lines,
        ramp_epochs=args.ramp_epochs, decay_epochs=args.decay_epochs)
    history = train_documents(model, real, sampler, cfg, args.steps,
                              use_augment=not args.no_augment,
                              log_path=args.log, checkpoint_path=args.out,
                              checkpoint_every=args.checkpoint_every)
    if history:
        print(f"step {history[-1]['step']}  loss {history[-1]['loss']:.4f}")
    print(f"saved checkpoint to {args.out}")
    return EXIT_OK


# -- predict / attn-dump ----------------------------------------------------------------------


def _load_document_model(path) -> RecognitionModel:
    ckpt = load_checkpoint(path)
    try:
        return restore_model(ckpt)
    except ShapeMismatch as exc:
        raise CheckpointError(str(exc))


def _decode(model: RecognitionModel, image_path, max_len):
    image = load_image(image_path)
    x = preprocess_image(image)
    seq, probs, attn = model.decode_autoregressive(x, max_len=max_len)
    return image, seq, probs, attn


def cmd_predict(args) -> int:
    model = _load_document_model(args.checkpoint)
    _, seq, probs, _ = _decode(model, args.image, args.max_len)
    text = serialize(seq)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.probs_out:
        confid = [float(p.max()) for p in probs[:len(seq)]]
        Path(args.probs_out).write_text(
            " ".join(f"{c:.6f}" for c in confid) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_attn_dump(args) -> int:
    model = _load_document_model(args.checkpoint)
    image, seq, _, attn = _decode(model, args.image, args.max_len)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    v, h = model.config.v_stride, model.config.h_stride
    combined = np.zeros((*image.shape, 3), dtype=np.float64)
    colors: dict[str, tuple] = {}
    open_stack: list[str] = []
    index_lines = []
    for step, (token, step_map) in enumerate(zip(seq, attn)):
        overlay = attention_overlay(step_map, image.shape, v_stride=v, h_stride=h)
        save_image(out_dir / f"step-{step:04d}.png", overlay)
        if token.is_begin:
            open_stack.append(token.value)
        cls = open_stack[-1] if open_stack else ""
        if cls:
            color = colors.setdefault(cls, _PALETTE[len(colors) % len(_PALETTE)])
            tint = overlay[:, :, None] / 255.0 * np.asarray(color, dtype=np.float64)
            combined = np.maximum(combined, tint)
        if token.is_end and open_stack:
            open_stack.pop()
        index_lines.append(f"{step}\t{token!r}\t{cls}")
    save_image(out_dir / "combined.png", np.clip(combined, 0, 255))
    (out_dir / "index.tsv").write_text("\n".join(index_lines) + "\n",
                                       encoding="utf-8")
    print(f"wrote {len(seq)} step overlays to {out_dir}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------


def _add_train_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--total-updates", type=int, default=50_000,
                   help="schedule horizon T for curriculum dropout")
    p.add_argument("--interpretation", choices=VALID_INTERPRETATIONS,
                   default="retain-probability")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--log", help="append-only training log file")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docrec",
        description="Handwritten document recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="corpus metrics from manifests")
    p.add_argument("--gt", required=True, help="ground-truth manifest")
    p.add_argument("--pred", required=True,
                   help="prediction manifest or directory of <id>.txt files")
    p.add_argument("--grammar", required=True)
    p.add_argument("--records", help="per-document JSON-lines output")
    p.add_argument("--subsequences",
                   help="per-entity confidence dump (needs probability column)")
    p.add_argument("--json", action="store_true",
                   help="machine-readable report on stdout")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-nodes", type=int, default=32,
                   help="graph size limit for exact edit distance")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-synth", help="render synthetic documents")
    p.add_argument("--grammar", required=True)
    p.add_argument("--stylesheet", required=True)
    p.add_argument("--lines", required=True, help="class TAB text dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=384)
    p.add_argument("--max-lines", type=int, default=8)
    p.add_argument("--font", help="extra font file")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("pretrain-lines", help="train the line transcriber")
    p.add_argument("--grammar", required=True)
    p.add_argument("--lines", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    _add_train_common(p)
    p.set_defaults(func=cmd_pretrain_lines)

    p = sub.add_parser("train", help="train the document recognizer")
    p.add_argument("--grammar", required=True)
    p.add_argument("--manifest", help="real-document manifest")
    p.add_argument("--lines", help="line dataset for synthetic documents")
    p.add_argument("--stylesheet", default="rimes-style")
    p.add_argument("--init", help="line checkpoint to transfer weights from")
    p.add_argument("--error-rate", type=float, default=0.20)
    p.add_argument("--steps-per-epoch", type=int, default=100)
    p.add_argument("--max-lines", type=int, default=8)
    p.add_argument("--ramp-epochs", type=int, default=30)
    p.add_argument("--decay-epochs", type=int, default=30)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=384)
    p.add_argument("--checkpoint-every", type=int, default=0)
    _add_train_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="transcribe one document image")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the transcript here instead of stdout")
    p.add_argument("--probs-out", help="write per-token confidences here")
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("attn-dump", help="export attention overlays")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_attn_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
