"""Training harness: line-level pre-training with the alignment-free loss,
weight transfer into the document recognizer, and teacher-forced document
training with curriculum schedules and augmentation.

Document training is deliberately single-sample (no mini-batching); line
pre-training averages gradients over a mini-batch of 16 by default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentConfig, augment
from .autodiff import Adam, Tensor, add, matmul, mul, no_grad, reshape, tensor_max, transpose
from .ctc import TargetTooLong, ctc_loss, greedy_ctc_decode
from .metrics import levenshtein
from .model import (
    Checkpoint,
    CheckpointError,
    InputTooSmall,
    ModelConfig,
    RecognitionModel,
    ShapeMismatch,
    Vocabulary,
    apply_encoder_stack,
    encoder_parameters,
    inject_errors,
    init_encoder_stack,
    preprocess_image,
    save_checkpoint,
)
from .synthdoc import SynthDocument, curriculum_lines, synth_fraction
from .tokens import TokenSequence
from .tokens import char as char_token

VALID_INTERPRETATIONS = ("retain-probability", "dropout-rate-as-written")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings; defaults follow the full-scale
    reference recipe (adaptive-moment updates at 1e-4, 5e4 total updates,
    20% teacher-forcing errors, 16-line pre-training batches)."""

    learning_rate: float = 1e-4
    total_updates: int = 50_000          # T in the dropout schedule
    final_dropout: float = 0.10
    error_rate: float = 0.20
    batch_size: int = 16
    dropout_interpretation: str = "retain-probability"
    ramp_epochs: int = 30                # line-count curriculum length
    decay_epochs: int = 30               # synthetic-fraction decay length
    steps_per_epoch: int = 100
    l_max_lines: int = 30
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.total_updates <= 0:
            raise ValueError("total update estimate T must be positive")
        for name in ("final_dropout", "error_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.dropout_interpretation not in VALID_INTERPRETATIONS:
            raise ValueError(
                f"dropout interpretation must be one of {VALID_INTERPRETATIONS}")
        if self.steps_per_epoch < 1 or self.l_max_lines < 1:
            raise ValueError("steps_per_epoch and l_max_lines must be positive")


# -- curriculum dropout ------------------------------------------------------------


def curriculum_dropout(t: float, total: float, final_rate: float) -> float:
    """Scheduled value (1 - final) * exp(-t/total) + final, decaying from 1."""
    if t < 0:
        raise ValueError("update count t must be non-negative")
    if total <= 0:
        raise ValueError("total update estimate must be positive")
    if not 0.0 <= final_rate <= 1.0:
        raise ValueError("final rate must be in [0, 1]")
    return (1.0 - final_rate) * math.exp(-t / total) + final_rate


def step_dropout(t: int, config: TrainConfig) -> float:
    """Dropout probability actually applied at update ``t``.

    Read verbatim, the schedule is the dropout rate itself and starts at 1
    (everything dropped).  The default interpretation treats the scheduled
    value as the retain probability with floor ``1 - final_dropout``, giving
    a rate that ramps from 0 up to ``final_dropout``.
    """
    if config.dropout_interpretation == "dropout-rate-as-written":
        return curriculum_dropout(t, config.total_updates, config.final_dropout)
    keep = curriculum_dropout(t, config.total_updates, 1.0 - config.final_dropout)
    return 1.0 - keep


# -- line-level model -----------------------------------------------------------------


class LineOcrModel:
    """Line transcriber: the shared convolutional encoder, an adaptive max
    pool collapsing the vertical axis, and a per-frame decision projection
    over the character set plus one blank column (last)."""

    def __init__(self, config: ModelConfig, charset: Sequence[str], seed: int = 0):
        if len(set(charset)) != len(charset):
            raise ValueError("charset contains duplicates")
        self.config = config
        self.charset = tuple(charset)
        self._ids = {ch: i for i, ch in enumerate(self.charset)}
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        self.enc_convs, self.enc_norms = init_encoder_stack(config, rng)
        std = (2.0 / (config.d_model + self.n_labels)) ** 0.5
        self.out_w = Tensor(
            rng.normal(0.0, std, (config.d_model, self.n_labels)).astype(dtype),
            requires_grad=True)
        self.out_b = Tensor(np.zeros(self.n_labels, dtype=dtype), requires_grad=True)

    @property
    def n_labels(self) -> int:
        return len(self.charset) + 1  # + blank

    @property
    def blank(self) -> int:
        return len(self.charset)

    @property
    def vocab(self) -> Vocabulary:
        """Character-only vocabulary, used by the shared checkpoint format."""
        return Vocabulary([char_token(c) for c in self.charset])

    def parameters(self) -> dict[str, Tensor]:
        params = encoder_parameters(self.enc_convs, self.enc_norms)
        params["line.out.w"] = self.out_w
        params["line.out.b"] = self.out_b
        return params

    def text_to_ids(self, text: str) -> list[int]:
        try:
            return [self._ids[ch] for ch in text]
        except KeyError:
            bad = sorted(set(text) - set(self.charset))
            raise ValueError(f"text uses characters outside the charset: {bad}")

    def ids_to_text(self, ids: Sequence[int]) -> str:
        return "".join(self.charset[i] for i in ids)

    def forward(self, image: np.ndarray, rng: np.random.Generator | None = None,
                training: bool = False, drop_rate: float | None = None) -> Tensor:
        """Logits (W_f, charset+1) for one preprocessed line image."""
        arr = np.asarray(image, dtype=self.config.np_dtype)
        if arr.ndim != 2:
            raise ShapeMismatch(f"expected a 2D line image, got shape {arr.shape}")
        h, w = arr.shape
        if h < self.config.v_stride or w < self.config.h_stride:
            raise InputTooSmall(
                f"line image {h}x{w} smaller than the encoder stride "
                f"{self.config.v_stride}x{self.config.h_stride}")
        rate = self.config.dropout if drop_rate is None else drop_rate
        feats = apply_encoder_stack(Tensor(arr[None, None]), self.enc_convs,
                                    self.enc_norms, self.config.strides,
                                    rate, rng, training)
        f = reshape(feats, feats.shape[1:])        # (d, H_f, W_f)
        collapsed = tensor_max(f, axis=1)          # adaptive max over height
        return add(matmul(transpose(collapsed, (1, 0)), self.out_w), self.out_b)

    def transcribe(self, image: np.ndarray) -> str:
        with no_grad():
            logits = self.forward(image)
        return self.ids_to_text(greedy_ctc_decode(logits.data, self.blank))


def pretrain_lines(model: LineOcrModel,
                   sample_line: Callable[[np.random.Generator], tuple[np.ndarray, str]],
                   config: TrainConfig, steps: int, *,
                   rng: np.random.Generator | None = None,
                   use_augment: bool = True,
                   log_path=None) -> list[dict]:
    """Mini-batch training of the line transcriber.

    ``sample_line`` returns a raw uint8 line image and its transcription;
    samples whose targets cannot be aligned within the available frames are
    skipped and counted.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    opt = Adam(model.parameters(), lr=config.learning_rate)
    history: list[dict] = []
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(steps):
            opt.zero_grad()
            total = 0.0
            used = 0
            skipped = 0
            drop = step_dropout(step, config)
            scale = Tensor(np.asarray(1.0 / config.batch_size))
            for _ in range(config.batch_size):
                image, text = sample_line(rng)
                if use_augment:
                    image = augment(image, rng, config.augment)
                x = preprocess_image(image)
                target = model.text_to_ids(text)
                try:
                    logits = model.forward(x, rng=rng, training=True, drop_rate=drop)
                    loss = ctc_loss(logits, target, blank=model.blank)
                except (TargetTooLong, InputTooSmall):
                    skipped += 1
                    continue
                mul(loss, scale).backward()
                total += float(loss.data)
                used += 1
            if used:
                opt.step()
            record = {"step": step, "loss": total / max(used, 1),
                      "dropout": drop, "skipped": skipped}
            history.append(record)
            if log:
                log.write(json.dumps(record) + "\n")
    finally:
        if log:
            log.close()
    return history


def restore_line_model(ckpt: Checkpoint) -> LineOcrModel:
    """Rebuild a line transcriber from a loaded checkpoint."""
    charset = tuple(t.value for t in ckpt.vocab.char_tokens())
    model = LineOcrModel(ckpt.config, charset, seed=0)
    params = model.parameters()
    missing = set(params) - set(ckpt.tensors)
    unexpected = set(ckpt.tensors) - set(params)
    if missing or unexpected:
        raise CheckpointError(
            f"parameter names do not match (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(unexpected)[:3]})")
    for name, tensor in params.items():
        stored = ckpt.tensors[name]
        if stored.shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {stored.shape} vs {tensor.data.shape}")
        tensor.data = stored.astype(ckpt.config.np_dtype)
    return model


def line_cer(model: LineOcrModel,
             samples: Sequence[tuple[np.ndarray, str]]) -> float:
    """Corpus character error rate (percent) of greedy line transcription."""
    errors = 0
    length = 0
    for image, text in samples:
        pred = model.transcribe(preprocess_image(image))
        errors += levenshtein(text, pred)
        length += len(text)
    if length == 0:
        raise ValueError("empty evaluation set")
    return 100.0 * errors / length


# -- weight transfer ---------------------------------------------------------------------


def transfer_weights(line_model: LineOcrModel, doc_model: RecognitionModel) -> None:
    """Copy the shared encoder and the character columns of the decision
    projection from a pre-trained line transcriber into a document model.

    Layout-token and end-marker columns keep the document model's own
    (seeded) initialization; the blank column is dropped.
    """
    doc_chars = tuple(t.value for t in doc_model.vocab.char_tokens())
    if doc_chars != line_model.charset:
        raise ShapeMismatch(
            "character sets differ between the line and document models")
    src = line_model.parameters()
    dst = doc_model.parameters()
    for name, tensor in src.items():
        if not name.startswith("enc."):
            continue
        if name not in dst or dst[name].data.shape != tensor.data.shape:
            raise ShapeMismatch(f"encoder parameter {name} does not match")
    for name, tensor in src.items():
        if name.startswith("enc."):
            dst[name].data = tensor.data.astype(doc_model.config.np_dtype).copy()
    n = len(doc_chars)
    if doc_model.out_w.data.shape[0] != line_model.out_w.data.shape[0]:
        raise ShapeMismatch("decision layers disagree on feature width")
    doc_model.out_w.data[:, :n] = line_model.out_w.data[:, :n].astype(
        doc_model.config.np_dtype)
    doc_model.out_b.data[:n] = line_model.out_b.data[:n].astype(
        doc_model.config.np_dtype)


# -- document training ----------------------------------------------------------------------


def train_documents(model: RecognitionModel,
                    real_docs: Sequence[tuple[np.ndarray, TokenSequence]],
                    synth_sampler: Callable[[np.random.Generator, int], SynthDocument] | None,
                    config: TrainConfig, steps: int, *,
                    start_step: int = 0,
                    use_augment: bool = True,
                    log_path=None,
                    checkpoint_path=None,
                    checkpoint_every: int = 0) -> list[dict]:
    """Teacher-forced single-sample training of the document recognizer.

    Each update draws a synthetic document (via ``synth_sampler(rng, l_doc)``)
    or a real one according to the synthetic-fraction schedule, augments the
    image, injects teacher-forcing errors into the decoder prefix, and applies
    one optimizer step.  Returns one record per step: step, loss, the
    scheduled dropout value tau, the synthetic fraction, and the line cap l.
    """
    if not real_docs and synth_sampler is None:
        raise ValueError("need at least one data source")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.learning_rate)
    history: list[dict] = []
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for i in range(steps):
            t = start_step + i
            epoch = t // config.steps_per_epoch
            progress = min(1.0, epoch / config.ramp_epochs) if config.ramp_epochs else 1.0
            l_cap = curriculum_lines(progress, config.l_max_lines)
            if synth_sampler is None:
                frac = 0.0
            elif not real_docs:
                frac = 1.0
            else:
                frac = synth_fraction(epoch, ramp_epochs=config.ramp_epochs,
                                      decay_epochs=config.decay_epochs)
            use_synth = rng.random() < frac
            if use_synth:
                l_doc = int(rng.integers(1, l_cap + 1))
                doc = synth_sampler(rng, l_doc)
                image, target = doc.image, doc.ground_truth
            else:
                idx = int(rng.integers(len(real_docs)))
                image, target = real_docs[idx]
            if use_augment:
                image = augment(np.asarray(image, dtype=np.uint8), rng,
                                config.augment)
            x = preprocess_image(image)
            drop = step_dropout(t, config)
            tau = curriculum_dropout(t, config.total_updates, config.final_dropout)
            prefix = inject_errors(target, config.error_rate, rng, model.vocab)
            opt.zero_grad()
            loss = model.sequence_loss(x, target, rng=rng, training=True,
                                       prefix=prefix, drop_rate=drop)
            loss.backward()
            opt.step()
            record = {"step": t, "loss": float(loss.data), "tau": tau,
                      "synth_fraction": frac, "l": l_cap,
                      "source": "synthetic" if use_synth else "real"}
            history.append(record)
            if log:
                log.write(f"{t}\t{float(loss.data):.6f}\t{tau:.6f}"
                          f"\t{frac:.2f}\t{l_cap}\n")
                log.flush()
            if (checkpoint_path and checkpoint_every
                    and (i + 1) % checkpoint_every == 0):
                save_checkpoint(checkpoint_path, model,
                                extra={"step": t + 1, "loss": float(loss.data)})
    finally:
        if log:
            log.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model,
                        extra={"step": start_step + steps,
                               "loss": history[-1]["loss"] if history else None})
    return history
