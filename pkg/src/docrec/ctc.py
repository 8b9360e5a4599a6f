"""Alignment-free sequence loss for line-level optical character recognition.

The loss marginalizes over every monotonic blank-augmented alignment between
the per-frame logits and the target character sequence, computed with the
standard forward dynamic program in log space.  The gradient with respect to
the logits is the classic softmax-minus-posterior expression obtained from
the forward and backward recursions, so the loss plugs into the autodiff
graph as a single custom operation.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Tensor, tensor_op

NEG_INF = -np.inf


class TargetTooLong(ValueError):
    """The target cannot be aligned within the available frames."""


def min_frames(target: Sequence[int]) -> int:
    """Shortest frame count that admits an alignment: one frame per label
    plus a separating blank between equal neighbours."""
    y = list(target)
    repeats = sum(1 for a, b in zip(y, y[1:]) if a == b)
    return len(y) + repeats


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def ctc_loss(logits: Tensor | np.ndarray, target: Sequence[int],
             blank: int | None = None) -> Tensor:
    """Negative log-probability of the target under all valid alignments.

    ``logits`` has shape (frames, alphabet+1); the blank symbol defaults to
    the last output index so character ids occupy the leading columns.
    """
    x = logits if isinstance(logits, Tensor) else Tensor(np.asarray(logits))
    if x.data.ndim != 2:
        raise ValueError(f"expected (frames, labels) logits, got shape {x.shape}")
    n_frames, n_labels = x.data.shape
    if blank is None:
        blank = n_labels - 1
    if not 0 <= blank < n_labels:
        raise ValueError(f"blank index {blank} outside [0, {n_labels})")
    y = [int(t) for t in target]
    if any(t == blank for t in y):
        raise ValueError("target contains the blank symbol")
    if any(not 0 <= t < n_labels for t in y):
        raise ValueError("target ids outside the logit alphabet")
    need = min_frames(y)
    if n_frames < need:
        raise TargetTooLong(
            f"target needs at least {need} frames, got {n_frames}")

    logp = _log_softmax(x.data.astype(np.float64))
    ext = _extend(y, blank)
    s_len = len(ext)

    # forward: alpha[t, s] = log P(prefix of ext up to s | frames 0..t),
    # emission at frame t included
    alpha = np.full((n_frames, s_len), NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = logp[0, ext[1]]
    can_skip = np.zeros(s_len, dtype=bool)
    can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    for t in range(1, n_frames):
        stay = alpha[t - 1]
        step = np.full(s_len, NEG_INF)
        step[1:] = alpha[t - 1, :-1]
        skip = np.full(s_len, NEG_INF)
        skip[2:] = np.where(can_skip[2:], alpha[t - 1, :-2], NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + logp[t, ext]

    log_z = np.logaddexp(alpha[-1, -1],
                         alpha[-1, -2] if s_len > 1 else NEG_INF)
    loss_value = -log_z

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        # backward recursion: beta[t, s] = log P(suffix from s | frames t..end),
        # emission at frame t excluded, so alpha + beta covers each path once
        beta = np.full((n_frames, s_len), NEG_INF)
        beta[-1, -1] = 0.0
        if s_len > 1:
            beta[-1, -2] = 0.0
        for t in range(n_frames - 2, -1, -1):
            nxt = beta[t + 1] + logp[t + 1, ext]
            stay = nxt
            step = np.full(s_len, NEG_INF)
            step[:-1] = nxt[1:]
            skip = np.full(s_len, NEG_INF)
            skip[:-2] = np.where(can_skip[2:], nxt[2:], NEG_INF)
            beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

        occupancy = alpha + beta - log_z  # log P(path passes (t, s))
        post = np.zeros((n_frames, n_labels))
        with np.errstate(under="ignore"):
            occ = np.exp(occupancy)
        for s, label in enumerate(ext):
            post[:, label] += occ[:, s]
        grad = (np.exp(logp) - post) * float(g)
        x.accumulate(grad.astype(x.data.dtype))

    return tensor_op(np.asarray(loss_value), [x], backward)


def collapse_alignment(frame_labels: Sequence[int], blank: int) -> list[int]:
    """Best-path decoding step two: merge repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for lab in frame_labels:
        lab = int(lab)
        if lab != prev and lab != blank:
            out.append(lab)
        prev = lab
    return out


def greedy_ctc_decode(logits: np.ndarray, blank: int | None = None) -> list[int]:
    """Per-frame argmax followed by :func:`collapse_alignment`."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if blank is None:
        blank = arr.shape[-1] - 1
    return collapse_alignment(arr.argmax(axis=-1), blank)
