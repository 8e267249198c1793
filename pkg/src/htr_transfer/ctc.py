"""Connectionist temporal classification: loss, gradient and best-path decoding.

The blank is always the last class index, so an alphabet of ``L`` characters
gives ``L + 1`` output classes with blank ``L``. All recursions run in the
log domain.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .tensor import log_softmax


class CtcInfeasibleError(ValueError):
    """The target cannot be emitted in the available number of frames."""


@dataclass
class CtcTables:
    alpha: np.ndarray  # [T, S] log forward scores
    beta: np.ndarray  # [T, S] log backward scores
    log_py: np.ndarray  # [T, K] per-frame log class probabilities
    extended: np.ndarray  # [S] blank-interleaved target
    log_prob: float


def collapse_path(path: Sequence[int], blank: int) -> list[int]:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if not 0 <= k <= blank:
            raise ValueError(f"class index {k} outside [0, {blank}]")
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def extend_labels(labels: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can emit ``labels``: one per label plus a blank
    between each pair of equal neighbours."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _check_target(labels, blank, n_frames):
    labels = [int(k) for k in labels]
    if any(not 0 <= k < blank for k in labels):
        raise ValueError(f"target labels must lie in [0, {blank}), got {labels}")
    need = min_frames(labels)
    if n_frames < need:
        raise CtcInfeasibleError(
            f"target of length {len(labels)} needs {need} frames, only {n_frames} available")
    return labels


def ctc_forward_backward(logits: np.ndarray, target: Sequence[int], input_len: int | None = None,
                         return_tables: bool = False):
    """Negative log-likelihood of ``target`` and its gradient w.r.t. ``logits``.

    ``logits`` is [T, K] (unnormalized; softmax is applied here). Frames at or
    beyond ``input_len`` are ignored and receive zero gradient.
    """
    t_all, k = logits.shape
    blank = k - 1
    t = t_all if input_len is None else int(input_len)
    if not 1 <= t <= t_all:
        raise ValueError(f"input_len {input_len} outside [1, {t_all}]")
    labels = _check_target(target, blank, t)

    log_py = log_softmax(logits[:t], axis=1)
    ext = extend_labels(labels, blank)
    s = len(ext)
    lp = log_py[:, ext]  # [T, S]
    # a label may be reached by skipping the blank before it unless it repeats
    skip = np.zeros(s, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]

    neg_inf = -np.inf
    alpha = np.full((t, s), neg_inf)
    alpha[0, 0] = lp[0, 0]
    if s > 1:
        alpha[0, 1] = lp[0, 1]
    with np.errstate(invalid="ignore"):
        for i in range(1, t):
            prev = alpha[i - 1]
            acc = prev.copy()
            acc[1:] = np.logaddexp(acc[1:], prev[:-1])
            acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
            alpha[i] = acc + lp[i]

    beta = np.full((t, s), neg_inf)
    beta[t - 1, s - 1] = lp[t - 1, s - 1]
    if s > 1:
        beta[t - 1, s - 2] = lp[t - 1, s - 2]
    skip_back = np.zeros(s, dtype=bool)
    skip_back[:-2] = skip[2:]
    with np.errstate(invalid="ignore"):
        for i in range(t - 2, -1, -1):
            nxt = beta[i + 1]
            acc = nxt.copy()
            acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
            acc[:-2] = np.where(skip_back[:-2], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
            beta[i] = acc + lp[i]

    log_p = alpha[t - 1, s - 1] if s == 1 else np.logaddexp(alpha[t - 1, s - 1], alpha[t - 1, s - 2])
    occupancy = np.exp(alpha + beta - lp - log_p)  # [T, S]
    posterior = np.zeros((t, k))
    np.add.at(posterior.T, ext, occupancy.T)

    grad = np.zeros_like(logits, dtype=np.float64)
    grad[:t] = np.exp(log_py) - posterior
    grad = grad.astype(logits.dtype, copy=False)
    loss = float(-log_p)
    if return_tables:
        return loss, grad, CtcTables(alpha, beta, log_py, ext, float(log_p))
    return loss, grad


@lru_cache(maxsize=32)
def _path_groups(n_classes: int, n_frames: int):
    paths = np.array(list(itertools.product(range(n_classes), repeat=n_frames)), dtype=np.int64)
    groups: dict[tuple, list[int]] = {}
    for row, path in enumerate(paths.tolist()):
        groups.setdefault(tuple(collapse_path(path, n_classes - 1)), []).append(row)
    return paths, {key: np.array(rows) for key, rows in groups.items()}


def ctc_bruteforce(probs: np.ndarray, target: Sequence[int]) -> float:
    """Reference loss by enumerating every frame-level path.

    Intended for checking :func:`ctc_forward_backward` on tiny instances.
    """
    t, k = probs.shape
    if k ** t > 10 ** 7:
        raise ValueError(f"{k}^{t} paths is too many to enumerate")
    paths, groups = _path_groups(k, t)
    rows = groups.get(tuple(int(c) for c in target))
    if rows is None:
        raise CtcInfeasibleError(f"no path of {t} frames collapses to {list(target)}")
    path_probs = np.prod(probs[np.arange(t), paths[rows]], axis=1)
    return float(-np.log(path_probs.sum()))


def greedy_decode(logits: np.ndarray, input_len: int | None = None) -> list[int]:
    """Best-path decoding. Ties go to the lowest class index."""
    t = logits.shape[0] if input_len is None else int(input_len)
    return collapse_path(np.argmax(logits[:t], axis=1), logits.shape[1] - 1)
