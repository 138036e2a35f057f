"""Alignment-free sequence loss and decoding for multi-character labels.

The loss sums, over every frame-level path that collapses to the target
(drop repeats, then blanks), the product of per-frame probabilities.  It is
computed with the standard forward dynamic program over the
blank-interleaved extended target, entirely in log space; the gradient with
respect to the log-posteriors comes from the matching backward pass.  Blank
is always class 0.

``ctc_brute_force`` enumerates every path explicitly and exists purely as a
small-instance oracle for the DP.
"""

from __future__ import annotations

from itertools import product
from typing import Sequence

import numpy as np

from .errors import (
    InfeasibleTargetError,
    InvalidConfigError,
    NumericError,
    OracleTooLargeError,
    ShapeError,
)
from .tensor import Value, _accum, _node

BLANK = 0

_BRUTE_MAX_T = 8
_BRUTE_MAX_V = 4


def _check_target(target: Sequence[int], vocab: int) -> list[int]:
    target = [int(t) for t in target]
    if not target:
        raise InvalidConfigError("CTC target must contain at least one symbol")
    for t in target:
        if not 1 <= t < vocab:
            raise InvalidConfigError(f"target symbol {t} outside [1, {vocab})")
    return target


def _extended(target: list[int]) -> list[int]:
    ext = [BLANK]
    for t in target:
        ext.append(t)
        ext.append(BLANK)
    return ext


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames that can emit the target (repeats need a blank between)."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def collapse(path: Sequence[int]) -> list[int]:
    """Collapse a frame path: merge repeats, then strip blanks."""
    out: list[int] = []
    prev = None
    for sym in path:
        if sym != prev and sym != BLANK:
            out.append(int(sym))
        prev = sym
    return out


def _forward_alphas(log_probs: np.ndarray, ext: list[int]) -> np.ndarray:
    t_frames = log_probs.shape[0]
    s_len = len(ext)
    alpha = np.full((t_frames, s_len), -np.inf)
    alpha[0, 0] = log_probs[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    ext_arr = np.asarray(ext)
    can_skip = np.zeros(s_len, dtype=bool)
    can_skip[2:] = (ext_arr[2:] != BLANK) & (ext_arr[2:] != ext_arr[:-2])
    for t in range(1, t_frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate([[-np.inf], prev[:-1]])
        best = np.logaddexp(stay, step)
        skip = np.concatenate([[-np.inf, -np.inf], prev[:-2]])
        best = np.where(can_skip, np.logaddexp(best, skip), best)
        alpha[t] = best + log_probs[t, ext]
    return alpha


def _backward_betas(log_probs: np.ndarray, ext: list[int]) -> np.ndarray:
    t_frames = log_probs.shape[0]
    s_len = len(ext)
    beta = np.full((t_frames, s_len), -np.inf)
    beta[t_frames - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_frames - 1, s_len - 2] = 0.0
    ext_arr = np.asarray(ext)
    can_skip = np.zeros(s_len, dtype=bool)
    can_skip[: s_len - 2] = (ext_arr[2:] != BLANK) & (ext_arr[2:] != ext_arr[:-2])
    for t in range(t_frames - 2, -1, -1):
        nxt = beta[t + 1] + log_probs[t + 1, ext]
        stay = nxt
        step = np.concatenate([nxt[1:], [-np.inf]])
        best = np.logaddexp(stay, step)
        skip = np.concatenate([nxt[2:], [-np.inf, -np.inf]])
        best = np.where(can_skip, np.logaddexp(best, skip), best)
        beta[t] = best
    return beta


def ctc_loss(log_posteriors: Value, target: Sequence[int]) -> Value:
    """Negative log-probability of the target under the posterior lattice.

    ``log_posteriors`` is a ``[T, V]`` value of per-frame log-probabilities
    (rows normalized; -inf entries are allowed for masked classes).
    Differentiable with respect to the posteriors.
    """
    lp = log_posteriors.data
    if lp.ndim != 2:
        raise ShapeError(f"log posteriors must be [T, V], got {lp.shape}")
    t_frames, vocab = lp.shape
    if vocab < 2:
        raise InvalidConfigError("vocabulary must include blank plus >= 1 symbol")
    target = _check_target(target, vocab)
    if min_frames(target) > t_frames:
        raise InfeasibleTargetError(
            f"target needs >= {min_frames(target)} frames, only {t_frames} available"
        )
    rowsum = np.logaddexp.reduce(lp, axis=1)
    if np.any(np.abs(rowsum) > 1e-6):
        raise InvalidConfigError("posterior rows must be normalized in log space")

    ext = _extended(target)
    alpha = _forward_alphas(lp, ext)
    tail = alpha[t_frames - 1, len(ext) - 1]
    if len(ext) > 1:
        tail = np.logaddexp(tail, alpha[t_frames - 1, len(ext) - 2])
    log_p = float(tail)
    if not np.isfinite(log_p):
        raise NumericError("target has zero probability under the posteriors")

    out = _node(np.asarray(-log_p), (log_posteriors,), None)

    def bw():
        if not log_posteriors.requires_grad:
            return
        beta = _backward_betas(lp, ext)
        gamma = alpha + beta  # [T, S] log prob of paths through each state
        grad = np.zeros_like(lp)
        ext_arr = np.asarray(ext)
        for v in set(ext):
            mask = ext_arr == v
            occ = np.logaddexp.reduce(gamma[:, mask], axis=1)
            grad[:, v] = -np.exp(occ - log_p)
        _accum(log_posteriors, grad * out.grad)

    out._backward = bw
    return out


def ctc_path_probability(log_posteriors: np.ndarray, target: Sequence[int]) -> float:
    """Total probability of the target (forward DP), in linear space."""
    lp = np.asarray(log_posteriors, dtype=np.float64)
    target = _check_target(target, lp.shape[1])
    if min_frames(target) > lp.shape[0]:
        return 0.0
    ext = _extended(target)
    alpha = _forward_alphas(lp, ext)
    tail = alpha[-1, -1]
    if len(ext) > 1:
        tail = np.logaddexp(tail, alpha[-1, -2])
    return float(np.exp(tail))


def ctc_brute_force(log_posteriors: np.ndarray, target: Sequence[int]) -> float:
    """Oracle: sum path probabilities by enumerating all V^T frame paths."""
    lp = np.asarray(log_posteriors, dtype=np.float64)
    t_frames, vocab = lp.shape
    if t_frames > _BRUTE_MAX_T or vocab > _BRUTE_MAX_V:
        raise OracleTooLargeError(
            f"brute force limited to T <= {_BRUTE_MAX_T}, V <= {_BRUTE_MAX_V}"
        )
    target = [int(t) for t in target]
    total = 0.0
    for path in product(range(vocab), repeat=t_frames):
        if collapse(path) == target:
            total += float(np.exp(sum(lp[t, sym] for t, sym in enumerate(path))))
    return total


def ctc_greedy_decode(log_posteriors: np.ndarray) -> list[int]:
    """Best-path decoding: frame argmax, merge repeats, strip blanks.

    Ties break toward the lower class index (argmax convention).
    """
    lp = np.asarray(log_posteriors, dtype=np.float64)
    if lp.ndim != 2:
        raise ShapeError(f"log posteriors must be [T, V], got {lp.shape}")
    return collapse(np.argmax(lp, axis=1))
