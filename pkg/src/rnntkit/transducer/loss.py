"""Transducer loss: log-domain forward DP, exhaustive-enumeration oracle, and
the analytic alpha/beta occupancy gradient with respect to the joint logits."""

from __future__ import annotations

import itertools
from bisect import bisect_right

import numpy as np

from ..errors import ContractError
from ..numcore import log_sum_exp
from .model import PosteriorLattice

MAX_BRUTEFORCE_SIZE = 12  # T+U bound keeping the path count enumerable


def _validated(lattice: PosteriorLattice, target, blank_id: int):
    y = [int(t) for t in target]
    K = lattice.num_labels
    if len(y) != lattice.target_len:
        raise ContractError(
            f"target length {len(y)} != lattice target length {lattice.target_len}"
        )
    if not 0 <= blank_id < K:
        raise ContractError(f"blank id {blank_id} out of range for {K} labels")
    for t in y:
        if t == blank_id:
            raise ContractError("blank id is not a valid target label")
        if not 0 <= t < K:
            raise ContractError(f"target id {t} out of range for {K} labels")
    with np.errstate(divide="ignore"):
        lp = np.log(lattice.probs)
    return lp, y


def _forward(lp: np.ndarray, y: list[int], blank_id: int) -> np.ndarray:
    """alpha[t,u]: log prob of consuming t frames and u labels, arriving at (t,u)."""
    T, U = lp.shape[0], len(y)
    alpha = np.full((T, U + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            from_blank = alpha[t - 1, u] + lp[t - 1, u, blank_id] if t > 0 else -np.inf
            from_label = alpha[t, u - 1] + lp[t, u - 1, y[u - 1]] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(from_blank, from_label)
    return alpha


def _backward(lp: np.ndarray, y: list[int], blank_id: int) -> np.ndarray:
    """beta[t,u]: log prob of completing the path from (t,u); beta[T,U]=0 pad row."""
    T, U = lp.shape[0], len(y)
    beta = np.full((T + 1, U + 1), -np.inf)
    beta[T, U] = 0.0
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            stay = lp[t, u, blank_id] + beta[t + 1, u]
            emit = lp[t, u, y[u]] + beta[t, u + 1] if u < U else -np.inf
            beta[t, u] = np.logaddexp(stay, emit)
    return beta


def rnnt_loss(lattice: PosteriorLattice, target, blank_id: int = 0) -> float:
    """Negative log probability of the target label sequence.

    The probability sums over every alignment: U label emissions interleaved
    with T blank frame-advances, the last frame ending on blank. With no
    frames but a nonempty target there is no alignment, reported as +inf.
    """
    lp, y = _validated(lattice, target, blank_id)
    T, U = lattice.num_frames, len(y)
    if T == 0:
        return float("inf") if U > 0 else 0.0
    alpha = _forward(lp, y, blank_id)
    return float(-(alpha[T - 1, U] + lp[T - 1, U, blank_id]))


def enumerate_alignments(num_frames: int, target_len: int):
    """All alignments as non-decreasing tuples of label emission frames.

    Yields C(T+U-1, U) tuples; the frame at position u is where label u is
    emitted after u earlier labels.
    """
    return itertools.combinations_with_replacement(range(num_frames), target_len)


def rnnt_loss_bruteforce(lattice: PosteriorLattice, target, blank_id: int = 0) -> float:
    """Oracle for rnnt_loss: sum explicit path probabilities over all alignments."""
    lp, y = _validated(lattice, target, blank_id)
    T, U = lattice.num_frames, len(y)
    if T + U > MAX_BRUTEFORCE_SIZE:
        raise ContractError(f"instance too large for enumeration: T+U={T + U}")
    if T == 0:
        return float("inf") if U > 0 else 0.0
    path_logps = []
    for frames in enumerate_alignments(T, U):
        logp = 0.0
        for u, t in enumerate(frames):
            logp += lp[t, u, y[u]]
        for t in range(T):
            consumed = bisect_right(frames, t)
            logp += lp[t, consumed, blank_id]
        path_logps.append(logp)
    return -log_sum_exp(path_logps)


def rnnt_grad(lattice: PosteriorLattice, target, blank_id: int = 0) -> np.ndarray:
    """Gradient of rnnt_loss with respect to the logits behind the lattice.

    Standard occupancy form: the gradient to log P(k|t,u) is minus the
    posterior mass of paths taking transition k at node (t,u); pushing through
    the softmax gives grad[k] = g_k - P_k * sum_j g_j, which sums to zero over
    each (t,u) slice. When no alignment has positive probability the loss is
    flat at +inf and the gradient is reported as all zeros.
    """
    lp, y = _validated(lattice, target, blank_id)
    T, U, K = lattice.num_frames, len(y), lattice.num_labels
    if T == 0:
        return np.zeros((0, U + 1, K))
    alpha = _forward(lp, y, blank_id)
    beta = _backward(lp, y, blank_id)
    log_z = beta[0, 0]
    if not np.isfinite(log_z):
        return np.zeros((T, U + 1, K))
    g = np.zeros((T, U + 1, K))
    for t in range(T):
        for u in range(U + 1):
            g[t, u, blank_id] = -np.exp(alpha[t, u] + lp[t, u, blank_id] + beta[t + 1, u] - log_z)
            if u < U:
                g[t, u, y[u]] = -np.exp(alpha[t, u] + lp[t, u, y[u]] + beta[t, u + 1] - log_z)
    return g - lattice.probs * g.sum(axis=2, keepdims=True)
