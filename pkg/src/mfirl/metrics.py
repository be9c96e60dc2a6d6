"""Deviation metrics between an expert equilibrium and a learned one.

Every KL here uses natural logarithms and ``0 * log(0 / q) = 0``. The raw
variants return ``inf`` when the second argument misses mass that the first
has; the smoothed variants first add ``SMOOTHING`` to every entry and
renormalise.
"""

from __future__ import annotations

import numpy as np

from .core import InvalidArgumentError

SMOOTHING = 1e-8


def smooth(p: np.ndarray, eps: float = SMOOTHING) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64) + eps
    return p / p.sum(axis=-1, keepdims=True)


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) along the last axis."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def dev_mf(expert_flow: np.ndarray, learned_flow: np.ndarray, smoothed: bool = False) -> float:
    """Sum over steps ``t >= 1`` of ``KL(expert_t || learned_t)``."""
    e, l = np.asarray(expert_flow), np.asarray(learned_flow)
    if e.shape != l.shape:
        raise InvalidArgumentError(f"flow shapes differ: {e.shape} vs {l.shape}")
    if smoothed:
        e, l = smooth(e), smooth(l)
    return float(kl_rows(e[1:], l[1:]).sum())


def dev_policy(
    expert_policy: np.ndarray, learned_policy: np.ndarray, expert_flow: np.ndarray, smoothed: bool = False
) -> float:
    """Expert-state-weighted sum of per-state policy KLs over all steps."""
    e, l, w = np.asarray(expert_policy), np.asarray(learned_policy), np.asarray(expert_flow)
    if e.shape != l.shape or e.shape[:2] != w.shape:
        raise InvalidArgumentError(f"shape mismatch: {e.shape}, {l.shape}, weights {w.shape}")
    if smoothed:
        e, l = smooth(e), smooth(l)
    per_state = kl_rows(e, l)
    # states the expert never occupies carry no weight, even if their KL is infinite
    with np.errstate(invalid="ignore"):
        return float(np.where(w > 0, w * per_state, 0.0).sum())
