"""Per-primitive streaming gradient statistics.

First moment (EMA of positional gradients), second raw moment (EMA of
element-wise squared gradients), and an age-based bias correction where each
primitive's own update count plays the role of t. The corrected moments feed
the intrinsic SNR

    SNR = ||m_hat||_2 / (sqrt(||v_hat||_1) + eps)

which is ~1 for a perfectly coherent gradient stream (the EMA of a constant
recovers the constant, so numerator and denominator agree) and small when
zero-mean noise cancels in m while its power persists in v.

These statistics verify signal coherence only; parameter updates are the
optimizer's job (toysplat), and the gradients fed here are the raw per-step
positional gradients, independent of optimizer internals.

State is stored struct-of-arrays: all operations accept either a single state
(m, v shape (2,), integer steps) or a batch (m, v shape (N, 2), steps shape
(N,)). All operations are pure per-primitive transforms — no cross-primitive
reduction — so batch evaluation order cannot change results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, PoisonedGradientError, UndefinedCorrectionError


@dataclass
class MomentConfig:
    beta1: float = 0.9  # first-moment decay
    beta2: float = 0.999  # second-moment decay
    epsilon: float = 1e-8  # SNR denominator guard

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be > 0")


@dataclass
class MomentState:
    """m, v: (..., 2) float64; steps: int or (...,) int64 update count."""

    m: np.ndarray
    v: np.ndarray
    steps: np.ndarray

    def row(self, i: int) -> "MomentState":
        return MomentState(self.m[i].copy(), self.v[i].copy(), self.steps[i].copy())


def fresh_state(n: int | None = None) -> MomentState:
    """Zeroed state: single when n is None, else a batch of n."""
    if n is None:
        return MomentState(np.zeros(2), np.zeros(2), np.int64(0))
    return MomentState(np.zeros((n, 2)), np.zeros((n, 2)), np.zeros(n, np.int64))


def update(state: MomentState, g: np.ndarray, cfg: MomentConfig) -> MomentState:
    """One EMA step: m' = b1 m + (1-b1) g;  v' = b2 v + (1-b2) g*g."""
    g = np.asarray(g, np.float64)
    if not np.all(np.isfinite(g)):
        raise PoisonedGradientError(f"non-finite gradient {g!r}")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    return MomentState(m, v, state.steps + 1)


def poisoned_mask(grads: np.ndarray) -> np.ndarray:
    """(N,) bool: rows whose gradient has any non-finite component."""
    return ~np.all(np.isfinite(grads), axis=-1)


def batch_update(state: MomentState, grads: np.ndarray, cfg: MomentConfig) -> MomentState:
    """Element-wise update over a batch, aligned by row.

    Rows with non-finite gradients are flagged-and-skipped: their (m, v,
    steps) pass through unchanged, matching the single-state op's
    rejected-gradient contract without aborting the batch.
    """
    grads = np.asarray(grads, np.float64)
    if grads.shape != state.m.shape:
        raise AlignmentError(
            f"gradient batch shape {grads.shape} != state shape {state.m.shape}"
        )
    if np.isfinite(grads.sum()):
        # a finite sum proves every component finite (no poison): fused path.
        # (overflow of the sum itself just routes to the masked path below.)
        m = state.m * cfg.beta1
        m += (1.0 - cfg.beta1) * grads
        v = grads * grads
        v *= 1.0 - cfg.beta2
        v += cfg.beta2 * state.v
        return MomentState(m, v, state.steps + 1)
    bad = poisoned_mask(grads)
    grads = np.where(bad[..., None], 0.0, grads)
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    steps = state.steps + 1
    m = np.where(bad[..., None], state.m, m)
    v = np.where(bad[..., None], state.v, v)
    steps = np.where(bad, state.steps, steps)
    return MomentState(m, v, steps)


def bias_corrected(state: MomentState, cfg: MomentConfig):
    """(m_hat, v_hat) = (m, v) / (1 - beta^steps), steps per primitive."""
    steps = np.asarray(state.steps)
    if np.any(steps < 1):
        raise UndefinedCorrectionError("bias correction queried at steps = 0")
    denom1 = 1.0 - np.power(cfg.beta1, steps.astype(np.float64))
    denom2 = 1.0 - np.power(cfg.beta2, steps.astype(np.float64))
    m_hat = state.m / denom1[..., None] if state.m.ndim == 2 else state.m / denom1
    v_hat = state.v / denom2[..., None] if state.v.ndim == 2 else state.v / denom2
    return m_hat, v_hat


def momentum_norms(state: MomentState, cfg: MomentConfig) -> np.ndarray:
    """||m_hat||_2 per primitive (scalar for a single state)."""
    m_hat, _ = bias_corrected(state, cfg)
    return np.linalg.norm(m_hat, axis=-1)


def intrinsic_snr(state: MomentState, cfg: MomentConfig) -> np.ndarray:
    """||m_hat||_2 / (sqrt(||v_hat||_1) + eps), in [0, ~1] for consistent moments."""
    m_hat, v_hat = bias_corrected(state, cfg)
    num = np.linalg.norm(m_hat, axis=-1)
    den = np.sqrt(np.sum(v_hat, axis=-1)) + cfg.epsilon
    return num / den


def carry_state(state: MomentState, carry: np.ndarray) -> MomentState:
    """Reindex a batch after structural changes.

    carry: (N_new,) int64; carry[k] >= 0 copies old row carry[k], carry[k] < 0
    yields a fresh zero state (new children start with no history).
    """
    n = carry.shape[0]
    out = fresh_state(n)
    keep = carry >= 0
    src = carry[keep]
    out.m[keep] = state.m[src]
    out.v[keep] = state.v[src]
    out.steps[keep] = state.steps[src]
    return out
