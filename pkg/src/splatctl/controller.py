"""Density-control policies and shared structural operators.

Two selection policies over a population of splats:

  * baseline — per-primitive running mean of gradient norms over the
    densification window; selects wherever the mean exceeds a fixed
    threshold tau_pos. Norm accumulation ignores sign, so zero-mean noise
    does not cancel: the statistic is floored at the noise magnitude, which
    is exactly the dilemma the momentum-gated policy removes.
  * cadam — selects on the intersection of a population-quantile test on the
    bias-corrected momentum norm (dynamic threshold, top (1-tau_Q) fraction)
    and an intrinsic-SNR test (coherence above tau_SNR). Both inequalities
    are strict, so a degenerate all-equal population selects nothing.

Shared structural operators: split (replace an over-scale primitive with two
children sampled from its own footprint), clone (exact copy), prune (opacity
floor / scale ceiling), and the two opacity-reset flavors (selective by SNR
for cadam, global min-clamp for the baseline arm).

Structural application is single-writer and ordered by id; populations carry
their rows in id order, so row order is deterministic given the event
history. Every structural operator returns a `carry` index vector mapping new
rows to surviving old rows (-1 for freshly created children) so callers can
reindex any per-primitive side state (moments, optimizer slots) in one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError
from .moments import MomentConfig, MomentState, intrinsic_snr, momentum_norms
from .primitives import Population


@dataclass
class ControllerConfig:
    tau_Q: float = 0.9  # quantile level for the momentum-norm gate
    tau_SNR: float = 0.1  # intrinsic-SNR gate
    tau_pos: float = 0.015  # baseline fixed threshold on the windowed mean norm
    tau_m: float = 0.001  # momentum_only ablation: fixed momentum-norm threshold
    tau_scale: float = 0.0075  # split when scale exceeds this, else clone
    densify_interval: int = 100  # K, steps between densification calls
    prune_opacity: float = 0.005  # opacity floor
    prune_scale_max: float = 0.5  # scale ceiling
    reset_interval: int = 3000  # opacity-reset cadence (steps)
    warmup_steps: int = 500  # no resets before this step
    max_primitives: int = 200_000  # growth cap standing in for OOM
    split_factor: float = 1.6  # child scale divisor

    def __post_init__(self):
        if not (0.0 < self.tau_Q < 1.0):
            raise ValueError("tau_Q must lie in (0, 1)")
        for name in ("tau_SNR", "tau_pos", "tau_m", "tau_scale", "split_factor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.densify_interval < 1 or self.reset_interval < 1:
            raise ValueError("intervals must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")


@dataclass
class BaselineState:
    """Running sum of gradient norms + contribution count, per primitive."""

    accum_norm: np.ndarray  # (N,) float64, sum of ||g||_2 since last call
    accum_count: np.ndarray  # (N,) int64


def fresh_baseline(n: int) -> BaselineState:
    return BaselineState(np.zeros(n), np.zeros(n, np.int64))


def carry_baseline(state: BaselineState, carry: np.ndarray) -> BaselineState:
    out = fresh_baseline(carry.shape[0])
    keep = carry >= 0
    out.accum_norm[keep] = state.accum_norm[carry[keep]]
    out.accum_count[keep] = state.accum_count[carry[keep]]
    return out


def baseline_accumulate(state: BaselineState, grads: np.ndarray) -> BaselineState:
    """accum_norm += ||g_i||_2, accum_count += 1 (norms ignore sign)."""
    grads = np.asarray(grads, np.float64)
    if grads.shape[0] != state.accum_norm.shape[0]:
        raise AlignmentError(
            f"{grads.shape[0]} gradients for {state.accum_norm.shape[0]} accumulators"
        )
    return BaselineState(
        state.accum_norm + np.linalg.norm(grads, axis=-1),
        state.accum_count + 1,
    )


def baseline_select(state: BaselineState, cfg: ControllerConfig):
    """Mask where the windowed mean norm exceeds tau_pos; state then resets.

    Primitives with fewer than a full window of contributions (younger than
    K) are excluded this round. Returns (mask, fresh state).
    """
    n = state.accum_norm.shape[0]
    eligible = state.accum_count >= cfg.densify_interval
    mean = np.zeros(n)
    nonzero = state.accum_count > 0
    mean[nonzero] = state.accum_norm[nonzero] / state.accum_count[nonzero]
    mask = eligible & (mean > cfg.tau_pos)
    return mask, fresh_baseline(n)


def population_quantile(values: np.ndarray, q: float) -> float:
    """Linear interpolation between closest order statistics (numpy default)."""
    return float(np.quantile(values, q, method="linear"))


@dataclass
class ControllerDecision:
    """Record of one densification round over the then-live ids."""

    ids: np.ndarray  # live ids at selection time
    densify_mask: np.ndarray  # (N,) bool
    split_mask: np.ndarray  # (N,) bool, subset of densify_mask
    clone_mask: np.ndarray  # (N,) bool, densify_mask minus split_mask
    reset_mask: np.ndarray  # (N,) bool, resets applied at this step
    pruned_ids: np.ndarray  # ids removed by prune this round
    quantile_value: float  # realized momentum-norm threshold (nan if unused)
    snr_values: np.ndarray  # per-primitive SNR at decision time (nan if unused)
    cap_hit: bool = False  # growth cap reached during application


def cadam_select(
    state: MomentState,
    ages: np.ndarray,
    cfg: ControllerConfig,
    mcfg: MomentConfig,
):
    """Intersection gate: ||m_hat|| above the population quantile AND SNR
    above tau_SNR, both strict. Primitives younger than K are excluded from
    the mask; the quantile remains a statistic of the full live population.

    Returns (mask, quantile_value, snr_values, momentum_norm_values).
    """
    norms = momentum_norms(state, mcfg)
    snr = intrinsic_snr(state, mcfg)
    q_value = population_quantile(norms, cfg.tau_Q)
    mask = (norms > q_value) & (snr > cfg.tau_SNR) & (ages >= cfg.densify_interval)
    return mask, q_value, snr, norms


def momentum_only_select(
    state: MomentState,
    ages: np.ndarray,
    cfg: ControllerConfig,
    mcfg: MomentConfig,
):
    """Ablation: fixed threshold on ||m_hat||, no quantile, no SNR gate."""
    norms = momentum_norms(state, mcfg)
    snr = intrinsic_snr(state, mcfg)
    mask = (norms > cfg.tau_m) & (ages >= cfg.densify_interval)
    return mask, float("nan"), snr, norms


def decide_actions(densify_mask: np.ndarray, pop: Population, cfg: ControllerConfig):
    """Partition the selection: split if scale strictly exceeds tau_scale,
    else clone (a scale exactly at the threshold clones)."""
    split_mask = densify_mask & (pop.scales > cfg.tau_scale)
    clone_mask = densify_mask & ~(pop.scales > cfg.tau_scale)
    return split_mask, clone_mask


def _growth_budget(pop: Population, cfg: ControllerConfig | None) -> int:
    if cfg is None:
        return np.iinfo(np.int64).max
    return max(0, cfg.max_primitives - pop.count)


def apply_split(
    pop: Population,
    mask: np.ndarray,
    rng: np.random.Generator,
    cfg: ControllerConfig | None = None,
):
    """Replace each masked parent with two children.

    Child positions are sampled from the parent's own Gaussian footprint
    (seeded generator, consumed in id order); child scale = parent scale /
    split_factor; child opacity = parent opacity; child age = 0; side state
    starts fresh (carry = -1). Each split grows the population by one net
    primitive; splits beyond the growth cap are skipped deterministically in
    id order and reported via cap_hit.

    Returns (population, carry, n_split, cap_hit).
    """
    rows = np.flatnonzero(mask)
    budget = _growth_budget(pop, cfg)
    cap_hit = rows.shape[0] > budget
    rows = rows[:budget]
    k = rows.shape[0]
    if k == 0:
        carry = np.arange(pop.count, dtype=np.int64)
        return pop, carry, 0, cap_hit

    noise = rng.standard_normal((k, 2, 2))
    child_pos = pop.positions[rows, None, :] + noise * pop.scales[rows, None, None]
    child_scale = np.repeat(pop.scales[rows] / (cfg.split_factor if cfg else 1.6), 2)
    child_opacity = np.repeat(pop.opacities[rows], 2)

    keep = np.ones(pop.count, bool)
    keep[rows] = False
    keep_rows = np.flatnonzero(keep)
    new_ids = pop.next_id + np.arange(2 * k, dtype=np.int64)
    out = Population(
        ids=np.concatenate([pop.ids[keep_rows], new_ids]),
        positions=np.concatenate([pop.positions[keep_rows], child_pos.reshape(-1, 2)]),
        scales=np.concatenate([pop.scales[keep_rows], child_scale]),
        opacities=np.concatenate([pop.opacities[keep_rows], child_opacity]),
        ages=np.concatenate([pop.ages[keep_rows], np.zeros(2 * k, np.int64)]),
        next_id=pop.next_id + 2 * k,
    )
    carry = np.concatenate([keep_rows, np.full(2 * k, -1, np.int64)])
    return out, carry, k, cap_hit


def apply_clone(
    pop: Population,
    mask: np.ndarray,
    cfg: ControllerConfig | None = None,
):
    """Append one exact copy per masked primitive (same position, scale,
    opacity); copies start at age 0 with fresh side state, originals keep
    theirs. Clones beyond the growth cap are skipped in id order.

    Returns (population, carry, n_cloned, cap_hit).
    """
    rows = np.flatnonzero(mask)
    budget = _growth_budget(pop, cfg)
    cap_hit = rows.shape[0] > budget
    rows = rows[:budget]
    k = rows.shape[0]
    if k == 0:
        carry = np.arange(pop.count, dtype=np.int64)
        return pop, carry, 0, cap_hit

    new_ids = pop.next_id + np.arange(k, dtype=np.int64)
    out = Population(
        ids=np.concatenate([pop.ids, new_ids]),
        positions=np.concatenate([pop.positions, pop.positions[rows]]),
        scales=np.concatenate([pop.scales, pop.scales[rows]]),
        opacities=np.concatenate([pop.opacities, pop.opacities[rows]]),
        ages=np.concatenate([pop.ages, np.zeros(k, np.int64)]),
        next_id=pop.next_id + k,
    )
    carry = np.concatenate([np.arange(pop.count, dtype=np.int64), np.full(k, -1, np.int64)])
    return out, carry, k, cap_hit


def prune(pop: Population, cfg: ControllerConfig):
    """Remove primitives with opacity below the floor or scale above the
    ceiling. Returns (population, carry, pruned_ids)."""
    remove = (pop.opacities < cfg.prune_opacity) | (pop.scales > cfg.prune_scale_max)
    keep_rows = np.flatnonzero(~remove)
    pruned_ids = pop.ids[remove].copy()
    if pruned_ids.shape[0] == 0:
        return pop, np.arange(pop.count, dtype=np.int64), pruned_ids
    out = Population(
        ids=pop.ids[keep_rows],
        positions=pop.positions[keep_rows],
        scales=pop.scales[keep_rows],
        opacities=pop.opacities[keep_rows],
        ages=pop.ages[keep_rows],
        next_id=pop.next_id,
    )
    return out, keep_rows.astype(np.int64), pruned_ids


def selective_opacity_reset(
    pop: Population,
    state: MomentState,
    cfg: ControllerConfig,
    mcfg: MomentConfig,
    step: int,
):
    """Set opacity to 0.01 exactly where SNR < tau_SNR; geometry and moment
    history of every primitive stay untouched. No-op before warmup. Mutates
    opacities in place and returns the reset mask."""
    n = pop.count
    if step < cfg.warmup_steps or n == 0:
        return np.zeros(n, bool)
    mask = np.zeros(n, bool)
    seen = np.asarray(state.steps) >= 1
    if seen.any():
        snr = np.full(n, np.inf)
        sub = MomentState(state.m[seen], state.v[seen], state.steps[seen])
        snr[seen] = intrinsic_snr(sub, mcfg)
        mask = snr < cfg.tau_SNR
    pop.opacities[mask] = 0.01
    return mask


def global_opacity_reset(pop: Population, cfg: ControllerConfig, step: int) -> np.ndarray:
    """Clamp every opacity to at most 0.01 (standard periodic reset, baseline
    arm). Mutates in place; returns the mask of opacities that changed."""
    mask = pop.opacities > 0.01
    np.minimum(pop.opacities, 0.01, out=pop.opacities)
    return mask
