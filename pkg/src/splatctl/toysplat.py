"""Differentiable 2D additive Gaussian splatting on the unit square.

Rendering: I(p) = sum_i alpha_i * exp(-||p - mu_i||^2 / (2 s_i^2)) at pixel
centers p = ((col+0.5)/W, (row+0.5)/H); loss is plain MSE against a target
grid with analytic gradients for position, scale, and opacity (formulas in
`kernels`). Two backends compute the same math: "windowed" (sequential numba
kernels, footprints truncated at cutoff_sigmas) and "dense" (untruncated
numpy reference used as a test oracle and for tiny populations).

Supervision: `TargetModel` generates per-step pseudo-targets. In
"reconstruction" mode the target is the clean reference every step. In
"generative" mode each step draws reference + noise_sigma * (i.i.d. standard
normal field) — deliberately unclipped so the noise stays zero-mean — plus a
lognormal gradient-scale multiplier lambda_t (sigma_ln =
magnitude_jitter_sigma) that models the heavy-tailed per-step weighting of
distillation-style supervision. An optional small random affine jitter of the
reference (translation + rotation) stands in for per-step view randomness.

Parameter updates use a standard per-primitive adaptive optimizer (Adam-style
moments in transformed coordinates: raw position, log scale, logit opacity),
entirely separate from the densification statistics in `moments`. Gradients
handed to density control are always the raw positional gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigurationError
from .kernels import backward_kernel, forward_kernel
from .primitives import Population, write_bytes

REFERENCE_SHAPES = ("disk", "ring", "two-bar", "checker-corner")


# ---------------------------------------------------------------------------
# rendering and gradients


@dataclass
class SplatGrads:
    """Analytic MSE gradients, aligned to population rows."""

    pos: np.ndarray  # (N, 2)
    scale: np.ndarray  # (N,)
    opacity: np.ndarray  # (N,)

    def scaled(self, factor: float) -> "SplatGrads":
        return SplatGrads(self.pos * factor, self.scale * factor, self.opacity * factor)


def render(
    pop: Population,
    shape: tuple[int, int] = (64, 64),
    cutoff_sigmas: float = 6.0,
    backend: str = "windowed",
) -> np.ndarray:
    """Additive splat render at pixel centers; returns an (H, W) float grid."""
    H, W = shape
    if backend == "windowed":
        out = np.zeros((H, W))
        if pop.count:
            forward_kernel(pop.positions, pop.scales, pop.opacities, H, W, cutoff_sigmas, out)
        return out
    if backend == "dense":
        return _render_dense(pop, H, W)
    raise ConfigurationError(f"unknown render backend {backend!r}")


def _pixel_centers(H: int, W: int):
    xs = (np.arange(W) + 0.5) / W
    ys = (np.arange(H) + 0.5) / H
    return xs, ys


def _render_dense(pop: Population, H: int, W: int) -> np.ndarray:
    xs, ys = _pixel_centers(H, W)
    out = np.zeros((H, W))
    for i in range(pop.count):
        dx = xs[None, :] - pop.positions[i, 0]
        dy = ys[:, None] - pop.positions[i, 1]
        d2 = dx * dx + dy * dy
        out += pop.opacities[i] * np.exp(-d2 / (2.0 * pop.scales[i] ** 2))
    return out


def loss_and_grads(
    pop: Population,
    target: np.ndarray,
    cutoff_sigmas: float = 6.0,
    backend: str = "windowed",
):
    """MSE loss against `target` and its analytic gradients.

    Returns (loss, SplatGrads). See loss_grads_render for the variant that
    also hands back the rendered image (one forward pass, not two).
    """
    loss, grads, _ = loss_grads_render(pop, target, cutoff_sigmas, backend)
    return loss, grads


def loss_grads_render(
    pop: Population,
    target: np.ndarray,
    cutoff_sigmas: float = 6.0,
    backend: str = "windowed",
):
    """(loss, SplatGrads, rendered image) in one forward+backward pass."""
    target = np.asarray(target, np.float64)
    H, W = target.shape
    image = render(pop, (H, W), cutoff_sigmas, backend)
    residual = image - target
    loss = float(np.mean(residual * residual))
    n = pop.count
    grads = SplatGrads(np.zeros((n, 2)), np.zeros(n), np.zeros(n))
    if n == 0:
        return loss, grads, image
    R2 = residual * (2.0 / (H * W))
    if backend == "windowed":
        backward_kernel(
            pop.positions, pop.scales, pop.opacities, R2, cutoff_sigmas,
            grads.pos, grads.scale, grads.opacity,
        )
    else:
        _backward_dense(pop, R2, grads)
    return loss, grads, image


def _backward_dense(pop: Population, R2: np.ndarray, grads: SplatGrads) -> None:
    H, W = R2.shape
    xs, ys = _pixel_centers(H, W)
    for i in range(pop.count):
        s = pop.scales[i]
        a = pop.opacities[i]
        dx = xs[None, :] - pop.positions[i, 0]
        dy = ys[:, None] - pop.positions[i, 1]
        d2 = dx * dx + dy * dy
        e = np.exp(-d2 / (2.0 * s * s))
        common = R2 * e
        grads.opacity[i] = common.sum()
        grads.pos[i, 0] = (common * dx).sum() * a / (s * s)
        grads.pos[i, 1] = (common * dy).sum() * a / (s * s)
        grads.scale[i] = (common * d2).sum() * a / (s ** 3)


# ---------------------------------------------------------------------------
# supervision


@dataclass
class TargetModel:
    """Stochastic pseudo-target generator standing in for distillation-style
    supervision: clean reference for evaluation, noisy draws for training."""

    reference: np.ndarray  # (H, W) in [0, 1]
    noise_sigma: float = 0.2  # per-pixel pseudo-target noise std
    magnitude_jitter_sigma: float = 1.5  # sigma_ln of lognormal lambda_t
    view_jitter: float = 0.0  # affine perturbation amplitude (0 = off)
    mode: str = "generative"  # or "reconstruction"

    def __post_init__(self):
        ref = np.asarray(self.reference, np.float64)
        if ref.ndim != 2:
            raise ConfigurationError("reference must be a 2D grayscale image")
        if ref.min() < 0.0 or ref.max() > 1.0:
            raise ConfigurationError("reference pixels must lie in [0, 1]")
        if self.noise_sigma < 0 or self.magnitude_jitter_sigma < 0 or self.view_jitter < 0:
            raise ConfigurationError("noise amplitudes must be non-negative")
        if self.mode not in ("generative", "reconstruction"):
            raise ConfigurationError(f"unknown supervision mode {self.mode!r}")
        self.reference = ref


def _affine_resample(ref: np.ndarray, dx: float, dy: float, theta: float) -> np.ndarray:
    """Bilinear resample of `ref` under a small rotation about the center
    plus a translation, edge-clamped."""
    H, W = ref.shape
    xs, ys = _pixel_centers(H, W)
    X, Y = np.meshgrid(xs, ys)
    c, s = np.cos(theta), np.sin(theta)
    # inverse map: rotate by -theta about (0.5, 0.5), then shift by -d
    xr = c * (X - 0.5) + s * (Y - 0.5) + 0.5 - dx
    yr = -s * (X - 0.5) + c * (Y - 0.5) + 0.5 - dy
    fx = np.clip(xr * W - 0.5, 0.0, W - 1.0)
    fy = np.clip(yr * H - 0.5, 0.0, H - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = fx - x0
    wy = fy - y0
    top = ref[y0, x0] * (1 - wx) + ref[y0, x1] * wx
    bot = ref[y1, x0] * (1 - wx) + ref[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def sample_pseudo_target(model: TargetModel, step: int, rng: np.random.Generator):
    """Draw the step's supervision target and gradient-scale multiplier.

    Returns (target image, lambda_t). Reconstruction mode: (reference, 1.0).
    Generative mode: reference (optionally affine-jittered) plus
    noise_sigma * eta with eta a fresh i.i.d. standard-normal field, left
    unclipped so E[target] stays exactly the reference; lambda_t is lognormal
    with log-std magnitude_jitter_sigma. Draw order (jitter, field, lambda)
    is fixed for determinism.
    """
    if model.mode == "reconstruction":
        return model.reference, 1.0
    ref = model.reference
    if model.view_jitter > 0.0:
        a = model.view_jitter
        dx, dy, theta = rng.uniform(-a, a, size=3)
        ref = _affine_resample(ref, dx, dy, theta)
    target = ref
    if model.noise_sigma > 0.0:
        target = ref + model.noise_sigma * rng.standard_normal(ref.shape)
    lam = 1.0
    if model.magnitude_jitter_sigma > 0.0:
        lam = float(np.exp(model.magnitude_jitter_sigma * rng.standard_normal()))
    return target, lam


# ---------------------------------------------------------------------------
# reference shapes


def _radial(H: int, W: int):
    xs, ys = _pixel_centers(H, W)
    X, Y = np.meshgrid(xs, ys)
    return np.hypot(X - 0.5, Y - 0.5), X, Y


def reference_shape(name: str, H: int = 64, W: int = 64) -> np.ndarray:
    """Procedural reference images: coarse blob, thin structure, bars, and
    sharp-edged quadrants. Values in [0, 1]; smooth ~1.5px edges except the
    deliberately hard-edged checker. The ring band is deliberately narrow,
    so a starved population cannot trace it while a refined one can."""
    aa = 1.5 / W
    if name == "disk":
        d, _, _ = _radial(H, W)
        return np.clip((0.25 - d) / aa + 0.5, 0.0, 1.0)
    if name == "ring":
        d, _, _ = _radial(H, W)
        return np.clip((0.035 - np.abs(d - 0.32)) / aa + 0.5, 0.0, 1.0)
    if name == "two-bar":
        _, X, Y = _radial(H, W)
        inside_y = np.clip((0.3 - np.abs(Y - 0.5)) / aa + 0.5, 0.0, 1.0)
        bar1 = np.clip((0.06 - np.abs(X - 0.28)) / aa + 0.5, 0.0, 1.0)
        bar2 = np.clip((0.06 - np.abs(X - 0.72)) / aa + 0.5, 0.0, 1.0)
        return np.clip(inside_y * (bar1 + bar2), 0.0, 1.0)
    if name == "checker-corner":
        _, X, Y = _radial(H, W)
        return np.where((X < 0.5) == (Y < 0.5), 1.0, 0.0)
    raise ConfigurationError(
        f"unknown reference shape {name!r}; expected one of {REFERENCE_SHAPES}"
    )


# ---------------------------------------------------------------------------
# PGM I/O (P5, 8-bit)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM with linear [0,1] -> [0,255] quantization."""
    img = np.asarray(image, np.float64)
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    H, W = img.shape
    write_bytes(path, f"P5\n{W} {H}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a float image in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed; pixel bytes follow the single whitespace after maxval.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise ConfigurationError(f"{path}: truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5":
        raise ConfigurationError(f"{path}: expected binary PGM (P5), got {magic!r}")
    if not (0 < maxval <= 255):
        raise ConfigurationError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    n = width * height
    raster = data[pos : pos + n]
    if len(raster) != n:
        raise ConfigurationError(f"{path}: expected {n} pixel bytes, got {len(raster)}")
    img = np.frombuffer(raster, np.uint8).reshape(height, width)
    return img.astype(np.float64) / float(maxval)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerConfig:
    lr_pos: float = 1e-3
    lr_pos_final_mult: float = 0.02  # exponential decay target by total_steps
    lr_scale: float = 1e-3
    lr_alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    """Adaptive-moment slots in transformed coordinates (x, y, log s, logit a)."""

    m: np.ndarray  # (N, 4)
    v: np.ndarray  # (N, 4)
    t: np.ndarray  # (N,) int64 per-primitive update count


def fresh_adam(n: int) -> AdamState:
    return AdamState(np.zeros((n, 4)), np.zeros((n, 4)), np.zeros(n, np.int64))


def carry_adam(state: AdamState, carry: np.ndarray) -> AdamState:
    out = fresh_adam(carry.shape[0])
    keep = carry >= 0
    src = carry[keep]
    out.m[keep] = state.m[src]
    out.v[keep] = state.v[src]
    out.t[keep] = state.t[src]
    return out


def position_lr(cfg: OptimizerConfig, step: int, total_steps: int) -> float:
    """Exponential decay from lr_pos to lr_pos * lr_pos_final_mult."""
    if total_steps <= 1 or cfg.lr_pos_final_mult == 1.0:
        return cfg.lr_pos
    frac = min(max(step / total_steps, 0.0), 1.0)
    return cfg.lr_pos * cfg.lr_pos_final_mult ** frac

_ALPHA_TINY = 1e-6  # keeps logit finite; opacity lives in (tiny, 1-tiny)


def optimizer_step(
    pop: Population,
    grads: SplatGrads,
    state: AdamState,
    cfg: OptimizerConfig,
    step: int,
    total_steps: int,
) -> None:
    """One adaptive step on (position, log scale, logit opacity), in place.

    Scale stays positive through the log parameterization and opacity inside
    (0, 1) through the logistic one; gradients are chain-ruled into the
    transformed coordinates. Zero gradients leave parameters exactly
    unchanged (the adaptive step is 0/(0+eps)).
    """
    n = pop.count
    if n == 0:
        return
    if grads.pos.shape[0] != n:
        raise AlignmentError(f"{grads.pos.shape[0]} gradients for {n} primitives")
    alpha = np.clip(pop.opacities, _ALPHA_TINY, 1.0 - _ALPHA_TINY)
    u = np.log(pop.scales)
    w = np.log(alpha) - np.log1p(-alpha)

    g = np.empty((n, 4))
    g[:, 0:2] = grads.pos
    g[:, 2] = grads.scale * pop.scales  # d/du = s * d/ds
    g[:, 3] = grads.opacity * alpha * (1.0 - alpha)  # d/dw

    state.t += 1
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * g
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * g * g
    tf = state.t.astype(np.float64)
    m_hat = state.m / (1.0 - np.power(cfg.beta1, tf))[:, None]
    v_hat = state.v / (1.0 - np.power(cfg.beta2, tf))[:, None]
    update = m_hat / (np.sqrt(v_hat) + cfg.epsilon)

    lr_p = position_lr(cfg, step, total_steps)
    pop.positions[:, 0] -= lr_p * update[:, 0]
    pop.positions[:, 1] -= lr_p * update[:, 1]
    du = cfg.lr_scale * update[:, 2]
    dw = cfg.lr_alpha * update[:, 3]
    # zero-delta rows skip the transform round-trip so they stay bit-identical
    pop.scales[:] = np.where(du == 0.0, pop.scales, np.exp(u - du))
    pop.opacities[:] = np.where(dw == 0.0, pop.opacities, 1.0 / (1.0 + np.exp(dw - w)))
