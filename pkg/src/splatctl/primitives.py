"""Population data model for isotropic 2D Gaussian primitives.

A primitive is (position in the unit square, isotropic scale, opacity, age).
The population is stored struct-of-arrays so per-step math stays vectorized;
`Primitive` is a convenience view over one row.

Invariants maintained here and checked by `audit`:
  * scale > 0 for every live primitive
  * opacity in [0, 1] for every live primitive
  * ids are unique across the full run history (monotone counter, never reused)
  * ages are non-negative

Serialization:
  * ASCII PLY (x, y, z=0, scale, opacity), values rendered as shortest
    round-trip float32 decimals — a viewer-compatible export, one way.
  * Versioned binary snapshot that round-trips bit-exactly and optionally
    carries the per-primitive moment statistics so runs can be resumed or
    re-exported post hoc. Fixed-width records; see SNAP_* constants.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ExportError

# Binary snapshot layout (little-endian):
#   header: magic (8s) | schema version (u32) | count (u32)
#   record: id (i64) | x | y | scale | opacity (f64) | age (i64)
#           | m0 | m1 | v0 | v1 (f64) | steps (i64)
SNAP_MAGIC = b"SPLATSNP"
SNAP_VERSION = 1
SNAP_HEADER = struct.Struct("<8sII")
SNAP_RECORD_DTYPE = np.dtype(
    [
        ("id", "<i8"),
        ("x", "<f8"),
        ("y", "<f8"),
        ("scale", "<f8"),
        ("opacity", "<f8"),
        ("age", "<i8"),
        ("m0", "<f8"),
        ("m1", "<f8"),
        ("v0", "<f8"),
        ("v1", "<f8"),
        ("steps", "<i8"),
    ]
)
SNAP_HEADER_BYTES = SNAP_HEADER.size
SNAP_RECORD_BYTES = SNAP_RECORD_DTYPE.itemsize  # 88


@dataclass
class Primitive:
    """One splat: read-only view used for inspection and tests."""

    id: int
    position: np.ndarray  # shape (2,)
    scale: float
    opacity: float
    age: int


@dataclass
class Population:
    """Struct-of-arrays population; single-writer (see module docstring)."""

    ids: np.ndarray  # (N,) int64, unique over run history
    positions: np.ndarray  # (N, 2) float64, scene units
    scales: np.ndarray  # (N,) float64, > 0
    opacities: np.ndarray  # (N,) float64, in [0, 1]
    ages: np.ndarray  # (N,) int64, steps since instantiation
    next_id: int = 0  # monotone id counter, never reused

    @property
    def count(self) -> int:
        return int(self.ids.shape[0])

    def primitive(self, row: int) -> Primitive:
        return Primitive(
            id=int(self.ids[row]),
            position=self.positions[row].copy(),
            scale=float(self.scales[row]),
            opacity=float(self.opacities[row]),
            age=int(self.ages[row]),
        )

    def __iter__(self):
        return (self.primitive(i) for i in range(self.count))


def empty_population() -> Population:
    return Population(
        ids=np.empty(0, np.int64),
        positions=np.empty((0, 2), np.float64),
        scales=np.empty(0, np.float64),
        opacities=np.empty(0, np.float64),
        ages=np.empty(0, np.int64),
        next_id=0,
    )


def spawn_initial(
    n: int,
    layout: str = "grid",
    seed: int = 0,
    initial_scale: float = 0.06,
    initial_opacity: float = 0.1,
    reference: np.ndarray | None = None,
) -> Population:
    """Create the starting population inside the unit square.

    layout "grid": centers of a ceil(sqrt(n)) x ceil(sqrt(n)) cell grid,
    row-major, first n cells (n=4 gives {0.25, 0.75}^2; n=1 the centroid).
    layout "uniform-random": i.i.d. uniform positions, seeded.
    layout "importance": positions sampled from the reference image's
    intensity mass with sub-pixel jitter (the toy analogue of initializing
    from a structure estimate rather than blind); requires `reference`.
    layout "stratified": importance draws relaxed by mass-weighted Lloyd
    iterations, giving blue-noise coverage whose local density tracks the
    reference mass; starts each primitive near its share of the target, so
    the early optimization transient is minimal. Requires `reference`.
    """
    if n < 1:
        raise ConfigurationError(f"initial population size must be >= 1, got {n}")
    if layout == "grid":
        g = int(np.ceil(np.sqrt(n)))
        cells = np.arange(g * g)
        rows, cols = cells[:n] // g, cells[:n] % g
        positions = np.stack([(cols + 0.5) / g, (rows + 0.5) / g], axis=1)
    elif layout == "uniform-random":
        rng = np.random.default_rng(seed)
        positions = rng.uniform(0.0, 1.0, size=(n, 2))
    elif layout in ("importance", "stratified"):
        if reference is None:
            raise ConfigurationError(f"layout {layout!r} requires a reference image")
        ref = np.asarray(reference, np.float64)
        mass = ref.ravel()
        total = mass.sum()
        if total <= 0.0:
            raise ConfigurationError(f"layout {layout!r} requires nonzero reference mass")
        rng = np.random.default_rng(seed)
        H, W = ref.shape
        flat = rng.choice(H * W, size=n, p=mass / total)
        jitter = rng.uniform(0.0, 1.0, size=(n, 2))
        positions = np.stack(
            [(flat % W + jitter[:, 0]) / W, (flat // W + jitter[:, 1]) / H], axis=1
        )
        if layout == "stratified":
            positions = _lloyd_relax(positions, ref, iterations=12)
    else:
        raise ConfigurationError(f"unknown layout {layout!r}")
    return Population(
        ids=np.arange(n, dtype=np.int64),
        positions=np.ascontiguousarray(positions, np.float64),
        scales=np.full(n, float(initial_scale)),
        opacities=np.full(n, float(initial_opacity)),
        ages=np.zeros(n, np.int64),
        next_id=n,
    )


def _lloyd_relax(positions: np.ndarray, ref: np.ndarray, iterations: int = 12) -> np.ndarray:
    """Mass-weighted Lloyd relaxation of `positions` over the reference image.

    Each iteration assigns every pixel to its nearest site and moves each
    site to the mass-weighted centroid of its cell; sites whose cell captures
    no mass stay put. Deterministic given its inputs.
    """
    H, W = ref.shape
    xs = (np.arange(W) + 0.5) / W
    ys = (np.arange(H) + 0.5) / H
    X, Y = np.meshgrid(xs, ys)
    px = np.stack([X.ravel(), Y.ravel()], axis=1)  # (HW, 2)
    w = ref.ravel()
    pos = positions.copy()
    for _ in range(iterations):
        d2 = ((px[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)  # (HW, n)
        owner = np.argmin(d2, axis=1)
        wsum = np.bincount(owner, weights=w, minlength=pos.shape[0])
        cx = np.bincount(owner, weights=w * px[:, 0], minlength=pos.shape[0])
        cy = np.bincount(owner, weights=w * px[:, 1], minlength=pos.shape[0])
        nonempty = wsum > 0
        pos[nonempty, 0] = cx[nonempty] / wsum[nonempty]
        pos[nonempty, 1] = cy[nonempty] / wsum[nonempty]
    return pos


def audit(pop: Population) -> list[str]:
    """Return invariant violations (empty list = healthy population)."""
    problems = []
    if pop.count != len(set(pop.ids.tolist())):
        problems.append("duplicate ids among live primitives")
    if pop.count and pop.ids.max(initial=-1) >= pop.next_id:
        problems.append("live id >= next_id (counter not monotone)")
    if not np.all(pop.scales > 0):
        problems.append("non-positive scale")
    if not (np.all(pop.opacities >= 0) and np.all(pop.opacities <= 1)):
        problems.append("opacity outside [0, 1]")
    if not np.all(pop.ages >= 0):
        problems.append("negative age")
    if not (np.all(np.isfinite(pop.positions)) and np.all(np.isfinite(pop.scales))):
        problems.append("non-finite geometry")
    return problems


def _f32_repr(value: float) -> str:
    """Shortest decimal string that round-trips through float32."""
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def to_ply(pop: Population) -> bytes:
    """ASCII PLY: one vertex per primitive, fields x y z(=0) scale opacity."""
    lines = [
        "ply",
        "format ascii 1.0",
        "comment splatctl population export",
        f"element vertex {pop.count}",
        "property float x",
        "property float y",
        "property float z",
        "property float scale",
        "property float opacity",
        "end_header",
    ]
    for i in range(pop.count):
        x, y = pop.positions[i]
        lines.append(
            f"{_f32_repr(x)} {_f32_repr(y)} 0 "
            f"{_f32_repr(pop.scales[i])} {_f32_repr(pop.opacities[i])}"
        )
    return ("\n".join(lines) + "\n").encode("ascii")


def to_snapshot(
    pop: Population,
    moments_m: np.ndarray | None = None,
    moments_v: np.ndarray | None = None,
    moments_steps: np.ndarray | None = None,
) -> bytes:
    """Versioned binary snapshot; moment arrays default to zeros if absent."""
    n = pop.count
    rec = np.zeros(n, SNAP_RECORD_DTYPE)
    rec["id"] = pop.ids
    rec["x"] = pop.positions[:, 0]
    rec["y"] = pop.positions[:, 1]
    rec["scale"] = pop.scales
    rec["opacity"] = pop.opacities
    rec["age"] = pop.ages
    if moments_m is not None:
        rec["m0"], rec["m1"] = moments_m[:, 0], moments_m[:, 1]
    if moments_v is not None:
        rec["v0"], rec["v1"] = moments_v[:, 0], moments_v[:, 1]
    if moments_steps is not None:
        rec["steps"] = moments_steps
    header = SNAP_HEADER.pack(SNAP_MAGIC, SNAP_VERSION, n)
    return header + rec.tobytes()


def from_snapshot(data: bytes):
    """Inverse of to_snapshot.

    Returns (Population, m (N,2), v (N,2), steps (N,)).
    """
    if len(data) < SNAP_HEADER_BYTES:
        raise ConfigurationError("snapshot truncated: missing header")
    magic, version, n = SNAP_HEADER.unpack_from(data)
    if magic != SNAP_MAGIC:
        raise ConfigurationError(f"bad snapshot magic {magic!r}")
    if version != SNAP_VERSION:
        raise ConfigurationError(f"unsupported snapshot version {version}")
    expected = SNAP_HEADER_BYTES + n * SNAP_RECORD_BYTES
    if len(data) != expected:
        raise ConfigurationError(
            f"snapshot length {len(data)} != expected {expected} for count {n}"
        )
    rec = np.frombuffer(data, SNAP_RECORD_DTYPE, count=n, offset=SNAP_HEADER_BYTES)
    pop = Population(
        ids=rec["id"].astype(np.int64),
        positions=np.stack([rec["x"], rec["y"]], axis=1).astype(np.float64),
        scales=rec["scale"].astype(np.float64),
        opacities=rec["opacity"].astype(np.float64),
        ages=rec["age"].astype(np.int64),
        next_id=int(rec["id"].max(initial=-1)) + 1,
    )
    m = np.stack([rec["m0"], rec["m1"]], axis=1).astype(np.float64)
    v = np.stack([rec["v0"], rec["v1"]], axis=1).astype(np.float64)
    steps = rec["steps"].astype(np.int64)
    return pop, m, v, steps


def serialize_population(pop: Population, format: str = "binary-snapshot", **moments) -> bytes:
    """Serialize to "ply-ascii" or "binary-snapshot" bytes."""
    if format == "ply-ascii":
        return to_ply(pop)
    if format == "binary-snapshot":
        return to_snapshot(pop, **moments)
    raise ConfigurationError(f"unknown serialization format {format!r}")


def storage_bytes(pop: Population) -> int:
    """Byte count of the binary snapshot encoding (header + fixed records)."""
    return SNAP_HEADER_BYTES + pop.count * SNAP_RECORD_BYTES


def write_bytes(path, data: bytes) -> None:
    """Write an export artifact; I/O failures surface with path context."""
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:  # pragma: no cover - exercised via bad paths only
        raise ExportError(path, str(exc)) from exc
