"""Scenario configuration: dataclasses plus a flat key=value text format.

A scenario file is line-oriented: `section.field = value`, `#` comments,
blank lines ignored. Every key has a default, so a minimal file only names
the target and the controller:

    target.reference = ring
    controller.kind = cadam

Unknown keys and malformed values are rejected with their line number. The
full key set with defaults is what `scenario_text` emits (also used to stamp
run provenance).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .controller import ControllerConfig
from .errors import ConfigurationError
from .moments import MomentConfig
from .toysplat import OptimizerConfig

CONTROLLER_KINDS = ("baseline", "cadam", "none")
VARIANTS = ("full", "momentum_only", "no_reset")


@dataclass
class TargetSpec:
    reference: str = "ring"  # built-in shape name or a .pgm path
    mode: str = "generative"  # or "reconstruction"
    noise_sigma: float = 0.2
    magnitude_jitter_sigma: float = 1.5
    view_jitter: float = 0.0


@dataclass
class InitSpec:
    count: int = 384
    layout: str = "stratified"  # grid | uniform-random | importance | stratified
    scale: float = 0.025
    opacity: float = 0.21


@dataclass
class ScheduleSpec:
    total_steps: int = 6000
    densify_start: int = -1  # -1: resolve to one densification window (K)
    densify_end: int = -1  # -1: resolve to 50% of total_steps
    stop_on_cap: bool = True  # growth cap ends the run (vs densification only)

    def resolved_start(self, k: int) -> int:
        return k if self.densify_start < 0 else self.densify_start

    def resolved_end(self) -> int:
        # densification (and its opacity resets) occupy the first half of
        # training, mirroring the standard pipeline's 15k/30k schedule; the
        # second half refines a fixed population.
        return (
            int(0.5 * self.total_steps) if self.densify_end < 0 else self.densify_end
        )


@dataclass
class Scenario:
    target: TargetSpec = field(default_factory=TargetSpec)
    init: InitSpec = field(default_factory=InitSpec)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    moments: MomentConfig = field(default_factory=MomentConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    controller_kind: str = "cadam"
    grid_h: int = 64
    grid_w: int = 64
    cutoff_sigmas: float = 6.0
    seed: int = 0
    deterministic: bool = True

    def validate(self) -> "Scenario":
        if self.controller_kind not in CONTROLLER_KINDS:
            raise ConfigurationError(
                f"controller.kind must be one of {CONTROLLER_KINDS}, "
                f"got {self.controller_kind!r}"
            )
        k = self.controller.densify_interval
        start, end = self.schedule.resolved_start(k), self.schedule.resolved_end()
        if not (start <= end <= self.schedule.total_steps):
            raise ConfigurationError(
                f"schedule must satisfy densify_start <= densify_end <= total_steps, "
                f"got {start} <= {end} <= {self.schedule.total_steps}"
            )
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigurationError("grid dimensions must be positive")
        return self


# registry: flat key -> (attribute path, python type)
_SECTIONS = {
    "target": TargetSpec,
    "init": InitSpec,
    "controller": ControllerConfig,
    "moments": MomentConfig,
    "optimizer": OptimizerConfig,
    "schedule": ScheduleSpec,
}
_TOP_LEVEL = {
    "seed": int,
    "cutoff_sigmas": float,
    "deterministic": bool,
    "grid": str,  # "WxH"
}


def _registry():
    reg = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            reg[f"{section}.{f.name}"] = (section, f.name, type(getattr(cls(), f.name)))
    reg["controller.kind"] = (None, "controller_kind", str)
    return reg


_REGISTRY = _registry()


def _coerce(raw: str, typ: type, key: str, lineno: int):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from exc


def parse_grid(raw: str) -> tuple[int, int]:
    """Parse 'WxH' (e.g. '64x64') into (H, W)."""
    parts = raw.lower().split("x")
    if len(parts) != 2:
        raise ConfigurationError(f"grid must look like '64x64', got {raw!r}")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigurationError(f"grid must look like '64x64', got {raw!r}") from exc
    return h, w


def parse_scenario_text(text: str) -> Scenario:
    scn = Scenario()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key in _TOP_LEVEL:
            if key == "grid":
                scn.grid_h, scn.grid_w = parse_grid(raw)
            else:
                setattr(scn, key, _coerce(raw, _TOP_LEVEL[key], key, lineno))
            continue
        if key not in _REGISTRY:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        section, name, typ = _REGISTRY[key]
        value = _coerce(raw, typ, key, lineno)
        if section is None:
            setattr(scn, name, value)
        else:
            setattr(getattr(scn, section), name, value)
    return scn.validate()


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario_text(fh.read())


def scenario_text(scn: Scenario) -> str:
    """Canonical full key=value dump (stable order; provenance + digest)."""
    lines = [f"controller.kind = {scn.controller_kind}"]
    for section, cls in _SECTIONS.items():
        obj = getattr(scn, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = {getattr(obj, f.name)!r}".replace("'", ""))
    lines.append(f"grid = {scn.grid_w}x{scn.grid_h}")
    lines.append(f"cutoff_sigmas = {scn.cutoff_sigmas}")
    lines.append(f"seed = {scn.seed}")
    lines.append(f"deterministic = {scn.deterministic}")
    return "\n".join(lines) + "\n"


def scenario_digest(scn: Scenario) -> str:
    return hashlib.sha256(scenario_text(scn).encode()).hexdigest()[:16]


def clone_scenario(scn: Scenario) -> Scenario:
    """Deep copy via dataclasses.replace on each section."""
    return Scenario(
        target=dataclasses.replace(scn.target),
        init=dataclasses.replace(scn.init),
        controller=dataclasses.replace(scn.controller),
        moments=dataclasses.replace(scn.moments),
        optimizer=dataclasses.replace(scn.optimizer),
        schedule=dataclasses.replace(scn.schedule),
        controller_kind=scn.controller_kind,
        grid_h=scn.grid_h,
        grid_w=scn.grid_w,
        cutoff_sigmas=scn.cutoff_sigmas,
        seed=scn.seed,
        deterministic=scn.deterministic,
    )


def comparable(a: Scenario, b: Scenario) -> None:
    """Raise unless a and b differ at most in controller configuration."""
    a2, b2 = clone_scenario(a), clone_scenario(b)
    for scn in (a2, b2):
        scn.controller_kind = "none"
        scn.controller = ControllerConfig()
    if scenario_text(a2) != scenario_text(b2):
        raise ConfigurationError(
            "scenarios differ outside the controller; comparison would confound"
        )
