"""splatctl: density-control policies on a synthetic 2D splatting task.

Two controllers grow and prune a population of isotropic 2D Gaussians that
fit a reference image through a differentiable additive splatter, under
stochastic pseudo-target supervision whose per-step magnitude jitter mimics
generative guidance:

* ``baseline`` — accumulate mean positional-gradient magnitude over a window
  and densify wherever it exceeds a fixed threshold.  Under magnitude jitter
  the accumulated mean tracks the noise scale, so any fixed threshold either
  fires everywhere (count explosion up to the growth cap) or never fires
  (starvation): the densification dilemma.
* ``cadam`` — first/second gradient moments per primitive with bias
  correction, a population-quantile gate on momentum magnitude, an intrinsic
  signal-to-noise gate, and an age gate; plus selective opacity reset of
  low-SNR primitives.  Growth concentrates where the gradient field is
  persistently coherent and soft-terminates once the remaining field is
  noise-dominated.

Layers (each importable on its own):

* :mod:`splatctl.primitives` — population storage, audit, snapshot/PLY.
* :mod:`splatctl.moments`    — streaming moment statistics, bias correction,
  intrinsic SNR.
* :mod:`splatctl.controller` — selection, split/clone/prune, opacity resets.
* :mod:`splatctl.toysplat`   — renderer, analytic gradients, pseudo-target
  sampler, per-primitive Adam.
* :mod:`splatctl.harness`    — run loop, metrics/events writers, compare /
  sweep / ablate experiments, trace replay, artifact export.
* :mod:`splatctl.config`     — scenario dataclasses and the flat key=value
  scenario file format.
* :mod:`splatctl.cli`        — ``splatctl`` command-line entry point.
"""

from .config import (
    InitSpec,
    Scenario,
    ScheduleSpec,
    TargetSpec,
    clone_scenario,
    load_scenario,
    parse_scenario_text,
    scenario_digest,
    scenario_text,
)
from .controller import (
    BaselineState,
    ControllerConfig,
    ControllerDecision,
    apply_clone,
    apply_split,
    baseline_accumulate,
    baseline_select,
    cadam_select,
    decide_actions,
    global_opacity_reset,
    momentum_only_select,
    population_quantile,
    prune,
    selective_opacity_reset,
)
from .errors import (
    AlignmentError,
    ConfigurationError,
    ExportError,
    PoisonedGradientError,
    SplatError,
    TraceSchemaError,
    UndefinedCorrectionError,
)
from .harness import (
    RunResult,
    ablate,
    compare,
    measure_noise_floor,
    replay_trace,
    run,
    sweep,
    write_run_dir,
)
from .moments import (
    MomentConfig,
    MomentState,
    batch_update,
    bias_corrected,
    fresh_state,
    intrinsic_snr,
    momentum_norms,
    update,
)
from .primitives import (
    Population,
    Primitive,
    audit,
    empty_population,
    from_snapshot,
    serialize_population,
    spawn_initial,
    storage_bytes,
    to_ply,
    to_snapshot,
)
from .toysplat import (
    AdamState,
    OptimizerConfig,
    SplatGrads,
    TargetModel,
    loss_and_grads,
    optimizer_step,
    read_pgm,
    reference_shape,
    render,
    sample_pseudo_target,
    write_pgm,
)

__version__ = "0.1.0"
