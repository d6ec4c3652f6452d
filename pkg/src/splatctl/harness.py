"""Experiment harness: optimization/densification loop, logging, experiments.

One `run` executes the per-step loop:

    sample pseudo-target -> loss + analytic gradients -> scale by lambda_t ->
    update streaming statistics (moments always; baseline accumulator on the
    baseline arm) -> optimizer step -> [densification round at K boundaries
    inside the densify window: select, split/clone, prune] -> [opacity reset
    at reset boundaries after warmup: selective on the cadam arm, global on
    the baseline arm] -> append metrics row

fully deterministic per seed: the pseudo-target stream, the split sampler,
and initialization each draw from independent child streams of the run seed,
so identical scenarios produce byte-identical metrics.csv and events.jsonl,
and arms that share a seed see the exact same supervision stream.

The growth cap (max_primitives) stands in for an out-of-memory endpoint. With
schedule.stop_on_cap (default) the run ends at the capping step after
recording the cap event; otherwise densification is disabled and optimization
continues to total_steps.

Quality is always logged against the clean reference (loss_vs_reference);
per-step pseudo-target loss never converges under stochastic supervision and
is deliberately not a logged metric.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import (
    Scenario,
    VARIANTS,
    clone_scenario,
    comparable,
    scenario_digest,
)
from .controller import (
    ControllerConfig,
    ControllerDecision,
    apply_clone,
    apply_split,
    baseline_accumulate,
    baseline_select,
    cadam_select,
    carry_baseline,
    decide_actions,
    fresh_baseline,
    global_opacity_reset,
    momentum_only_select,
    prune,
    selective_opacity_reset,
)
from .errors import ConfigurationError, TraceSchemaError
from .moments import (
    MomentConfig,
    MomentState,
    batch_update,
    carry_state,
    fresh_state,
    intrinsic_snr,
    momentum_norms,
    poisoned_mask,
)
from .primitives import (
    Population,
    from_snapshot,
    spawn_initial,
    storage_bytes,
    to_ply,
    to_snapshot,
    write_bytes,
)
from .toysplat import (
    REFERENCE_SHAPES,
    TargetModel,
    fresh_adam,
    carry_adam,
    loss_grads_render,
    optimizer_step,
    read_pgm,
    reference_shape,
    render,
    sample_pseudo_target,
    write_pgm,
)

METRICS_SCHEMA = "v1"
METRICS_COLUMNS = [
    "step",
    "n_primitives",
    "loss_vs_reference",
    "grad_norm_mean",
    "mnorm_mean",
    "mnorm_median",
    "mnorm_p10",
    "mnorm_p90",
    "snr_mean",
    "snr_median",
    "snr_p10",
    "snr_p90",
    "n_selected",
    "n_split",
    "n_cloned",
    "n_pruned",
    "n_reset",
    "quantile_value",
    "storage_bytes",
    "cap_hit",
]


@dataclass
class RunResult:
    scenario: Scenario
    variant: str
    population: Population
    moments: MomentState
    metrics: list
    events: list
    decisions: list
    reference: np.ndarray
    final_render: np.ndarray
    final_loss: float
    steps_run: int
    cap_hit: bool
    cap_step: int | None
    grad_norms: np.ndarray | None = None  # (steps, N); controller-free probes only

    @property
    def rounds(self) -> list:
        return [e for e in self.events if e.get("kind") == "round"]

    @property
    def final_count(self) -> int:
        return self.population.count


def resolve_reference(name: str, H: int, W: int) -> np.ndarray:
    """Built-in shape names render procedurally at the requested grid;
    anything else is a PGM path whose dimensions must match the grid."""
    if name in REFERENCE_SHAPES:
        return reference_shape(name, H, W)
    img = read_pgm(name)
    if img.shape != (H, W):
        raise ConfigurationError(
            f"reference {name!r} is {img.shape[1]}x{img.shape[0]} but the "
            f"scenario grid is {W}x{H}"
        )
    return img


def _compose_carry(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """outer: mid->old, inner: new->mid; result: new->old (-1 stays fresh)."""
    safe = np.maximum(inner, 0)
    return np.where(inner >= 0, outer[safe], -1).astype(np.int64)


def _dist_stats(state: MomentState, mcfg: MomentConfig):
    """Momentum-norm / SNR distribution stats over primitives with history."""
    steps = np.asarray(state.steps)
    seen = steps >= 1
    if not seen.any():
        return None
    sub = MomentState(state.m[seen], state.v[seen], steps[seen])
    norms = momentum_norms(sub, mcfg)
    snr = intrinsic_snr(sub, mcfg)
    return {
        "mnorm_mean": float(norms.mean()),
        "mnorm_median": float(np.median(norms)),
        "mnorm_p10": float(np.quantile(norms, 0.1)),
        "mnorm_p90": float(np.quantile(norms, 0.9)),
        "snr_mean": float(snr.mean()),
        "snr_median": float(np.median(snr)),
        "snr_p10": float(np.quantile(snr, 0.1)),
        "snr_p90": float(np.quantile(snr, 0.9)),
    }


def run(scn: Scenario, variant: str = "full", record_grad_norms: bool = False) -> RunResult:
    """Execute one scenario; see the module docstring for the loop contract.

    record_grad_norms keeps the per-primitive positional-gradient norm of
    every step on the result (`grad_norms`, shape (steps, N)); only valid for
    controller-free scenarios where the population never changes shape.
    """
    scn.validate()
    if record_grad_norms and scn.controller_kind != "none":
        raise ConfigurationError("per-primitive gradient recording requires controller.kind = none")
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected {VARIANTS}")
    if variant != "full" and scn.controller_kind != "cadam":
        raise ConfigurationError("ablation variants require controller.kind = cadam")

    H, W = scn.grid_h, scn.grid_w
    kind = scn.controller_kind
    ccfg, mcfg, ocfg = scn.controller, scn.moments, scn.optimizer
    K = ccfg.densify_interval
    total = scn.schedule.total_steps
    d_start, d_end = scn.schedule.resolved_start(K), scn.schedule.resolved_end()

    reference = resolve_reference(scn.target.reference, H, W)
    model = TargetModel(
        reference=reference,
        noise_sigma=scn.target.noise_sigma,
        magnitude_jitter_sigma=scn.target.magnitude_jitter_sigma,
        view_jitter=scn.target.view_jitter,
        mode=scn.target.mode,
    )

    ss = np.random.SeedSequence(scn.seed)
    s_init, s_target, s_split = ss.spawn(3)
    pop = spawn_initial(
        scn.init.count,
        scn.init.layout,
        seed=int(s_init.generate_state(1)[0]),
        initial_scale=scn.init.scale,
        initial_opacity=scn.init.opacity,
        reference=reference,
    )
    rng_target = np.random.default_rng(s_target)
    rng_split = np.random.default_rng(s_split)

    mstate = fresh_state(pop.count)
    astate = fresh_adam(pop.count)
    bstate = fresh_baseline(pop.count)

    metrics: list = []
    decisions: list = []
    events: list = [
        {
            "kind": "header",
            "schema": 1,
            "policy": kind,
            "variant": variant,
            "seed": scn.seed,
            "grid": f"{W}x{H}",
            "scenario_sha": scenario_digest(scn),
        }
    ]
    densify_live = kind != "none"
    cap_hit_flag = False
    cap_step: int | None = None
    resets_since_round = 0
    steps_run = 0
    grad_norms = np.zeros((total, pop.count)) if record_grad_norms else None

    for step in range(1, total + 1):
        target, lam = sample_pseudo_target(model, step, rng_target)
        loss_pseudo, grads, image = loss_grads_render(
            pop, target, scn.cutoff_sigmas
        )
        if not np.isfinite(loss_pseudo):
            raise FloatingPointError(
                f"non-finite loss at step {step}: n={pop.count}, "
                f"scale range [{pop.scales.min():.3g}, {pop.scales.max():.3g}], "
                f"opacity range [{pop.opacities.min():.3g}, {pop.opacities.max():.3g}]"
            )
        loss_ref = float(np.mean((image - reference) ** 2))
        if lam != 1.0:
            grads = grads.scaled(lam)
        n_poisoned = int(poisoned_mask(grads.pos).sum())
        if n_poisoned:
            events.append({"kind": "poisoned", "step": step, "n": n_poisoned})
        per_prim_norms = np.linalg.norm(grads.pos, axis=1)
        grad_norm_mean = float(per_prim_norms.mean()) if pop.count else 0.0
        if grad_norms is not None:
            grad_norms[step - 1] = per_prim_norms
        mstate = batch_update(mstate, grads.pos, mcfg)
        if kind == "baseline":
            bstate = baseline_accumulate(bstate, grads.pos)
        optimizer_step(pop, grads, astate, ocfg, step, total)
        pop.ages += 1

        stats = None
        n_selected = n_split = n_cloned = n_pruned = n_reset_step = 0
        quantile_value = None
        round_cap = False

        is_round = (
            densify_live
            and pop.count > 0
            and d_start <= step <= d_end
            and step % K == 0
        )
        if is_round:
            stats = _dist_stats(mstate, mcfg)
            if kind == "baseline":
                mask, bstate = baseline_select(bstate, ccfg)
                q_value, snr = float("nan"), np.full(pop.count, np.nan)
            elif variant == "momentum_only":
                mask, q_value, snr, _ = momentum_only_select(mstate, pop.ages, ccfg, mcfg)
            else:
                mask, q_value, snr, _ = cadam_select(mstate, pop.ages, ccfg, mcfg)
            split_mask, clone_mask = decide_actions(mask, pop, ccfg)
            n_selected = int(mask.sum())
            selected_fp = [
                [round(float(x), 6), round(float(y), 6), round(float(s), 6)]
                for (x, y), s in zip(pop.positions[mask], pop.scales[mask])
            ]
            ids_at_select = pop.ids.copy()

            pop1, carry_s, n_split, cap_a = apply_split(pop, split_mask, rng_split, ccfg)
            clone_mid = np.zeros(pop1.count, bool)
            surv = carry_s >= 0
            clone_mid[surv] = clone_mask[carry_s[surv]]
            pop2, carry_c, n_cloned, cap_b = apply_clone(pop1, clone_mid, ccfg)
            carry_sc = _compose_carry(carry_s, carry_c)
            pop3, carry_p, pruned_ids = prune(pop2, ccfg)
            carry = _compose_carry(carry_sc, carry_p)
            n_pruned = int(pruned_ids.shape[0])

            mstate = carry_state(mstate, carry)
            astate = carry_adam(astate, carry)
            bstate = carry_baseline(bstate, carry)
            pop = pop3
            round_cap = bool(cap_a or cap_b)

            decisions.append(
                ControllerDecision(
                    ids=ids_at_select,
                    densify_mask=mask,
                    split_mask=split_mask,
                    clone_mask=clone_mask,
                    reset_mask=np.zeros(mask.shape[0], bool),
                    pruned_ids=pruned_ids,
                    quantile_value=float(q_value),
                    snr_values=snr,
                    cap_hit=round_cap,
                )
            )
            events.append(
                {
                    "kind": "round",
                    "step": step,
                    "policy": kind if variant == "full" else f"{kind}:{variant}",
                    "n_selected": n_selected,
                    "n_split": int(n_split),
                    "n_clone": int(n_cloned),
                    "n_pruned": n_pruned,
                    "n_reset": resets_since_round,
                    "quantile_value": None if np.isnan(q_value) else float(q_value),
                    "selected": selected_fp,
                }
            )
            quantile_value = None if np.isnan(q_value) else float(q_value)
            resets_since_round = 0
            if round_cap:
                cap_hit_flag = True
                cap_step = step
                densify_live = False
                events.append({"kind": "cap", "step": step, "n_primitives": pop.count})

        if (
            kind != "none"
            and pop.count > 0
            and step % ccfg.reset_interval == 0
            and step >= ccfg.warmup_steps
            and step <= d_end
        ):
            if kind == "baseline" or variant == "no_reset":
                rmask = global_opacity_reset(pop, ccfg, step)
            else:
                rmask = selective_opacity_reset(pop, mstate, ccfg, mcfg, step)
            n_reset_step = int(rmask.sum())
            resets_since_round += n_reset_step
            events.append({"kind": "reset", "step": step, "n_reset": n_reset_step})
            if decisions and is_round:
                decisions[-1].reset_mask = rmask

        if stats is None and step == total:
            stats = _dist_stats(mstate, mcfg)
        row = {
            "step": step,
            "n_primitives": pop.count,
            "loss_vs_reference": loss_ref,
            "grad_norm_mean": grad_norm_mean,
            "n_selected": n_selected,
            "n_split": int(n_split),
            "n_cloned": int(n_cloned),
            "n_pruned": n_pruned,
            "n_reset": n_reset_step,
            "quantile_value": quantile_value,
            "storage_bytes": storage_bytes(pop),
            "cap_hit": int(cap_hit_flag),
        }
        for key in (
            "mnorm_mean", "mnorm_median", "mnorm_p10", "mnorm_p90",
            "snr_mean", "snr_median", "snr_p10", "snr_p90",
        ):
            row[key] = stats[key] if stats else None
        metrics.append(row)
        steps_run = step

        if cap_hit_flag and scn.schedule.stop_on_cap:
            break

    final_render = render(pop, (H, W), scn.cutoff_sigmas)
    final_loss = float(np.mean((final_render - reference) ** 2))
    result = RunResult(
        scenario=scn,
        variant=variant,
        population=pop,
        moments=mstate,
        metrics=metrics,
        events=events,
        decisions=decisions,
        reference=reference,
        final_render=final_render,
        final_loss=final_loss,
        steps_run=steps_run,
        cap_hit=cap_hit_flag,
        cap_step=cap_step,
        grad_norms=grad_norms,
    )
    return result


# ---------------------------------------------------------------------------
# noise floor


def measure_noise_floor(scn: Scenario, tail_frac: float = 0.5) -> float:
    """The long-run expected positional-gradient norm under stochastic
    supervision: the mean ‖g_pos‖ over all primitives and the trailing
    tail_frac of a controller-free run of the full schedule.

    The probe shares the scenario's seed derivation, so its supervision
    stream and learning-rate trajectory are exactly those of the real run,
    and the tail excludes the initial fitting transient. The estimator is a
    plain expectation — the quantity the analytic floor formula predicts —
    so the heavy-tailed magnitude jitter contributes its full mass rather
    than being discounted by a robust statistic. Gradients are λ-scaled, as
    both controllers consume them.
    """
    probe = clone_scenario(scn)
    probe.controller_kind = "none"
    probe.schedule.densify_start = 0
    probe.schedule.densify_end = 0
    result = run(probe, record_grad_norms=True)
    tail = result.grad_norms[int(result.grad_norms.shape[0] * (1.0 - tail_frac)):]
    return float(tail.mean())


# ---------------------------------------------------------------------------
# writers


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv_text(metrics: list) -> str:
    lines = [f"# metrics-schema: {METRICS_SCHEMA}", ",".join(METRICS_COLUMNS)]
    for row in metrics:
        lines.append(",".join(_fmt_cell(row[c]) for c in METRICS_COLUMNS))
    return "\n".join(lines) + "\n"


def events_jsonl_text(events: list) -> str:
    return "".join(json.dumps(e, allow_nan=False) + "\n" for e in events) if events else ""


def run_report_text(result: RunResult) -> str:
    scn = result.scenario
    rounds = result.rounds
    peak = max((r["n_selected"] for r in rounds), default=0)
    third = [r for r in rounds if r["step"] > 2 * scn.schedule.total_steps / 3]
    third_max = max((r["n_selected"] for r in third), default=0)
    lines = [
        "splatctl run report",
        f"controller: {scn.controller_kind} (variant {result.variant})",
        f"scenario: {scenario_digest(scn)}  seed: {scn.seed}  grid: {scn.grid_w}x{scn.grid_h}",
        f"steps run: {result.steps_run}/{scn.schedule.total_steps}",
        f"final primitives: {result.final_count}",
        f"final loss_vs_reference: {result.final_loss!r}",
        f"storage bytes: {storage_bytes(result.population)}",
        f"growth cap: {'hit at step %d' % result.cap_step if result.cap_hit else 'not hit'}",
        f"densification rounds: {len(rounds)}  peak round events: {peak}  "
        f"final-third max round events: {third_max}",
    ]
    return "\n".join(lines) + "\n"


def write_run_dir(result: RunResult, out_dir, masks: bool = False) -> dict:
    """Write the standard artifact set; returns {name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    paths["metrics"] = os.path.join(out_dir, "metrics.csv")
    with open(paths["metrics"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_csv_text(result.metrics))

    paths["events"] = os.path.join(out_dir, "events.jsonl")
    with open(paths["events"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(events_jsonl_text(result.events))

    paths["snapshot"] = os.path.join(out_dir, "final.snap")
    write_bytes(
        paths["snapshot"],
        to_snapshot(
            result.population,
            moments_m=result.moments.m,
            moments_v=result.moments.v,
            moments_steps=result.moments.steps,
        ),
    )

    paths["ply"] = os.path.join(out_dir, "final.ply")
    write_bytes(paths["ply"], to_ply(result.population))

    paths["render"] = os.path.join(out_dir, "render_final.pgm")
    write_pgm(paths["render"], result.final_render)

    paths["report"] = os.path.join(out_dir, "report.txt")
    with open(paths["report"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(run_report_text(result))

    if masks:
        paths["masks"] = export_masks(
            result.events, (result.scenario.grid_h, result.scenario.grid_w), out_dir
        )
    return paths


# ---------------------------------------------------------------------------
# mask / artifact export


def mask_image(footprints, H: int, W: int, radius_sigmas: float = 2.0) -> np.ndarray:
    """Binary image: 1 where a pixel center lies within radius_sigmas of a
    selected primitive's center."""
    out = np.zeros((H, W))
    if not footprints:
        return out
    xs = (np.arange(W) + 0.5) / W
    ys = (np.arange(H) + 0.5) / H
    X, Y = np.meshgrid(xs, ys)
    for x, y, s in footprints:
        r = radius_sigmas * s
        out[(X - x) ** 2 + (Y - y) ** 2 <= r * r] = 1.0
    return out


def export_masks(events: list, shape: tuple[int, int], out_dir) -> str:
    """Write masks/round_%04d.pgm for each recorded round (sequential index)."""
    H, W = shape
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(mask_dir, exist_ok=True)
    idx = 0
    for event in events:
        if event.get("kind") != "round":
            continue
        img = mask_image(event.get("selected", []), H, W)
        write_pgm(os.path.join(mask_dir, "round_%04d.pgm" % idx), img)
        idx += 1
    return mask_dir


def load_events(path) -> list:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events


def export_from_run_dir(run_dir, masks=False, ply=False, render_out=False, grid=None) -> dict:
    """Regenerate artifacts from a completed run directory (final.snap +
    events.jsonl), without re-running the simulation."""
    paths = {}
    snap_path = os.path.join(run_dir, "final.snap")
    with open(snap_path, "rb") as fh:
        pop, m, v, steps = from_snapshot(fh.read())
    if grid is None:
        header = next(
            (e for e in load_events(os.path.join(run_dir, "events.jsonl"))
             if e.get("kind") == "header"),
            None,
        )
        if header is None:
            raise ConfigurationError(f"{run_dir}: no header event; pass grid explicitly")
        w, h = header["grid"].split("x")
        grid = (int(h), int(w))
    H, W = grid
    if ply:
        paths["ply"] = os.path.join(run_dir, "final.ply")
        write_bytes(paths["ply"], to_ply(pop))
    if render_out:
        paths["render"] = os.path.join(run_dir, "render_final.pgm")
        write_pgm(paths["render"], render(pop, (H, W)))
    if masks:
        events = load_events(os.path.join(run_dir, "events.jsonl"))
        paths["masks"] = export_masks(events, (H, W), run_dir)
    return paths


# ---------------------------------------------------------------------------
# experiments


def compare(scn: Scenario, kinds=("baseline", "cadam"), out_dir=None) -> dict:
    """Run the scenario once per controller (shared seed and supervision
    stream), emit joined metrics and a verdict. Returns the report dict."""
    results = {}
    for kind in kinds:
        arm = clone_scenario(scn)
        arm.controller_kind = kind
        results[kind] = run(arm)
    report = {"kinds": list(kinds), "final_count": {}, "final_loss": {}, "steps_run": {}}
    for kind, res in results.items():
        report["final_count"][kind] = res.final_count
        report["final_loss"][kind] = res.final_loss
        report["steps_run"][kind] = res.steps_run
    if "baseline" in results and "cadam" in results:
        base, cad = results["baseline"], results["cadam"]
        count_ratio = cad.final_count / max(base.final_count, 1)
        loss_ratio = cad.final_loss / base.final_loss if base.final_loss > 0 else float("inf")
        report["count_ratio"] = count_ratio
        report["loss_ratio"] = loss_ratio
        report["verdict"] = (
            f"count ratio cadam/baseline = {count_ratio:.4f} "
            f"({'within' if count_ratio <= 0.2 else 'outside'} the 0.2 desk-scale band; "
            f"pipeline-scale band is 0.03-0.15), "
            f"loss ratio = {loss_ratio:.4f} "
            f"({'at matched quality' if loss_ratio <= 1.5 else 'quality degraded'})"
        )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        lines = ["splatctl comparison report", f"scenario: {scenario_digest(scn)} seed: {scn.seed}"]
        for kind, res in results.items():
            write_run_dir(res, os.path.join(out_dir, kind))
            lines.append(
                f"{kind}: final_count={res.final_count} "
                f"final_loss={res.final_loss!r} steps_run={res.steps_run}"
            )
        if "verdict" in report:
            lines.append(f"verdict: {report['verdict']}")
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    report["results"] = results
    return report


_SWEEP_AXES = {
    "tau_Q": ("controller", "tau_Q"),
    "tau_SNR": ("controller", "tau_SNR"),
    "tau_pos": ("controller", "tau_pos"),
    "sigma_ln": ("target", "magnitude_jitter_sigma"),
}


def sweep(scn: Scenario, axis: str, values, out_dir=None) -> list:
    """One run per value (shared seed); returns [{value, final_count,
    final_loss, steps_run}]."""
    if axis not in _SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; expected {sorted(_SWEEP_AXES)}")
    section, name = _SWEEP_AXES[axis]
    rows = []
    for value in values:
        variant_scn = clone_scenario(scn)
        setattr(getattr(variant_scn, section), name, float(value))
        res = run(variant_scn)
        rows.append(
            {
                "value": float(value),
                "final_count": res.final_count,
                "final_loss": res.final_loss,
                "steps_run": res.steps_run,
                "cap_hit": res.cap_hit,
            }
        )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        lines = [f"# sweep axis: {axis}", "value,final_count,final_loss,steps_run,cap_hit"]
        for row in rows:
            lines.append(
                f"{row['value']!r},{row['final_count']},{row['final_loss']!r},"
                f"{row['steps_run']},{int(row['cap_hit'])}"
            )
        with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return rows


def ablate(scn: Scenario, variants=("full", "momentum_only", "no_reset"), out_dir=None) -> dict:
    """Run each ablation variant of the cadam controller; emits per-variant
    growth curves (metrics.csv per variant directory) and a summary."""
    arm = clone_scenario(scn)
    arm.controller_kind = "cadam"
    out = {}
    for variant in variants:
        res = run(clone_scenario(arm), variant=variant)
        out[variant] = res
        if out_dir is not None:
            write_run_dir(res, os.path.join(out_dir, variant))
    if out_dir is not None:
        lines = ["splatctl ablation report"]
        for variant, res in out.items():
            lines.append(
                f"{variant}: final_count={res.final_count} final_loss={res.final_loss!r} "
                f"cap_hit={res.cap_hit} steps_run={res.steps_run}"
            )
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return out


# ---------------------------------------------------------------------------
# trace replay


def replay_trace(
    path,
    kind: str = "cadam",
    ccfg: ControllerConfig | None = None,
    mcfg: MomentConfig | None = None,
) -> list:
    """Run controller statistics and selection over a recorded gradient
    stream; no geometry, no structural changes.

    Trace format (JSON lines): first a header {"ids": [...]}, then one record
    per step {"step": int, "grads": [[gx, gy], ...]} aligned to the id list.
    Selection fires every densify_interval records. Returns per-call rows
    {step, n_selected, quantile_value, snr_median, snr_mean}.
    """
    ccfg = ccfg or ControllerConfig()
    mcfg = mcfg or MomentConfig()
    if kind not in ("baseline", "cadam"):
        raise ConfigurationError(f"replay supports baseline|cadam, got {kind!r}")

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not lines:
        return []

    lineno, header_raw = lines[0]
    try:
        header = json.loads(header_raw)
    except json.JSONDecodeError as exc:
        raise TraceSchemaError(lineno, f"invalid JSON: {exc}") from exc
    ids = header.get("ids")
    if not isinstance(ids, list) or not ids:
        raise TraceSchemaError(lineno, 'header must declare a non-empty "ids" list')
    n = len(ids)

    mstate = fresh_state(n)
    bstate = fresh_baseline(n)
    ages = np.zeros(n, np.int64)
    rows = []
    count = 0
    for lineno, raw in lines[1:]:
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceSchemaError(lineno, f"invalid JSON: {exc}") from exc
        if "step" not in rec or "grads" not in rec:
            raise TraceSchemaError(lineno, 'record needs "step" and "grads"')
        grads = np.asarray(rec["grads"], np.float64)
        if grads.shape != (n, 2):
            raise TraceSchemaError(
                lineno, f"grads shape {grads.shape} != ({n}, 2) declared ids"
            )
        mstate = batch_update(mstate, grads, mcfg)
        if kind == "baseline":
            bstate = baseline_accumulate(bstate, grads)
        ages += 1
        count += 1
        if count % ccfg.densify_interval == 0:
            if kind == "baseline":
                mask, bstate = baseline_select(bstate, ccfg)
                q_value = None
            else:
                mask, q_value, _, _ = cadam_select(mstate, ages, ccfg, mcfg)
                q_value = float(q_value)
            snr = intrinsic_snr(mstate, mcfg)
            rows.append(
                {
                    "step": int(rec["step"]),
                    "n_selected": int(mask.sum()),
                    "quantile_value": q_value,
                    "snr_median": float(np.median(snr)),
                    "snr_mean": float(snr.mean()),
                }
            )
    return rows
