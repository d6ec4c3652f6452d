"""Command-line interface.

Subcommands:
    run      one scenario, one controller; writes the standard artifact set
    compare  same scenario on several controllers (shared seed/supervision)
    sweep    one axis, several values (tau_Q | tau_SNR | tau_pos | sigma_ln)
    ablate   cadam variants: full | momentum_only | no_reset
    replay   controller statistics over a recorded gradient trace
    export   regenerate artifacts (masks/ply/render) from a run directory

Every subcommand that simulates accepts a scenario file (flat key=value,
see config.parse_scenario_text) plus overriding flags; flags win.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import Scenario, load_scenario, parse_grid, scenario_text
from .errors import SplatError
from .harness import (
    ablate,
    compare,
    replay_trace,
    run,
    sweep,
    write_run_dir,
)


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="scenario file (flat key=value)")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--steps", type=int, help="total optimization steps")
    p.add_argument("--grid", help="render grid as WxH, e.g. 64x64")
    p.add_argument(
        "--deterministic",
        choices=("on", "off"),
        help="force sequential deterministic kernels (default on)",
    )
    p.add_argument("--out-dir", help="directory for artifacts")


def _scenario_from_args(args) -> Scenario:
    scn = load_scenario(args.scenario) if args.scenario else Scenario()
    if args.seed is not None:
        scn.seed = args.seed
    if args.steps is not None:
        scn.schedule.total_steps = args.steps
    if args.grid is not None:
        scn.grid_h, scn.grid_w = parse_grid(args.grid)
    if args.deterministic is not None:
        scn.deterministic = args.deterministic == "on"
    scn.validate()
    return scn


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatctl",
        description="density-control policies on a synthetic 2D splatting task",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_scenario_flags(p_run)
    p_run.add_argument(
        "--controller", choices=("baseline", "cadam", "none"), help="density controller"
    )
    p_run.add_argument(
        "--variant",
        choices=("full", "momentum_only", "no_reset"),
        default="full",
        help="cadam ablation variant",
    )
    p_run.add_argument("--masks", action="store_true", help="also write per-round masks")
    p_run.add_argument(
        "--print-scenario", action="store_true", help="print the resolved scenario and exit"
    )

    p_cmp = sub.add_parser("compare", help="run several controllers on one scenario")
    _add_scenario_flags(p_cmp)
    p_cmp.add_argument(
        "--controllers",
        default="baseline,cadam",
        help="comma-separated controller list (default baseline,cadam)",
    )

    p_sweep = sub.add_parser("sweep", help="sweep one scenario axis")
    _add_scenario_flags(p_sweep)
    p_sweep.add_argument(
        "--controller", choices=("baseline", "cadam"), help="density controller"
    )
    p_sweep.add_argument("--axis", required=True, help="tau_Q | tau_SNR | tau_pos | sigma_ln")
    p_sweep.add_argument("--values", required=True, help="comma-separated numeric values")

    p_abl = sub.add_parser("ablate", help="run cadam ablation variants")
    _add_scenario_flags(p_abl)
    p_abl.add_argument(
        "--variants",
        default="full,momentum_only,no_reset",
        help="comma-separated variant list",
    )

    p_rep = sub.add_parser("replay", help="replay a recorded gradient trace")
    p_rep.add_argument("trace", help="trace file (JSON lines)")
    p_rep.add_argument(
        "--controller", choices=("baseline", "cadam"), default="cadam"
    )
    p_rep.add_argument("--interval", type=int, help="selection interval (default 100)")
    p_rep.add_argument("--out", help="write per-call rows as JSON lines here")

    p_exp = sub.add_parser("export", help="regenerate artifacts from a run directory")
    p_exp.add_argument("run_dir", help="directory produced by `splatctl run`")
    p_exp.add_argument("--masks", action="store_true", help="write masks/round_%%04d.pgm")
    p_exp.add_argument("--ply", action="store_true", help="write final.ply")
    p_exp.add_argument("--render", action="store_true", help="write render_final.pgm")
    p_exp.add_argument("--grid", help="override grid as WxH if events.jsonl is absent")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except SplatError as exc:
        print(f"splatctl: error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "run":
        scn = _scenario_from_args(args)
        if args.controller is not None:
            scn.controller_kind = args.controller
        if args.print_scenario:
            print(scenario_text(scn), end="")
            return 0
        result = run(scn, variant=args.variant)
        out_dir = args.out_dir or "runs/run"
        paths = write_run_dir(result, out_dir, masks=args.masks)
        print(
            f"{scn.controller_kind}({args.variant}): steps={result.steps_run} "
            f"final_count={result.final_count} final_loss={result.final_loss:.6g} "
            f"cap_hit={result.cap_hit}"
        )
        print(f"artifacts: {paths['metrics']}")
        return 0

    if args.command == "compare":
        scn = _scenario_from_args(args)
        kinds = tuple(k.strip() for k in args.controllers.split(",") if k.strip())
        out_dir = args.out_dir or "runs/compare"
        report = compare(scn, kinds=kinds, out_dir=out_dir)
        for kind in report["kinds"]:
            print(
                f"{kind}: final_count={report['final_count'][kind]} "
                f"final_loss={report['final_loss'][kind]:.6g}"
            )
        if "verdict" in report:
            print(report["verdict"])
        return 0

    if args.command == "sweep":
        scn = _scenario_from_args(args)
        if args.controller is not None:
            scn.controller_kind = args.controller
        values = [float(v) for v in args.values.split(",") if v.strip()]
        rows = sweep(scn, args.axis, values, out_dir=args.out_dir or "runs/sweep")
        for row in rows:
            print(
                f"{args.axis}={row['value']:g}: final_count={row['final_count']} "
                f"final_loss={row['final_loss']:.6g} cap_hit={row['cap_hit']}"
            )
        return 0

    if args.command == "ablate":
        scn = _scenario_from_args(args)
        variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
        out = ablate(scn, variants=variants, out_dir=args.out_dir or "runs/ablate")
        for variant, res in out.items():
            print(
                f"{variant}: final_count={res.final_count} "
                f"final_loss={res.final_loss:.6g} cap_hit={res.cap_hit}"
            )
        return 0

    if args.command == "replay":
        kwargs = {}
        if args.interval is not None:
            from .controller import ControllerConfig

            kwargs["ccfg"] = ControllerConfig(densify_interval=args.interval)
        rows = replay_trace(args.trace, kind=args.controller, **kwargs)
        text = "".join(json.dumps(r) + "\n" for r in rows)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            print(text, end="")
        return 0

    if args.command == "export":
        from .harness import export_from_run_dir

        grid = parse_grid(args.grid) if args.grid else None
        if not (args.masks or args.ply or args.render):
            print("splatctl: export: nothing to do (pass --masks/--ply/--render)",
                  file=sys.stderr)
            return 2
        paths = export_from_run_dir(
            args.run_dir, masks=args.masks, ply=args.ply, render_out=args.render, grid=grid
        )
        for name, path in paths.items():
            print(f"{name}: {path}")
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    raise SystemExit(main())
