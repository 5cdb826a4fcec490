"""Command line entry point: ``tactile-gplvm offline`` and ``tactile-gplvm run``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import ExperimentSpec, load_spec, run_offline_eval, run_online_experiment
from .reporting import OutputError, export_outputs


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--stimulus", help="scenario name (circle, flower, brick, banana, edge), "
                                           "stimulus kind, or path to a stimulus JSON file")
    common.add_argument("--step-length", type=float, help="exploration step (mm)")
    common.add_argument("--taps-per-line", type=int, help="taps in a collection line")
    common.add_argument("--line-halfwidth", type=float, help="half length of a collection line (mm)")
    common.add_argument("--tolerance", type=float, help="consistency tolerance (mm)")
    common.add_argument("--max-steps", type=int, help="failsafe step limit")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tactile-gplvm",
                                description="Simulated tactile contour following with an online GP-LVM.")
    sub = p.add_subparsers(dest="command", required=True)
    off = sub.add_parser("offline", parents=[common],
                         help="latent recovery on a straight edge from a few training lines")
    off.add_argument("--training-lines", type=int, help="number of training lines (default 1)")
    sub.add_parser("run", parents=[common], help="one closed-loop contour-following run")
    return p


def _spec(args, mode: str) -> ExperimentSpec:
    base = load_spec(args.config) if args.config else ExperimentSpec()
    spec = base.with_overrides(
        mode=mode,
        stimulus=args.stimulus,
        step_length=args.step_length,
        taps_per_line=args.taps_per_line,
        line_halfwidth=args.line_halfwidth,
        tolerance=args.tolerance,
        max_steps=args.max_steps,
        seed=args.seed,
        out_dir=args.out,
        training_lines=getattr(args, "training_lines", None),
    )
    return spec


def _print_metrics(report) -> None:
    for key, value in report.to_dict().items():
        if value is None:
            continue
        if isinstance(value, float):
            value = f"{value:.4f}"
        print(f"{key}\t{value}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _spec(args, "offline" if args.command == "offline" else "online")
        result = run_offline_eval(spec) if spec.mode == "offline" else run_online_experiment(spec)
        paths = export_outputs(result, spec)
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_metrics(result.report)
    for role, path in sorted(paths.items()):
        print(f"file:{role}\t{path}")
    if spec.mode == "online" and not result.report.loop_closed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
