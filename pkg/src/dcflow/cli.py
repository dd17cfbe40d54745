"""Command-line front end.

Five subcommands tie the pipeline together:

* ``analyze``: end-to-end response moments of a scenario (or of an
  n-fold iid composition built from a flag), with the full
  distribution curve as CSV on request.
* ``allocate``: run one allocator (or all three) and print the plan.
* ``simulate``: Monte Carlo statistics for one allocator's plan.
* ``compare``: the three-method report, JSON or CSV.
* ``fit``: method-of-moments fit of a sample file.

All primary output is JSON on stdout (sorted keys, two-space indent);
``--out`` writes the command's file artifact, which is the CSV curve
for analyze/compare and the same JSON for the rest. Errors land on
stderr: exit 1 for parse or validation problems, 2 for infeasible or
numerically refused inputs, 3 when the exhaustive search declines.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .allocation import (
    baseline_allocate,
    manage,
    optimal_allocate,
    plan_to_json,
)
from .distributions import DistributionSpec, dist_to_json, fit_delayed_exponential
from .errors import (
    AllocationError,
    CombinatorialLimitError,
    DcflowError,
    DivergenceError,
    GridOverflowError,
    HorizonError,
    InfeasibleRatesError,
    InstabilityError,
    InvalidDistributionError,
    ScenarioError,
)
from .numeric import GridConfig, convolve, discretize, max_compose, numeric_moments, to_csv
from .simulate import (
    compare,
    report_to_csv,
    report_to_json,
    sim_result_to_json,
    simulate,
)
from .workflow import Scenario, end_to_end, parse_scenario, slot_ids


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; parse errors are exit 1 here
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dcflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: _Parser) -> None:
        p.add_argument("--grid-points", type=int, default=None,
                       help="override the scenario's grid resolution")
        p.add_argument("--quantile", type=float, default=None,
                       help="override the scenario's horizon quantile")
        p.add_argument("--objective", choices=["mean", "variance"], default=None,
                       help="override the scenario's objective")
        p.add_argument("--out", type=Path, default=None,
                       help="write the command's file artifact here")

    p = sub.add_parser("analyze", help="end-to-end response distribution and moments")
    p.add_argument("scenario", nargs="?", type=Path)
    p.add_argument("--serial-iid", metavar="FAMILY:RATE",
                   help="n-fold serial composition of one distribution, e.g. exp:1")
    p.add_argument("--parallel-iid", metavar="FAMILY:RATE",
                   help="n-fold parallel composition of one distribution")
    p.add_argument("--n", dest="n_range", metavar="A..B[..STEP]",
                   help="fold counts for the iid modes (default step 10)")
    add_common(p)

    p = sub.add_parser("allocate", help="compute an allocation plan")
    p.add_argument("scenario", type=Path)
    p.add_argument("--method", choices=["proposed", "baseline", "optimal", "all"],
                   default="proposed")
    add_common(p)

    p = sub.add_parser("simulate", help="Monte Carlo statistics of a plan")
    p.add_argument("scenario", type=Path)
    p.add_argument("--method", choices=["proposed", "baseline", "optimal"],
                   default="proposed")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=42)
    add_common(p)

    p = sub.add_parser("compare", help="proposed vs optimal vs baseline report")
    p.add_argument("scenario", type=Path)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=42)
    add_common(p)

    p = sub.add_parser("fit", help="fit a distribution to a sample file")
    p.add_argument("samples", type=Path, help="one non-negative decimal per line")
    p.add_argument("--out", type=Path, default=None)
    return parser


def _emit(obj: dict | list) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_out(path: Path, text: str) -> None:
    path.write_text(text)


def _load_scenario(args) -> Scenario:
    path: Path = args.scenario
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from None
    sc = parse_scenario(text, name=path.stem)
    overrides = {}
    if getattr(args, "grid_points", None) is not None or getattr(args, "quantile", None) is not None:
        overrides["grid"] = GridConfig(
            points=args.grid_points if args.grid_points is not None else sc.grid.points,
            horizon_quantile=args.quantile if args.quantile is not None else sc.grid.horizon_quantile,
        )
    if getattr(args, "objective", None) is not None:
        overrides["objective"] = args.objective
    return dataclasses.replace(sc, **overrides) if overrides else sc


_ALLOCATORS = {
    "proposed": manage,
    "baseline": baseline_allocate,
    "optimal": optimal_allocate,
}


def _parse_iid_spec(text: str) -> DistributionSpec:
    family, _, param = text.partition(":")
    if family != "exp" or not param:
        raise ValueError(
            f"unsupported iid distribution {text!r}; expected exp:RATE"
        )
    try:
        rate = float(param)
    except ValueError:
        raise ValueError(f"bad rate in {text!r}") from None
    return DistributionSpec.exponential(rate)


def _parse_n_range(text: str) -> list[int]:
    parts = text.split("..")
    try:
        if len(parts) == 1:
            return [int(parts[0])]
        start, stop = int(parts[0]), int(parts[1])
        step = int(parts[2]) if len(parts) == 3 else 10
    except ValueError:
        raise ValueError(f"bad --n range {text!r}; expected A..B[..STEP]") from None
    if len(parts) > 3 or step < 1 or start < 1 or stop < start:
        raise ValueError(f"bad --n range {text!r}; expected A..B[..STEP]")
    return list(range(start, stop + 1, step))


def _cmd_analyze_iid(args) -> int:
    mode = "serial" if args.serial_iid else "parallel"
    spec = _parse_iid_spec(args.serial_iid or args.parallel_iid)
    if not args.n_range:
        raise ValueError("the iid modes require --n A..B")
    ns = _parse_n_range(args.n_range)
    points = args.grid_points if args.grid_points is not None else GridConfig.points
    quantile = args.quantile if args.quantile is not None else GridConfig.horizon_quantile
    # the composed tail needs n times the headroom of one component
    cfg = GridConfig(points=points, horizon_quantile=1.0 - (1.0 - quantile) / max(ns))
    component = discretize(spec, cfg)
    combine = convolve if mode == "serial" else max_compose
    rows = []
    acc = component
    count = 1
    for n in ns:
        while count < n:
            acc = combine(acc, component)
            count += 1
        mean, variance = numeric_moments(acc)
        rows.append({"n": n, "mean": mean, "variance": variance})
    _emit({"model": f"{mode}-iid", "dist": args.serial_iid or args.parallel_iid,
           "points": rows})
    if args.out:
        lines = ["n,mean,variance"]
        lines += [f"{r['n']},{r['mean']!r},{r['variance']!r}" for r in rows]
        _write_out(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_analyze(args) -> int:
    if args.serial_iid and args.parallel_iid:
        raise ValueError("--serial-iid and --parallel-iid are mutually exclusive")
    if args.serial_iid or args.parallel_iid:
        if args.scenario is not None:
            raise ValueError("give either a scenario file or an iid flag, not both")
        return _cmd_analyze_iid(args)
    if args.scenario is None:
        raise ValueError("analyze needs a scenario file or an iid flag")
    sc = _load_scenario(args)
    binding = sc.binding()
    if len(binding) == len(slot_ids(sc.workflow)):
        from .allocation import complete_branch_rates

        method = "prebound"
        rates = complete_branch_rates(sc.workflow, sc.server_map(), binding)
    else:
        plan = manage(sc)
        method = plan.method
        binding = dict(plan.binding)
        rates = plan.branch_rates
    dist = end_to_end(sc.workflow, sc.server_map(), binding, rates, sc.grid)
    mean, variance = numeric_moments(dist)
    _emit({
        "scenario": sc.name or "scenario",
        "method": method,
        "binding": binding,
        "branch_rates": {path: list(r) for path, r in rates.items()},
        "mean": mean,
        "variance": variance,
    })
    if args.out:
        _write_out(args.out, to_csv(dist))
    return 0


def _cmd_allocate(args) -> int:
    sc = _load_scenario(args)
    if args.method == "all":
        payload: dict | list = [
            plan_to_json(_ALLOCATORS[m](sc)) for m in ("proposed", "baseline", "optimal")
        ]
    else:
        payload = plan_to_json(_ALLOCATORS[args.method](sc))
    _emit(payload)
    if args.out:
        _write_out(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_simulate(args) -> int:
    if args.trials < 1:
        raise ValueError(f"--trials must be >= 1, got {args.trials}")
    sc = _load_scenario(args)
    plan = _ALLOCATORS[args.method](sc)
    dist = end_to_end(sc.workflow, sc.server_map(), plan.binding, plan.branch_rates, sc.grid)
    result = simulate(plan, sc, trials=args.trials, seed=args.seed, analytic=dist)
    payload = {"scenario": sc.name or "scenario", "method": plan.method}
    payload.update(sim_result_to_json(result))
    _emit(payload)
    if args.out:
        _write_out(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_compare(args) -> int:
    if args.trials < 1:
        raise ValueError(f"--trials must be >= 1, got {args.trials}")
    sc = _load_scenario(args)
    report = compare(sc, trials=args.trials, seed=args.seed)
    _emit(report_to_json(report))
    if args.out:
        _write_out(args.out, report_to_csv(report))
    return 0


def _cmd_fit(args) -> int:
    try:
        text = args.samples.read_text()
    except OSError as exc:
        raise ValueError(f"cannot read {args.samples}: {exc}") from None
    values = []
    for i, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{args.samples}:{i}: not a number: {line!r}") from None
    spec = fit_delayed_exponential(values)
    payload = dist_to_json(spec)
    _emit(payload)
    if args.out:
        _write_out(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


_COMMANDS = {
    "analyze": _cmd_analyze,
    "allocate": _cmd_allocate,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "fit": _cmd_fit,
}

_EXIT_INVALID = (ScenarioError, InvalidDistributionError, ValueError)
_EXIT_REFUSED = (
    InstabilityError,
    InfeasibleRatesError,
    DivergenceError,
    HorizonError,
    GridOverflowError,
    AllocationError,
)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CombinatorialLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _EXIT_INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _EXIT_REFUSED as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DcflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
