"""Monte Carlo replay of a bound, rate-scheduled workflow.

Each trial draws one response time per slot and folds them through
the workflow tree exactly as the analytic pipeline does: series by
sum, parallel by max. Queue-model slots draw from the stationary
response law at their scheduled load; there is no event-by-event
queue replay.

Randomness is counter-based: slot k in trial block b owns the Philox
stream keyed by (seed, k, b), so results are bit-reproducible and
independent of how trials are partitioned into blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .allocation import (
    AllocationPlan,
    baseline_allocate,
    manage,
    optimal_allocate,
    validate_plan,
)
from .distributions import DistributionSpec, draw_count, transform_uniforms
from .errors import DcflowError, InstabilityError
from .numeric import NumericDistribution, ks_distance
from .workflow import NodeKind, Scenario, WorkflowNode, end_to_end, iter_slots, response_spec, slot_loads

BLOCK = 1 << 17
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimResult:
    trials: int
    seed: int
    mean: float
    variance: float
    ks_vs_analytic: float | None = None
    samples_digest: float | None = None


def _slot_samples(
    spec: DistributionSpec, slot_idx: int, block: int, n: int, seed: int
) -> np.ndarray:
    key = np.array(
        [seed & _MASK64, ((slot_idx << 32) | block) & _MASK64], dtype=np.uint64
    )
    rng = np.random.Generator(np.random.Philox(key=key))
    u = rng.random((n, draw_count(spec)))
    return transform_uniforms(spec, u)


def _combine(node: WorkflowNode, per_slot: Mapping[str, np.ndarray]) -> np.ndarray:
    if node.kind is NodeKind.SLOT:
        return per_slot[node.slot_id]
    acc = _combine(node.children[0], per_slot)
    for child in node.children[1:]:
        nxt = _combine(child, per_slot)
        acc = acc + nxt if node.kind is NodeKind.SERIES else np.maximum(acc, nxt)
    return acc


def draw_end_to_end(
    plan: AllocationPlan, scenario: Scenario, trials: int, seed: int
) -> np.ndarray:
    """All end-to-end samples of a plan, one per trial."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    problems = validate_plan(plan, scenario)
    if problems:
        joined = "; ".join(problems)
        if any("unstable" in p for p in problems):
            raise InstabilityError(joined)
        raise DcflowError(f"plan is not simulatable: {joined}")
    by_id = scenario.server_map()
    loads = slot_loads(scenario.workflow, plan.branch_rates)
    slots = [s for _, s in iter_slots(scenario.workflow)]
    specs = [
        response_spec(by_id[plan.binding[s.slot_id]], loads[s.slot_id], s.slot_id)
        for s in slots
    ]
    out = np.empty(trials)
    for block in range((trials + BLOCK - 1) // BLOCK):
        lo = block * BLOCK
        n = min(BLOCK, trials - lo)
        per_slot = {
            s.slot_id: _slot_samples(spec, k, block, n, seed)
            for k, (s, spec) in enumerate(zip(slots, specs))
        }
        out[lo : lo + n] = _combine(scenario.workflow, per_slot)
    return out


def simulate(
    plan: AllocationPlan,
    scenario: Scenario,
    trials: int = 100_000,
    seed: int = 42,
    analytic: NumericDistribution | None = None,
) -> SimResult:
    """Sample statistics of a plan's end-to-end response.

    When the analytic distribution is passed along, the result also
    carries the KS distance between it and the empirical samples.
    """
    samples = draw_end_to_end(plan, scenario, trials, seed)
    ks = None if analytic is None else ks_distance(analytic, samples)
    variance = float(np.var(samples, ddof=1)) if trials > 1 else 0.0
    return SimResult(
        trials=trials,
        seed=seed,
        mean=float(np.mean(samples)),
        variance=variance,
        ks_vs_analytic=ks,
        samples_digest=float(np.sum(samples)),
    )


def sim_result_to_json(result: SimResult) -> dict:
    out: dict = {
        "trials": result.trials,
        "seed": result.seed,
        "mean": result.mean,
        "variance": result.variance,
    }
    if result.ks_vs_analytic is not None:
        out["ks_vs_analytic"] = result.ks_vs_analytic
    if result.samples_digest is not None:
        out["samples_digest"] = result.samples_digest
    return out


# ---------------------------------------------------------------------------
# Method comparison reports


def improvement_pct(baseline: float, proposed: float) -> float:
    """(baseline - proposed) / baseline, in percent."""
    if baseline == 0.0:
        return 0.0
    return (baseline - proposed) / baseline * 100.0


@dataclass(frozen=True)
class ReportRow:
    method: str
    analytic_mean: float
    analytic_variance: float
    simulated_mean: float
    simulated_variance: float
    ks_vs_analytic: float


@dataclass(frozen=True)
class ScenarioReport:
    scenario: str
    rows: tuple[ReportRow, ...]
    mean_improvement_pct: float
    var_improvement_pct: float
    trials: int
    seed: int

    def row(self, method: str) -> ReportRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def compare(scenario: Scenario, trials: int = 100_000, seed: int = 42) -> ScenarioReport:
    """Proposed vs optimal vs baseline, analytic and simulated.

    The improvement percentages relate baseline to proposed on the
    analytic moments; the per-method rows carry everything needed to
    recompute them on the simulated side.
    """
    plans = [manage(scenario), optimal_allocate(scenario), baseline_allocate(scenario)]
    by_id = scenario.server_map()
    rows = []
    for plan in plans:
        dist = end_to_end(
            scenario.workflow, by_id, plan.binding, plan.branch_rates, scenario.grid
        )
        sim = simulate(plan, scenario, trials, seed, analytic=dist)
        rows.append(
            ReportRow(
                method=plan.method,
                analytic_mean=plan.mean,
                analytic_variance=plan.variance,
                simulated_mean=sim.mean,
                simulated_variance=sim.variance,
                ks_vs_analytic=sim.ks_vs_analytic,
            )
        )
    proposed = rows[0]
    baseline = rows[2]
    return ScenarioReport(
        scenario=scenario.name or "scenario",
        rows=tuple(rows),
        mean_improvement_pct=improvement_pct(baseline.analytic_mean, proposed.analytic_mean),
        var_improvement_pct=improvement_pct(
            baseline.analytic_variance, proposed.analytic_variance
        ),
        trials=trials,
        seed=seed,
    )


def report_to_json(report: ScenarioReport) -> dict:
    return {
        "scenario": report.scenario,
        "rows": [
            {
                "method": r.method,
                "analytic": {"mean": r.analytic_mean, "var": r.analytic_variance},
                "simulated": {"mean": r.simulated_mean, "var": r.simulated_variance},
                "ks_vs_analytic": r.ks_vs_analytic,
            }
            for r in report.rows
        ],
        "improvement": {
            "mean_pct": report.mean_improvement_pct,
            "var_pct": report.var_improvement_pct,
        },
        "trials": report.trials,
        "seed": report.seed,
    }


def report_from_json(obj: dict) -> ScenarioReport:
    rows = tuple(
        ReportRow(
            method=r["method"],
            analytic_mean=float(r["analytic"]["mean"]),
            analytic_variance=float(r["analytic"]["var"]),
            simulated_mean=float(r["simulated"]["mean"]),
            simulated_variance=float(r["simulated"]["var"]),
            ks_vs_analytic=float(r["ks_vs_analytic"]),
        )
        for r in obj["rows"]
    )
    return ScenarioReport(
        scenario=str(obj["scenario"]),
        rows=rows,
        mean_improvement_pct=float(obj["improvement"]["mean_pct"]),
        var_improvement_pct=float(obj["improvement"]["var_pct"]),
        trials=int(obj["trials"]),
        seed=int(obj["seed"]),
    )


def report_to_csv(report: ScenarioReport) -> str:
    """Method rows plus a final improvement row.

    In the improvement row the analytic columns hold the analytic
    mean/variance improvement percentages and the simulated columns
    hold the simulated-side ones.
    """
    lines = ["method,analytic_mean,analytic_variance,simulated_mean,simulated_variance,ks_vs_analytic"]
    for r in report.rows:
        lines.append(
            f"{r.method},{r.analytic_mean!r},{r.analytic_variance!r},"
            f"{r.simulated_mean!r},{r.simulated_variance!r},{r.ks_vs_analytic!r}"
        )
    proposed = report.row("proposed")
    baseline = report.row("baseline")
    sim_mean_pct = improvement_pct(baseline.simulated_mean, proposed.simulated_mean)
    sim_var_pct = improvement_pct(baseline.simulated_variance, proposed.simulated_variance)
    lines.append(
        f"improvement_pct,{report.mean_improvement_pct!r},{report.var_improvement_pct!r},"
        f"{sim_mean_pct!r},{sim_var_pct!r},"
    )
    return "\n".join(lines) + "\n"


__all__ = [
    "BLOCK",
    "ReportRow",
    "ScenarioReport",
    "SimResult",
    "compare",
    "draw_end_to_end",
    "improvement_pct",
    "report_from_json",
    "report_to_csv",
    "report_to_json",
    "sim_result_to_json",
    "simulate",
]
