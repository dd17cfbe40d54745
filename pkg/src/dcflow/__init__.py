"""Response-time analysis for series-parallel data-computing workflows.

The pipeline: describe service-time laws (``distributions``), put
them on a grid and compose them (``numeric``), arrange them in a
workflow tree (``workflow``), choose who serves what and at which
rate (``allocation``), and check everything by Monte Carlo
(``simulate``). The ``cli`` module fronts it all from the shell.
"""

from importlib import resources
from pathlib import Path

from .allocation import (
    AllocationPlan,
    baseline_allocate,
    complete_branch_rates,
    manage,
    optimal_allocate,
    pdcc_allocate,
    plan_from_json,
    plan_to_json,
    rate_schedule,
    rate_schedule_queued,
    sdcc_allocate,
    validate_plan,
)
from .distributions import (
    DistributionSpec,
    Family,
    ServerDescriptor,
    TailShape,
    atoms,
    cdf_values,
    dist_from_json,
    dist_to_json,
    eval_cdf,
    fit_delayed_exponential,
    moments,
    quantile,
    queue_response,
    sample,
    sample_many,
    server_from_json,
    server_to_json,
    unloaded_mean,
    validate,
)
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
from .numeric import (
    GridConfig,
    NumericDistribution,
    cdf_at,
    cdf_at_many,
    convolve,
    discretize,
    from_csv,
    ks_distance,
    max_compose,
    numeric_moments,
    to_csv,
    validate_numeric,
)
from .simulate import (
    ScenarioReport,
    SimResult,
    compare,
    improvement_pct,
    report_to_csv,
    report_to_json,
    simulate,
)
from .workflow import (
    Classification,
    NodeKind,
    Scenario,
    WorkflowNode,
    classify,
    end_to_end,
    internal_dap_count,
    parse_scenario,
    scenario_to_json,
    slot_ids,
)

__version__ = "0.1.0"


def scenario_path(name: str) -> Path:
    """Filesystem path of a shipped scenario (e.g. "fig5")."""
    path = resources.files(__name__) / "scenarios" / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no shipped scenario named {name!r}")
    return Path(str(path))


def shipped_scenarios() -> list[str]:
    """Names of the scenario files bundled with the package."""
    folder = resources.files(__name__) / "scenarios"
    return sorted(p.name[: -len(".json")] for p in folder.iterdir() if p.name.endswith(".json"))
