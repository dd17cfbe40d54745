"""Server allocation and task-rate scheduling.

Three allocators produce comparable plans for a scenario:

* ``manage`` (the proposed method): slow servers go to the components
  with the lowest arrival rates, recursively, so the fast servers end
  up where the data pressure is highest.
* ``baseline_allocate``: the intuition-driven heuristic of filling
  serial chains with the best servers first, since a serial stage's
  mean adds in full while a parallel branch can hide behind its
  siblings.
* ``optimal_allocate``: exhaustive search over injective server
  assignments, pruned of permutations that provably cannot change the
  objective.

All three share one rate scheduler: a parallel node's arrival rate is
split so every branch has the same rate-response product
lambda_i * RT_i(lambda_i). For load-independent branches that is a
closed form; with queue-model servers the common product is found by
bisection, with each branch inverted exactly or by a bracketed root
solve.

Plans carry the binding, the per-parallel rate splits keyed by node
path, and the end-to-end mean/variance of the resulting response.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

from scipy import optimize

from .distributions import DistributionSpec, ServerDescriptor, moments, unloaded_mean
from .errors import (
    AllocationError,
    CombinatorialLimitError,
    DcflowError,
    InfeasibleRatesError,
    InstabilityError,
)
from .numeric import GridConfig, numeric_moments
from .workflow import (
    NodeKind,
    Scenario,
    WorkflowNode,
    end_to_end,
    internal_dap_count,
    iter_slots,
    parallel_paths,
    slot_ids,
)

PRODUCT_TOL = 1e-12
MAX_EQUILIBRIUM_ITER = 200
MAX_EXHAUSTIVE_SLOTS = 10
MAX_EXHAUSTIVE_ASSIGNMENTS = 5_000_000
# assignments whose search key sits this close (relatively) to the best
# one are re-measured with the reporting evaluator before the winner is
# declared; covers the fold-order noise of the grid pipeline
RE_EVAL_MARGIN = 1e-4


# ---------------------------------------------------------------------------
# Rate scheduling: the equilibrium lambda_i * RT_i all equal


def rate_schedule(lam: float, branch_response_means: Sequence[float]) -> list[float]:
    """Split lam across branches with fixed response means.

    The equilibrium lambda_i * RT_i all-equal with sum lam has the
    closed form lambda_i = lam * (1/RT_i) / sum(1/RT_j).
    """
    if not (isinstance(lam, (int, float)) and math.isfinite(lam) and lam > 0):
        raise ValueError(f"arrival rate must be positive and finite, got {lam!r}")
    rts = [float(rt) for rt in branch_response_means]
    if not rts:
        raise ValueError("need at least one branch")
    if any(not math.isfinite(rt) or rt <= 0 for rt in rts):
        raise ValueError(f"response means must be positive and finite, got {rts}")
    inv = [1.0 / rt for rt in rts]
    total = sum(inv)
    return [lam * w / total for w in inv]


def rate_schedule_queued(lam: float, service_rates: Sequence[float]) -> list[float]:
    """Split lam across queue-model branches (load-dependent RT).

    Solves lambda_i / (mu_i - lambda_i) all-equal with sum lam by
    bisection on the common product; every branch stays strictly
    stable.
    """
    mus = [float(mu) for mu in service_rates]
    if any(not math.isfinite(mu) or mu <= 0 for mu in mus):
        raise ValueError(f"service rates must be positive and finite, got {mus}")
    branches = [_QueueBranch(mu) for mu in mus]
    return _solve_equilibrium(lam, branches)


class _QueueBranch:
    """lambda * RT = lambda/(mu - lambda), inverted exactly."""

    def __init__(self, mu: float):
        self.capacity = mu

    def rate_for_product(self, c: float) -> float:
        return c * self.capacity / (1.0 + c)

    def response_mean(self, lam: float) -> float:
        return 1.0 / (self.capacity - lam)


class _ConstantBranch:
    """Load-independent branch: RT fixed, capacity unbounded."""

    def __init__(self, rt: float):
        if rt <= 0:
            raise ValueError(f"branch response mean must be positive, got {rt}")
        self.capacity = math.inf
        self.rt = rt

    def rate_for_product(self, c: float) -> float:
        return c / self.rt

    def response_mean(self, lam: float) -> float:
        return self.rt


class _CompositeBranch:
    """Series of a constant part, queue members, and nested parallels.

    RT(lam) = const + sum 1/(mu_j - lam) + sum nested_k(lam); the
    product equation is inverted by a bracketed root solve.
    """

    def __init__(self, const: float, queue_mus: Sequence[float], nested: Sequence["_ParallelRT"]):
        self.const = const
        self.queue_mus = list(queue_mus)
        self.nested = list(nested)
        caps = [mu for mu in self.queue_mus] + [p.capacity for p in self.nested]
        self.capacity = min(caps) if caps else math.inf

    def response_mean(self, lam: float) -> float:
        rt = self.const
        for mu in self.queue_mus:
            rt += 1.0 / (mu - lam)
        for p in self.nested:
            rt += p.response_mean(lam)
        return rt

    def rate_for_product(self, c: float) -> float:
        if not self.queue_mus and not self.nested:
            return _ConstantBranch(self.const).rate_for_product(c)
        if not self.const and len(self.queue_mus) == 1 and not self.nested:
            return _QueueBranch(self.queue_mus[0]).rate_for_product(c)
        hi = self.capacity * (1.0 - 1e-12)

        def f(lam: float) -> float:
            return lam * self.response_mean(lam) - c

        if c <= 0.0:
            return 0.0
        if f(hi) <= 0.0:
            return hi
        return float(optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200))


class _ParallelRT:
    """Scheduling surrogate for a nested parallel branch.

    Splitting is resolved recursively; the reported response mean is
    the slowest child's mean under that split. This steers scheduling
    only; exact objectives always come from the numeric composition.
    """

    def __init__(self, branches: Sequence[object]):
        self.branches = list(branches)
        self.capacity = sum(b.capacity for b in self.branches)

    def split(self, lam: float) -> list[float]:
        return _solve_equilibrium(lam, self.branches)

    def response_mean(self, lam: float) -> float:
        rates = self.split(lam)
        return max(b.response_mean(r) for b, r in zip(self.branches, rates))

    def rate_for_product(self, c: float) -> float:
        if c <= 0.0:
            return 0.0
        if not math.isfinite(self.capacity):
            # all children load-independent: RT is flat in lam
            return c / self.response_mean(1.0)
        hi = self.capacity * (1.0 - 1e-12)

        def f(lam: float) -> float:
            return lam * self.response_mean(lam) - c

        if f(hi) <= 0.0:
            return hi
        return float(optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200))


def _solve_equilibrium(lam: float, branches: Sequence[object]) -> list[float]:
    """Rates with equal lambda_i * RT_i products summing to lam."""
    if not (isinstance(lam, (int, float)) and math.isfinite(lam) and lam > 0):
        raise ValueError(f"arrival rate must be positive and finite, got {lam!r}")
    capacity = sum(b.capacity for b in branches)
    if capacity <= lam:
        raise InfeasibleRatesError(
            f"arrival rate {lam:g} meets or exceeds total branch capacity {capacity:g}"
        )
    if all(isinstance(b, _ConstantBranch) for b in branches):
        return rate_schedule(lam, [b.rt for b in branches])

    def total(c: float) -> float:
        return sum(b.rate_for_product(c) for b in branches)

    c_hi = 1.0
    for _ in range(200):
        if total(c_hi) >= lam:
            break
        c_hi *= 2.0
    else:
        raise DcflowError("equilibrium solver failed to bracket the rate split")
    c_lo = 0.0
    tol = PRODUCT_TOL * max(1.0, lam)
    for _ in range(MAX_EQUILIBRIUM_ITER):
        mid = 0.5 * (c_lo + c_hi)
        t = total(mid)
        if abs(t - lam) <= tol:
            c_hi = mid
            break
        if t < lam:
            c_lo = mid
        else:
            c_hi = mid
    rates = [b.rate_for_product(c_hi) for b in branches]
    scale = lam / sum(rates)
    return [r * scale for r in rates]


# ---------------------------------------------------------------------------
# Branch models from a bound workflow


@lru_cache(maxsize=4096)
def _dist_mean(spec: DistributionSpec) -> float:
    return moments(spec)[0]


def _slot_mean(server: ServerDescriptor, load: float | None, slot: str) -> float:
    if server.model == "explicit":
        return _dist_mean(server.distribution)
    if load is None:
        raise InfeasibleRatesError(
            f"slot {slot!r} is bound to queue server {server.id!r}"
            " but no arrival rate reaches it"
        )
    if load >= server.service_rate:
        raise InstabilityError(
            f"slot {slot!r} unstable: arrival rate {load:g} >="
            f" service rate {server.service_rate:g} of server {server.id!r}"
        )
    return 1.0 / (server.service_rate - load)


def _branch_model(
    node: WorkflowNode,
    servers: Mapping[str, ServerDescriptor],
    binding: Mapping[str, str],
):
    """Rate-response model of one parallel branch.

    Members with their own arrival_rate decouple from the branch load
    and fold into the constant term; inherited-load queue slots and
    nested parallels keep their load dependence.
    """
    const = 0.0
    queue_mus: list[float] = []
    nested: list[_ParallelRT] = []

    def absorb(n: WorkflowNode) -> None:
        nonlocal const
        if n.arrival_rate is not None:
            const += _fixed_subtree_mean(n, n.arrival_rate, servers, binding)
            return
        if n.kind is NodeKind.SLOT:
            server = servers[binding[n.slot_id]]
            if server.model == "explicit":
                const += _dist_mean(server.distribution)
            else:
                queue_mus.append(server.service_rate)
            return
        if n.kind is NodeKind.SERIES:
            for child in n.children:
                absorb(child)
            return
        if n.branch_rates is not None:
            const += _fixed_parallel_mean(n, n.branch_rates, servers, binding)
            return
        sub = _ParallelRT([_branch_model(c, servers, binding) for c in n.children])
        if math.isinf(sub.capacity):
            const += sub.response_mean(1.0)
        else:
            nested.append(sub)

    if node.arrival_rate is not None or (
        node.kind is NodeKind.PARALLEL and node.branch_rates is not None
    ):
        # whole branch decoupled from the parent's split
        rate = node.arrival_rate
        return _ConstantBranch(_fixed_subtree_mean(node, rate, servers, binding))
    absorb(node)
    if not queue_mus and not nested:
        return _ConstantBranch(const)
    if const == 0.0 and len(queue_mus) == 1 and not nested:
        return _QueueBranch(queue_mus[0])
    return _CompositeBranch(const, queue_mus, nested)


def _fixed_subtree_mean(
    node: WorkflowNode,
    rate: float | None,
    servers: Mapping[str, ServerDescriptor],
    binding: Mapping[str, str],
) -> float:
    """Scheduling mean of a subtree whose incoming rate is fixed."""
    if node.kind is NodeKind.SLOT:
        return _slot_mean(servers[binding[node.slot_id]], rate, node.slot_id)
    if node.kind is NodeKind.SERIES:
        total = 0.0
        for child in node.children:
            child_rate = child.arrival_rate if child.arrival_rate is not None else rate
            total += _fixed_subtree_mean(child, child_rate, servers, binding)
        return total
    own = node.arrival_rate if node.arrival_rate is not None else rate
    if node.branch_rates is not None:
        return _fixed_parallel_mean(node, node.branch_rates, servers, binding)
    models = [_branch_model(c, servers, binding) for c in node.children]
    par = _ParallelRT(models)
    if own is None:
        raise InfeasibleRatesError(
            "parallel node needs an arrival rate to schedule its branches"
        )
    return par.response_mean(own)


def _fixed_parallel_mean(node, rates, servers, binding) -> float:
    means = []
    for child, r in zip(node.children, rates):
        child_rate = child.arrival_rate if child.arrival_rate is not None else float(r)
        means.append(_fixed_subtree_mean(child, child_rate, servers, binding))
    return max(means)


def _subtree_has_queue(
    node: WorkflowNode, servers: Mapping[str, ServerDescriptor], binding: Mapping[str, str]
) -> bool:
    return any(
        servers[binding[s.slot_id]].model == "queue"
        for _, s in iter_slots(node)
        if s.slot_id in binding
    )


def complete_branch_rates(
    root: WorkflowNode,
    servers: Mapping[str, ServerDescriptor] | Sequence[ServerDescriptor],
    binding: Mapping[str, str],
) -> dict[str, tuple[float, ...]]:
    """Resolve the rate split of every parallel node in the tree.

    Declared branch_rates are honored as-is; everything else comes
    from the equilibrium scheduler. Parallel nodes with no resolvable
    arrival rate are skipped when nothing below them is load
    dependent, and refused otherwise.
    """
    by_id = servers if isinstance(servers, Mapping) else {s.id: s for s in servers}
    out: dict[str, tuple[float, ...]] = {}

    def walk(node: WorkflowNode, path: str, incoming: float | None) -> None:
        rate = node.arrival_rate if node.arrival_rate is not None else incoming
        if node.kind is NodeKind.SLOT:
            return
        if node.kind is NodeKind.SERIES:
            for i, child in enumerate(node.children):
                walk(child, f"{path}/{i}" if path else str(i), rate)
            return
        if node.branch_rates is not None:
            split: Sequence[float] | None = node.branch_rates
        elif rate is None:
            if _subtree_has_queue(node, by_id, binding):
                raise InfeasibleRatesError(
                    f"parallel node at path {path or '<root>'!r} contains queue servers"
                    " but no arrival rate reaches it"
                )
            split = None
        else:
            models = [_branch_model(c, by_id, binding) for c in node.children]
            split = _solve_equilibrium(rate, models)
        if split is not None:
            out[path] = tuple(float(r) for r in split)
        for i, child in enumerate(node.children):
            child_rate = None if split is None else float(split[i])
            walk(child, f"{path}/{i}" if path else str(i), child_rate)

    walk(root, "", None)
    return out


# ---------------------------------------------------------------------------
# Allocation plans


@dataclass(frozen=True)
class AllocationPlan:
    method: str
    binding: Mapping[str, str]
    branch_rates: Mapping[str, tuple[float, ...]]
    mean: float
    variance: float


def plan_to_json(plan: AllocationPlan) -> dict:
    return {
        "method": plan.method,
        "binding": dict(plan.binding),
        "branch_rates": {path: list(rates) for path, rates in plan.branch_rates.items()},
        "mean": plan.mean,
        "variance": plan.variance,
    }


def plan_from_json(obj: dict) -> AllocationPlan:
    required = {"method", "binding", "branch_rates", "mean", "variance"}
    missing = required - set(obj)
    if missing:
        raise ValueError(f"plan JSON missing keys: {', '.join(sorted(missing))}")
    return AllocationPlan(
        method=str(obj["method"]),
        binding=dict(obj["binding"]),
        branch_rates={
            str(path): tuple(float(r) for r in rates)
            for path, rates in obj["branch_rates"].items()
        },
        mean=float(obj["mean"]),
        variance=float(obj["variance"]),
    )


def validate_plan(plan: AllocationPlan, scenario: Scenario) -> list[str]:
    """Consistency problems of a plan against its scenario."""
    out: list[str] = []
    sids = slot_ids(scenario.workflow)
    by_id = scenario.server_map()
    unbound = [s for s in sids if s not in plan.binding]
    if unbound:
        out.append(f"unbound slots: {', '.join(unbound)}")
    used: dict[str, str] = {}
    for sid, srv in plan.binding.items():
        if sid not in sids:
            out.append(f"binding names unknown slot {sid!r}")
        if srv not in by_id:
            out.append(f"binding names unknown server {srv!r}")
        elif srv in used:
            out.append(f"server {srv!r} bound to both {used[srv]!r} and {sid!r}")
        else:
            used[srv] = sid
    if out:
        return out
    from .workflow import RATE_SUM_TOL, node_at, slot_loads

    for path, rates in plan.branch_rates.items():
        try:
            node = node_at(scenario.workflow, path)
        except (IndexError, ValueError):
            out.append(f"branch_rates names unknown node path {path!r}")
            continue
        if node.kind is not NodeKind.PARALLEL:
            out.append(f"branch_rates path {path!r} is not a parallel node")
            continue
        if len(rates) != len(node.children):
            out.append(f"branch_rates at {path!r} has {len(rates)} entries"
                       f" for {len(node.children)} children")
    loads = slot_loads(scenario.workflow, plan.branch_rates)
    for path, rates in plan.branch_rates.items():
        parent_rate = _incoming_rate(scenario.workflow, path, plan.branch_rates)
        if parent_rate is not None and abs(sum(rates) - parent_rate) > RATE_SUM_TOL:
            out.append(
                f"branch_rates at {path!r} sum {sum(rates):g} != arrival rate {parent_rate:g}"
            )
    for sid, load in loads.items():
        server = by_id.get(plan.binding.get(sid, ""), None)
        if server is not None and server.model == "queue":
            if load is not None and load >= server.service_rate:
                out.append(
                    f"slot {sid!r} unstable: load {load:g} >= rate {server.service_rate:g}"
                )
    return out


def _incoming_rate(
    root: WorkflowNode, path: str, rates: Mapping[str, Sequence[float]]
) -> float | None:
    """Arrival rate entering the node at ``path`` under ``rates``."""
    node = root
    rate = root.arrival_rate
    walked = ""
    if path:
        for part in path.split("/"):
            idx = int(part)
            if node.kind is NodeKind.PARALLEL:
                split = rates.get(walked, node.branch_rates)
                rate = None if split is None else float(split[idx])
            node = node.children[idx]
            walked = f"{walked}/{part}" if walked else part
            if node.arrival_rate is not None:
                rate = node.arrival_rate
    return rate


# ---------------------------------------------------------------------------
# Algorithm family: proposed allocation


def _pool_sorted_slow_first(pool: Sequence[ServerDescriptor]) -> list[ServerDescriptor]:
    return sorted(pool, key=lambda s: (-unloaded_mean(s), s.id))


def sdcc_allocate(
    pool: Sequence[ServerDescriptor],
    dccs: Sequence[tuple[WorkflowNode, float | None]],
) -> dict[str, str]:
    """Bind a list of components against a server pool.

    Servers are sorted by unloaded response mean descending, the
    components by arrival rate ascending (unknown rates last), and
    matched head-to-head so the fastest servers serve the highest
    pressure. Series and parallel components recurse.
    """
    servers = _pool_sorted_slow_first(pool)
    order = sorted(
        range(len(dccs)),
        key=lambda i: (dccs[i][1] if dccs[i][1] is not None else math.inf, i),
    )
    total_slots = sum(len(slot_ids(node)) for node, _ in dccs)
    if total_slots > len(servers):
        raise AllocationError(
            f"server pool exhausted: {len(servers)} servers for {total_slots} slots"
        )
    binding: dict[str, str] = {}
    cursor = 0
    for i in order:
        node, rate = dccs[i]
        n = len(slot_ids(node))
        chunk = servers[cursor : cursor + n]
        cursor += n
        binding.update(_allocate_component(chunk, node, rate))
    return binding


def _allocate_component(
    servers: list[ServerDescriptor], node: WorkflowNode, rate: float | None
) -> dict[str, str]:
    if node.kind is NodeKind.SLOT:
        return {node.slot_id: servers[0].id}
    if node.kind is NodeKind.SERIES:
        sub = [
            (child, child.arrival_rate if child.arrival_rate is not None else rate)
            for child in node.children
        ]
        return sdcc_allocate(servers, sub)
    binding, _ = pdcc_allocate(servers, node, rate)
    return binding


def pdcc_allocate(
    pool: Sequence[ServerDescriptor],
    node: WorkflowNode,
    lam: float | None = None,
    servers_by_id: Mapping[str, ServerDescriptor] | None = None,
) -> tuple[dict[str, str], tuple[float, ...] | None]:
    """Bind a parallel component and schedule its branch rates.

    Known per-branch rates order the children by rate ascending;
    unknown rates order them by internal junction count descending so
    the structurally deeper branches get the slower end of the pool.
    Returns the binding fragment and the resolved rate split (None
    when no rate information exists to schedule with).
    """
    if node.kind is not NodeKind.PARALLEL:
        raise ValueError("pdcc_allocate expects a parallel node")
    servers = _pool_sorted_slow_first(pool)
    total_slots = len(slot_ids(node))
    if total_slots > len(servers):
        raise AllocationError(
            f"server pool exhausted: {len(servers)} servers for {total_slots} slots"
        )
    rate = node.arrival_rate if node.arrival_rate is not None else lam
    if node.branch_rates is not None:
        order = sorted(
            range(len(node.children)), key=lambda i: (node.branch_rates[i], i)
        )
        child_rates: list[float | None] = list(node.branch_rates)
    else:
        order = sorted(
            range(len(node.children)),
            key=lambda i: (-internal_dap_count(node.children[i]), i),
        )
        child_rates = [None] * len(node.children)

    binding: dict[str, str] = {}
    cursor = 0
    for i in order:
        child = node.children[i]
        n = len(slot_ids(child))
        chunk = servers[cursor : cursor + n]
        cursor += n
        binding.update(_allocate_component(chunk, child, child_rates[i]))

    rates: tuple[float, ...] | None
    if node.branch_rates is not None:
        rates = tuple(float(r) for r in node.branch_rates)
    elif rate is not None:
        by_id = dict(servers_by_id) if servers_by_id else {}
        for s in servers:
            by_id.setdefault(s.id, s)
        models = [_branch_model(c, by_id, binding) for c in node.children]
        rates = tuple(_solve_equilibrium(rate, models))
    else:
        rates = None
    return binding, rates


def _trimmed_pool(scenario: Scenario) -> list[ServerDescriptor]:
    """The fastest N servers, N = slot count; errors if short."""
    n = len(slot_ids(scenario.workflow))
    pool = sorted(scenario.servers, key=lambda s: (unloaded_mean(s), s.id))
    if len(pool) < n:
        raise AllocationError(
            f"server pool exhausted: {len(pool)} servers for {n} slots"
        )
    return pool[:n]


def _finish_plan(scenario: Scenario, binding: dict[str, str], method: str) -> AllocationPlan:
    by_id = scenario.server_map()
    rates = complete_branch_rates(scenario.workflow, by_id, binding)
    dist = end_to_end(scenario.workflow, by_id, binding, rates, scenario.grid)
    mean, variance = numeric_moments(dist)
    return AllocationPlan(
        method=method, binding=binding, branch_rates=rates, mean=mean, variance=variance
    )


def manage(scenario: Scenario) -> AllocationPlan:
    """The proposed allocator: rate-sorted recursive matching."""
    pool = _trimmed_pool(scenario)
    root = scenario.workflow
    root_rate = root.arrival_rate
    if root.kind is NodeKind.SERIES:
        dccs = [
            (child, child.arrival_rate if child.arrival_rate is not None else root_rate)
            for child in root.children
        ]
        binding = sdcc_allocate(pool, dccs)
    elif root.kind is NodeKind.PARALLEL:
        binding, _ = pdcc_allocate(pool, root, root_rate)
    else:
        binding = {root.slot_id: _pool_sorted_slow_first(pool)[0].id}
    return _finish_plan(scenario, binding, "proposed")


def baseline_allocate(scenario: Scenario) -> AllocationPlan:
    """Heuristic comparator: serial components get the best servers.

    Components are served in class order (series chains, then single
    slots, then parallel groups), each class by arrival rate
    ascending, slots in document order, servers best first. Rates are
    scheduled by the same equilibrium as the proposed method.
    """
    pool = sorted(_trimmed_pool(scenario), key=lambda s: (unloaded_mean(s), s.id))
    root = scenario.workflow
    if root.kind is NodeKind.SERIES:
        dccs = [
            (child, child.arrival_rate if child.arrival_rate is not None else root.arrival_rate)
            for child in root.children
        ]
    else:
        dccs = [(root, root.arrival_rate)]
    class_rank = {NodeKind.SERIES: 0, NodeKind.SLOT: 1, NodeKind.PARALLEL: 2}
    order = sorted(
        range(len(dccs)),
        key=lambda i: (
            class_rank[dccs[i][0].kind],
            dccs[i][1] if dccs[i][1] is not None else math.inf,
            i,
        ),
    )
    binding: dict[str, str] = {}
    cursor = 0
    for i in order:
        node, _ = dccs[i]
        for sid in slot_ids(node):
            binding[sid] = pool[cursor].id
            cursor += 1
    return _finish_plan(scenario, binding, "baseline")


# ---------------------------------------------------------------------------
# Exhaustive optimal


def _interchangeable_groups(root: WorkflowNode) -> list[list[int]]:
    """Index groups (into the document slot order) that provably
    commute: bare-slot children of a parallel whose rates are either
    scheduler-determined or all equal."""
    pos = {sid: i for i, sid in enumerate(slot_ids(root))}
    groups: list[list[int]] = []
    for _, node in parallel_paths(root):
        if node.branch_rates is not None and len(set(node.branch_rates)) > 1:
            continue
        idx = [
            pos[child.slot_id]
            for child in node.children
            if child.kind is NodeKind.SLOT
        ]
        if len(idx) >= 2:
            groups.append(idx)
    return groups


def optimal_allocate(scenario: Scenario) -> AllocationPlan:
    """Exhaustive search over injective server assignments.

    Enumerates permutations in lexicographic server-id order, prunes
    those that only permute interchangeable parallel branches, and
    skips infeasible assignments. Assignments within RE_EVAL_MARGIN of
    the best search key, plus the proposed and baseline bindings, are
    then re-measured with the reporting evaluator and the minimizer of
    the scenario objective wins; the search can therefore never report
    a worse number than either heuristic.
    """
    root = scenario.workflow
    sids = slot_ids(root)
    n = len(sids)
    if n > MAX_EXHAUSTIVE_SLOTS:
        raise CombinatorialLimitError(
            f"exhaustive search refuses {n} slots (limit {MAX_EXHAUSTIVE_SLOTS})"
        )
    server_ids = sorted(s.id for s in scenario.servers)
    m = len(server_ids)
    if m < n:
        raise AllocationError(f"server pool exhausted: {m} servers for {n} slots")
    count = 1
    for k in range(n):
        count *= m - k
        if count > MAX_EXHAUSTIVE_ASSIGNMENTS:
            raise CombinatorialLimitError(
                f"exhaustive search over {m} servers and {n} slots exceeds"
                f" {MAX_EXHAUSTIVE_ASSIGNMENTS} assignments"
            )
    by_id = scenario.server_map()
    groups = _interchangeable_groups(root)
    want_var = scenario.objective == "variance"

    # independent per-child evaluation when the root is a series whose
    # children never share rate information
    series_children = root.children if root.kind is NodeKind.SERIES else None
    child_slot_idx: list[list[int]] = []
    if series_children:
        pos = {sid: i for i, sid in enumerate(sids)}
        child_slot_idx = [[pos[s] for s in slot_ids(c)] for c in series_children]
    child_cache: dict[tuple[int, tuple[str, ...]], tuple[float, float] | None] = {}

    def eval_child(ci: int, ids: tuple[str, ...]) -> tuple[float, float] | None:
        key = (ci, ids)
        if key in child_cache:
            return child_cache[key]
        child = series_children[ci]
        rate = (
            child.arrival_rate
            if child.arrival_rate is not None
            else root.arrival_rate
        )
        sub_binding = dict(zip(slot_ids(child), ids))
        try:
            sub_root = child if rate is None else _with_rate(child, rate)
            rates = complete_branch_rates(sub_root, by_id, sub_binding)
            dist = end_to_end(sub_root, by_id, sub_binding, rates, scenario.grid)
            result: tuple[float, float] | None = numeric_moments(dist)
        except (InfeasibleRatesError, InstabilityError):
            result = None
        child_cache[key] = result
        return result

    best_key: float | None = None
    entries: list[tuple[float, tuple[str, ...]]] = []

    def slack() -> float:
        return RE_EVAL_MARGIN * (abs(best_key) + 1e-9)

    for perm in itertools.permutations(server_ids, n):
        if any(
            perm[group[j]] > perm[group[j + 1]]
            for group in groups
            for j in range(len(group) - 1)
        ):
            continue
        if series_children:
            total_mean = 0.0
            total_var = 0.0
            ok = True
            for ci, idx in enumerate(child_slot_idx):
                got = eval_child(ci, tuple(perm[k] for k in idx))
                if got is None:
                    ok = False
                    break
                total_mean += got[0]
                total_var += got[1]
            if not ok:
                continue
            key = total_var if want_var else total_mean
        else:
            binding = dict(zip(sids, perm))
            try:
                rates = complete_branch_rates(root, by_id, binding)
                dist = end_to_end(root, by_id, binding, rates, scenario.grid)
                mean, variance = numeric_moments(dist)
            except (InfeasibleRatesError, InstabilityError):
                continue
            key = variance if want_var else mean
        if best_key is None or key < best_key:
            best_key = key
        if key <= best_key + slack():
            entries.append((key, perm))
            if len(entries) > 64:
                entries = [e for e in entries if e[0] <= best_key + slack()]
    if best_key is None:
        raise AllocationError("no feasible server assignment exists")

    # final ranking uses the reporting evaluator itself: the search key
    # above carries additivity and fold-order noise, so every near-tie
    # is re-measured, and the two heuristic bindings always compete so
    # their published numbers can never undercut the winner here
    candidates = [dict(zip(sids, perm)) for key, perm in entries if key <= best_key + slack()]
    for heuristic in (manage, baseline_allocate):
        try:
            candidates.append(dict(heuristic(scenario).binding))
        except DcflowError:
            continue
    best_plan: AllocationPlan | None = None
    seen: set[tuple[tuple[str, str], ...]] = set()
    for binding in candidates:
        marker = tuple(sorted(binding.items()))
        if marker in seen:
            continue
        seen.add(marker)
        try:
            plan = _finish_plan(scenario, binding, "optimal")
        except (InfeasibleRatesError, InstabilityError, AllocationError):
            continue
        if best_plan is None:
            best_plan = plan
            continue
        value = plan.variance if want_var else plan.mean
        held = best_plan.variance if want_var else best_plan.mean
        if value < held:
            best_plan = plan
    if best_plan is None:
        raise AllocationError("no feasible server assignment exists")
    return best_plan


def _with_rate(node: WorkflowNode, rate: float) -> WorkflowNode:
    from dataclasses import replace

    return node if node.arrival_rate == rate else replace(node, arrival_rate=rate)


__all__ = [
    "AllocationPlan",
    "baseline_allocate",
    "complete_branch_rates",
    "manage",
    "optimal_allocate",
    "pdcc_allocate",
    "plan_from_json",
    "plan_to_json",
    "rate_schedule",
    "rate_schedule_queued",
    "sdcc_allocate",
    "validate_plan",
]
