"""Series-parallel workflow trees and their end-to-end composition.

A workflow is a tree of computing components: slots (a single server),
series chains (stages run one after another, response times add) and
parallel groups (data is partitioned across branches, the job finishes
when the last branch does, so responses combine by max).

Arrival rates flow down the tree: a series child inherits its parent's
rate unless it declares its own, and a parallel node splits its rate
across children per branch_rates. Rates matter to the response shape
only at queue-model servers; explicit-distribution servers ignore
load entirely.

Nodes are addressed two ways: node paths ("" for the root, "0/2" for
child indices, used in plans) and JSON paths ("workflow.children[0]",
used in parse errors).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Mapping, Sequence

from .distributions import (
    ServerDescriptor,
    server_from_json,
    server_to_json,
    validate_server,
)
from .errors import InfeasibleRatesError, InstabilityError, ScenarioError
from .numeric import GridConfig, NumericDistribution, convolve, discretize, max_compose

RATE_SUM_TOL = 1e-9


class NodeKind(str, Enum):
    SLOT = "slot"
    SERIES = "series"
    PARALLEL = "parallel"


class Classification(str, Enum):
    SINGLE_QUEUE = "single_queue"
    SDCC = "sdcc"
    PDCC = "pdcc"


@dataclass(frozen=True)
class WorkflowNode:
    kind: NodeKind
    slot_id: str | None = None
    bound_server: str | None = None
    children: tuple["WorkflowNode", ...] = ()
    arrival_rate: float | None = None
    branch_rates: tuple[float, ...] | None = None

    @staticmethod
    def slot(
        slot_id: str, server: str | None = None, arrival_rate: float | None = None
    ) -> "WorkflowNode":
        return WorkflowNode(
            NodeKind.SLOT, slot_id=slot_id, bound_server=server, arrival_rate=arrival_rate
        )

    @staticmethod
    def series(*children: "WorkflowNode", arrival_rate: float | None = None) -> "WorkflowNode":
        return WorkflowNode(NodeKind.SERIES, children=tuple(children), arrival_rate=arrival_rate)

    @staticmethod
    def parallel(
        *children: "WorkflowNode",
        arrival_rate: float | None = None,
        branch_rates: Sequence[float] | None = None,
    ) -> "WorkflowNode":
        return WorkflowNode(
            NodeKind.PARALLEL,
            children=tuple(children),
            arrival_rate=arrival_rate,
            branch_rates=None if branch_rates is None else tuple(branch_rates),
        )


def classify(node: WorkflowNode) -> Classification:
    if node.kind is NodeKind.SLOT:
        return Classification.SINGLE_QUEUE
    if node.kind is NodeKind.SERIES:
        return Classification.SDCC
    return Classification.PDCC


def _junction_weight(node: WorkflowNode) -> int:
    # weight counts a node's junctions including its own boundary:
    # a parallel's fork and join are 2; a series of k stages has k-1
    if node.kind is NodeKind.SLOT:
        return 0
    inner = sum(_junction_weight(c) for c in node.children)
    if node.kind is NodeKind.SERIES:
        return (len(node.children) - 1) + inner
    return 2 + inner


def internal_dap_count(node: WorkflowNode) -> int:
    """Fork/join junctions strictly inside the node.

    The node's own entry and exit are excluded, so a bare parallel of
    slots counts 0 even though it forks and joins at its boundary.
    """
    if node.kind is NodeKind.SLOT:
        return 0
    inner = sum(_junction_weight(c) for c in node.children)
    if node.kind is NodeKind.SERIES:
        return (len(node.children) - 1) + inner
    return inner


def iter_slots(node: WorkflowNode, path: str = "") -> Iterator[tuple[str, WorkflowNode]]:
    """(node_path, slot) pairs in document order."""
    if node.kind is NodeKind.SLOT:
        yield path, node
    for i, child in enumerate(node.children):
        yield from iter_slots(child, f"{path}/{i}" if path else str(i))


def slot_ids(node: WorkflowNode) -> list[str]:
    return [s.slot_id for _, s in iter_slots(node)]


def parallel_paths(node: WorkflowNode, path: str = "") -> list[tuple[str, WorkflowNode]]:
    out = []
    if node.kind is NodeKind.PARALLEL:
        out.append((path, node))
    for i, child in enumerate(node.children):
        out.extend(parallel_paths(child, f"{path}/{i}" if path else str(i)))
    return out


def node_at(root: WorkflowNode, path: str) -> WorkflowNode:
    node = root
    if path:
        for part in path.split("/"):
            node = node.children[int(part)]
    return node


def validate_workflow(node: WorkflowNode, where: str = "workflow") -> list[str]:
    """Structural problems, each annotated with a JSON-style path."""
    problems: list[str] = []
    seen: dict[str, str] = {}

    def walk(n: WorkflowNode, w: str, under_parallel: bool) -> None:
        if not isinstance(n, WorkflowNode):
            problems.append(f"{w}: expected a workflow node, got {type(n).__name__}")
            return
        if n.arrival_rate is not None:
            if under_parallel:
                problems.append(
                    f"{w}: children of a parallel node must not set arrival_rate"
                    " (use branch_rates on the parent)"
                )
            elif not _is_rate(n.arrival_rate):
                problems.append(f"{w}: arrival_rate must be a positive finite number")
        if n.kind is NodeKind.SLOT:
            if not n.slot_id or not isinstance(n.slot_id, str):
                problems.append(f"{w}: slot needs a non-empty string id")
            elif n.slot_id in seen:
                problems.append(f"{w}: duplicate slot id {n.slot_id!r} (also at {seen[n.slot_id]})")
            else:
                seen[n.slot_id] = w
            if n.children:
                problems.append(f"{w}: slot cannot have children")
            if n.branch_rates is not None:
                problems.append(f"{w}: slot cannot have branch_rates")
            return
        if n.slot_id is not None or n.bound_server is not None:
            problems.append(f"{w}: only slots carry slot_id/bound_server")
        if n.kind is NodeKind.SERIES:
            if len(n.children) < 1:
                problems.append(f"{w}: series needs at least 1 child")
            if n.branch_rates is not None:
                problems.append(f"{w}: series cannot have branch_rates")
        else:
            if len(n.children) < 2:
                problems.append(f"{w}: parallel needs at least 2 children")
            if n.branch_rates is not None:
                rates = n.branch_rates
                if len(rates) != len(n.children):
                    problems.append(
                        f"{w}: branch_rates has {len(rates)} entries"
                        f" for {len(n.children)} children"
                    )
                if not all(_is_rate(r) for r in rates):
                    problems.append(f"{w}: branch_rates must be positive finite numbers")
                elif n.arrival_rate is None:
                    problems.append(f"{w}: branch_rates requires arrival_rate on the same node")
                elif abs(sum(rates) - n.arrival_rate) > RATE_SUM_TOL:
                    problems.append(
                        f"{w}: branch_rates sum {sum(rates):g}"
                        f" != arrival_rate {n.arrival_rate:g}"
                    )
        for i, child in enumerate(n.children):
            walk(child, f"{w}.children[{i}]", n.kind is NodeKind.PARALLEL)

    walk(node, where, False)
    return problems


def _is_rate(x) -> bool:
    import math

    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x > 0


def slot_loads(
    root: WorkflowNode, rates: Mapping[str, Sequence[float]] | None = None
) -> dict[str, float | None]:
    """Arrival rate reaching each slot, by slot id.

    ``rates`` maps parallel node paths to per-child splits and takes
    precedence over branch_rates stored on the nodes. Slots that no
    known rate reaches map to None.
    """
    rates = rates or {}
    out: dict[str, float | None] = {}

    def walk(node: WorkflowNode, path: str, incoming: float | None) -> None:
        rate = node.arrival_rate if node.arrival_rate is not None else incoming
        if node.kind is NodeKind.SLOT:
            out[node.slot_id] = rate
            return
        if node.kind is NodeKind.SERIES:
            for i, child in enumerate(node.children):
                walk(child, f"{path}/{i}" if path else str(i), rate)
            return
        split = rates.get(path)
        if split is None:
            split = node.branch_rates
        for i, child in enumerate(node.children):
            child_rate = None if split is None else float(split[i])
            walk(child, f"{path}/{i}" if path else str(i), child_rate)

    walk(root, "", None)
    return out


def response_spec(server: ServerDescriptor, load: float | None, slot: str):
    """The distribution a bound slot responds with under its load."""
    from .distributions import DistributionSpec, queue_response

    if server.model == "explicit":
        return server.distribution
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
    return queue_response(server, load)


def end_to_end(
    root: WorkflowNode,
    servers: Mapping[str, ServerDescriptor] | Sequence[ServerDescriptor],
    binding: Mapping[str, str],
    rates: Mapping[str, Sequence[float]] | None = None,
    cfg: GridConfig = GridConfig(),
) -> NumericDistribution:
    """Numeric end-to-end response distribution of a bound workflow.

    Series children fold by convolution, parallel children by max
    composition, both left to right.
    """
    by_id = servers if isinstance(servers, Mapping) else {s.id: s for s in servers}
    loads = slot_loads(root, rates)
    missing = [sid for sid in slot_ids(root) if sid not in binding]
    if missing:
        raise ValueError(f"unbound slots: {', '.join(sorted(missing))}")

    def compose(node: WorkflowNode) -> NumericDistribution:
        if node.kind is NodeKind.SLOT:
            server_id = binding[node.slot_id]
            if server_id not in by_id:
                raise ValueError(f"slot {node.slot_id!r} bound to unknown server {server_id!r}")
            spec = response_spec(by_id[server_id], loads[node.slot_id], node.slot_id)
            return discretize(spec, cfg)
        parts = [compose(c) for c in node.children]
        combine = convolve if node.kind is NodeKind.SERIES else max_compose
        acc = parts[0]
        for part in parts[1:]:
            acc = combine(acc, part)
        return acc

    return compose(root)


# ---------------------------------------------------------------------------
# Scenario: workflow + server pool + numeric settings


@dataclass(frozen=True)
class Scenario:
    workflow: WorkflowNode
    servers: tuple[ServerDescriptor, ...]
    grid: GridConfig = field(default_factory=GridConfig)
    objective: str = "mean"
    name: str | None = None

    def server_map(self) -> dict[str, ServerDescriptor]:
        return {s.id: s for s in self.servers}

    def binding(self) -> dict[str, str]:
        """Pre-bindings declared on the workflow's slots."""
        return {
            s.slot_id: s.bound_server for _, s in iter_slots(self.workflow) if s.bound_server
        }


OBJECTIVES = ("mean", "variance")


def parse_scenario(data: bytes | str | dict, name: str | None = None) -> Scenario:
    """Parse and fully validate a scenario document.

    Collects every problem it can find and raises a single
    ScenarioError listing them all, each tagged with a document path.
    """
    if isinstance(data, (bytes, str)):
        try:
            obj = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ScenarioError([f"not valid JSON: {exc}"]) from None
    else:
        obj = data
    if not isinstance(obj, dict):
        raise ScenarioError([f"top level must be a JSON object, got {type(obj).__name__}"])

    problems: list[str] = []
    known = {"name", "objective", "grid", "servers", "workflow", "binding"}
    for key in sorted(set(obj) - known):
        problems.append(f"unknown top-level key {key!r}")

    doc_name = obj.get("name", name)
    if doc_name is not None and not isinstance(doc_name, str):
        problems.append("name: must be a string")
        doc_name = None

    objective = obj.get("objective", "mean")
    if objective not in OBJECTIVES:
        problems.append(f"objective: must be one of {OBJECTIVES}, got {objective!r}")
        objective = "mean"

    grid = GridConfig()
    raw_grid = obj.get("grid")
    if raw_grid is not None:
        if not isinstance(raw_grid, dict) or set(raw_grid) - {"points", "quantile"}:
            problems.append("grid: must be an object with keys 'points' and/or 'quantile'")
        else:
            try:
                grid = GridConfig(
                    points=raw_grid.get("points", GridConfig.points),
                    horizon_quantile=raw_grid.get("quantile", GridConfig.horizon_quantile),
                )
            except ValueError as exc:
                problems.append(f"grid: {exc}")

    servers: list[ServerDescriptor] = []
    raw_servers = obj.get("servers")
    if not isinstance(raw_servers, list) or not raw_servers:
        problems.append("servers: must be a non-empty list")
    else:
        seen_ids: set[str] = set()
        for i, raw in enumerate(raw_servers):
            try:
                srv = server_from_json(raw, where=f"servers[{i}]")
            except ValueError as exc:
                problems.append(str(exc))
                continue
            issues = validate_server(srv)
            if issues:
                problems.extend(f"servers[{i}]: {msg}" for msg in issues)
                continue
            if srv.id in seen_ids:
                problems.append(f"servers[{i}]: duplicate server id {srv.id!r}")
                continue
            seen_ids.add(srv.id)
            servers.append(srv)

    workflow = None
    if "workflow" not in obj:
        problems.append("workflow: missing")
    else:
        workflow = _workflow_from_json(obj["workflow"], "workflow", problems)
    if workflow is not None:
        problems.extend(validate_workflow(workflow))

    if workflow is not None and not problems:
        sids = slot_ids(workflow)
        binding = obj.get("binding")
        if binding is not None:
            if not isinstance(binding, dict):
                problems.append("binding: must be an object mapping slot ids to server ids")
            else:
                by_id = {s.id for s in servers}
                used: dict[str, str] = {}
                for sid, srv_id in binding.items():
                    if sid not in sids:
                        problems.append(f"binding.{sid}: no such slot")
                    elif not isinstance(srv_id, str) or srv_id not in by_id:
                        problems.append(f"binding.{sid}: no such server {srv_id!r}")
                    elif srv_id in used:
                        problems.append(
                            f"binding.{sid}: server {srv_id!r} already bound to slot"
                            f" {used[srv_id]!r}"
                        )
                    else:
                        used[srv_id] = sid
                if not problems:
                    workflow = _apply_binding(workflow, binding)
        if len(servers) < len(sids):
            problems.append(
                f"servers: {len(servers)} servers cannot cover {len(sids)} slots"
            )

    if problems:
        raise ScenarioError(problems)
    return Scenario(
        workflow=workflow,
        servers=tuple(servers),
        grid=grid,
        objective=objective,
        name=doc_name,
    )


def _workflow_from_json(raw, where: str, problems: list[str]) -> WorkflowNode | None:
    if not isinstance(raw, dict):
        problems.append(f"{where}: must be an object")
        return None
    kind = raw.get("type")
    if kind not in ("slot", "series", "parallel"):
        problems.append(f"{where}.type: must be 'slot', 'series' or 'parallel', got {kind!r}")
        return None
    allowed = {"type", "arrival_rate"}
    allowed |= {"id"} if kind == "slot" else {"children"}
    if kind == "parallel":
        allowed.add("branch_rates")
    for key in sorted(set(raw) - allowed):
        problems.append(f"{where}.{key}: unknown key for a {kind} node")

    rate = raw.get("arrival_rate")
    if rate is not None and not _is_rate(rate):
        problems.append(f"{where}.arrival_rate: must be a positive finite number")
        rate = None

    if kind == "slot":
        sid = raw.get("id")
        if not isinstance(sid, str) or not sid:
            problems.append(f"{where}.id: slot needs a non-empty string id")
            return None
        return WorkflowNode.slot(sid, arrival_rate=rate)

    raw_children = raw.get("children")
    if not isinstance(raw_children, list):
        problems.append(f"{where}.children: must be a list")
        return None
    children = []
    for i, rc in enumerate(raw_children):
        child = _workflow_from_json(rc, f"{where}.children[{i}]", problems)
        if child is None:
            return None
        children.append(child)
    if kind == "series":
        return WorkflowNode.series(*children, arrival_rate=rate)

    branch_rates = raw.get("branch_rates")
    if branch_rates is not None:
        if not isinstance(branch_rates, list) or not all(
            isinstance(r, (int, float)) and not isinstance(r, bool) for r in branch_rates
        ):
            problems.append(f"{where}.branch_rates: must be a list of numbers")
            branch_rates = None
        else:
            branch_rates = [float(r) for r in branch_rates]
    if len(children) < 2:
        problems.append(f"{where}: parallel needs at least 2 children")
        return None
    return WorkflowNode.parallel(*children, arrival_rate=rate, branch_rates=branch_rates)


def _apply_binding(node: WorkflowNode, binding: Mapping[str, str]) -> WorkflowNode:
    if node.kind is NodeKind.SLOT:
        server = binding.get(node.slot_id)
        return replace(node, bound_server=server) if server else node
    return replace(node, children=tuple(_apply_binding(c, binding) for c in node.children))


def workflow_to_json(node: WorkflowNode) -> dict:
    if node.kind is NodeKind.SLOT:
        out: dict = {"type": "slot", "id": node.slot_id}
        if node.arrival_rate is not None:
            out["arrival_rate"] = node.arrival_rate
        return out
    out = {"type": node.kind.value}
    if node.arrival_rate is not None:
        out["arrival_rate"] = node.arrival_rate
    if node.branch_rates is not None:
        out["branch_rates"] = list(node.branch_rates)
    out["children"] = [workflow_to_json(c) for c in node.children]
    return out


def scenario_to_json(sc: Scenario) -> dict:
    out: dict = {}
    if sc.name is not None:
        out["name"] = sc.name
    out["objective"] = sc.objective
    out["grid"] = {"points": sc.grid.points, "quantile": sc.grid.horizon_quantile}
    out["servers"] = [server_to_json(s) for s in sc.servers]
    out["workflow"] = workflow_to_json(sc.workflow)
    binding = sc.binding()
    if binding:
        out["binding"] = binding
    return out


__all__ = [
    "Classification",
    "NodeKind",
    "OBJECTIVES",
    "RATE_SUM_TOL",
    "Scenario",
    "WorkflowNode",
    "classify",
    "end_to_end",
    "internal_dap_count",
    "iter_slots",
    "node_at",
    "parallel_paths",
    "parse_scenario",
    "response_spec",
    "scenario_to_json",
    "slot_ids",
    "slot_loads",
    "validate_workflow",
    "workflow_to_json",
]
