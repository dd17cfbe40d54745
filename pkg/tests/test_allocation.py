import math
import random

import pytest

from dcflow import (
    AllocationError,
    CombinatorialLimitError,
    DistributionSpec,
    GridConfig,
    InfeasibleRatesError,
    Scenario,
    ServerDescriptor,
    WorkflowNode,
    baseline_allocate,
    complete_branch_rates,
    manage,
    optimal_allocate,
    parse_scenario,
    pdcc_allocate,
    plan_from_json,
    plan_to_json,
    rate_schedule,
    rate_schedule_queued,
    sdcc_allocate,
    validate_plan,
)

# re-evaluating a binding can differ from the stored plan value by fold
# order alone, so "not worse" carries a float-dust allowance
DUST = 1e-9


def queue(sid, mu):
    return ServerDescriptor.queue(sid, mu)


def slot(sid, **kw):
    return WorkflowNode.slot(sid, **kw)


class TestRateSchedule:
    def test_closed_form(self):
        # inverse-RT weights 1 : 1/2 : 1/4 over lam = 8
        rates = rate_schedule(8.0, [1.0, 2.0, 4.0])
        assert rates == pytest.approx([32 / 7, 16 / 7, 8 / 7], abs=1e-12)

    def test_products_equalized(self):
        rng = random.Random(11)
        for _ in range(50):
            lam = rng.uniform(0.5, 20.0)
            rts = [rng.uniform(0.1, 5.0) for _ in range(rng.randint(2, 6))]
            rates = rate_schedule(lam, rts)
            assert sum(rates) == pytest.approx(lam, abs=1e-12)
            products = [r * rt for r, rt in zip(rates, rts)]
            assert max(products) - min(products) < 1e-12

    def test_rejects_nonpositive_response(self):
        with pytest.raises(ValueError, match="positive"):
            rate_schedule(1.0, [1.0, 0.0])

    def test_rejects_bad_arrival(self):
        with pytest.raises(ValueError, match="arrival rate"):
            rate_schedule(-2.0, [1.0])
        with pytest.raises(ValueError, match="arrival rate"):
            rate_schedule(math.nan, [1.0])

    def test_needs_a_branch(self):
        with pytest.raises(ValueError, match="at least one"):
            rate_schedule(1.0, [])


class TestRateScheduleQueued:
    def test_proportional_to_service_rate(self):
        # lam_i/(mu_i - lam_i) all equal forces lam_i = lam * mu_i / sum(mu)
        rates = rate_schedule_queued(8.0, [9.0, 5.0])
        assert rates == pytest.approx([8 * 9 / 14, 8 * 5 / 14], abs=1e-9)

    def test_random_instances_stable_and_equalized(self):
        rng = random.Random(23)
        for _ in range(50):
            n = rng.randint(2, 5)
            mus = [rng.uniform(1.0, 10.0) for _ in range(n)]
            lam = rng.uniform(0.1, 0.9) * sum(mus)
            rates = rate_schedule_queued(lam, mus)
            assert sum(rates) == pytest.approx(lam, abs=1e-9)
            assert all(r < mu for r, mu in zip(rates, mus))
            products = [r / (mu - r) for r, mu in zip(rates, mus)]
            assert max(products) - min(products) < 1e-9

    def test_saturated_pool_is_infeasible(self):
        with pytest.raises(InfeasibleRatesError, match="total branch capacity"):
            rate_schedule_queued(14.0, [9.0, 5.0])

    def test_rejects_bad_service_rate(self):
        with pytest.raises(ValueError, match="service rates"):
            rate_schedule_queued(1.0, [2.0, -3.0])


class TestSdccAllocate:
    def test_fastest_servers_to_highest_rate(self):
        pool = [queue("s1", 9.0), queue("s2", 5.0), queue("s3", 2.0)]
        dccs = [(slot("lo"), 0.5), (slot("hi"), 4.0), (slot("mid"), 1.0)]
        binding = sdcc_allocate(pool, dccs)
        assert binding == {"hi": "s1", "mid": "s2", "lo": "s3"}

    def test_pool_order_is_irrelevant(self):
        pool = [queue("s1", 9.0), queue("s2", 5.0), queue("s3", 2.0)]
        dccs = [(slot("lo"), 0.5), (slot("hi"), 4.0), (slot("mid"), 1.0)]
        shuffled = [pool[2], pool[0], pool[1]]
        assert sdcc_allocate(pool, dccs) == sdcc_allocate(shuffled, dccs)

    def test_unknown_rates_treated_as_highest_pressure(self):
        pool = [queue("s1", 9.0), queue("s2", 5.0)]
        binding = sdcc_allocate(pool, [(slot("x"), None), (slot("y"), 1.0)])
        assert binding == {"x": "s1", "y": "s2"}

    def test_series_component_recurses(self):
        pool = [queue("s1", 9.0), queue("s2", 5.0), queue("s3", 2.0)]
        chain = WorkflowNode.series(slot("c1"), slot("c2"))
        binding = sdcc_allocate(pool, [(chain, 3.0), (slot("solo"), 1.0)])
        # the chain outranks the solo slot, so it takes the two fastest
        assert {binding["c1"], binding["c2"]} == {"s1", "s2"}
        assert binding["solo"] == "s3"

    def test_pool_exhausted(self):
        with pytest.raises(AllocationError, match="server pool exhausted: 1 servers for 2 slots"):
            sdcc_allocate([queue("s1", 9.0)], [(slot("a"), 1.0), (slot("b"), 1.0)])


class TestPdccAllocate:
    def test_declared_split_orders_children(self):
        node = WorkflowNode.parallel(
            slot("a"), slot("b"), arrival_rate=6.0, branch_rates=[4.0, 2.0]
        )
        binding, rates = pdcc_allocate([queue("s1", 9.0), queue("s2", 5.0)], node)
        assert binding == {"a": "s1", "b": "s2"}
        assert rates == (4.0, 2.0)

    def test_scheduled_split_is_proportional(self):
        node = WorkflowNode.parallel(slot("a"), slot("b"), arrival_rate=7.0)
        binding, rates = pdcc_allocate([queue("s1", 9.0), queue("s2", 5.0)], node)
        # chunks are handed out slow end first, then the split follows
        # the bound service rates
        assert binding == {"a": "s2", "b": "s1"}
        assert rates == pytest.approx([7 * 5 / 14, 7 * 9 / 14], abs=1e-9)

    def test_deeper_branch_gets_slower_servers_without_rates(self):
        chain = WorkflowNode.series(slot("c1"), slot("c2"))
        node = WorkflowNode.parallel(chain, slot("solo"))
        pool = [queue("s1", 9.0), queue("s2", 5.0), queue("s3", 2.0)]
        binding, rates = pdcc_allocate(pool, node)
        assert rates is None
        assert {binding["c1"], binding["c2"]} == {"s2", "s3"}
        assert binding["solo"] == "s1"

    def test_rejects_non_parallel(self):
        with pytest.raises(ValueError, match="parallel"):
            pdcc_allocate([queue("s1", 9.0)], slot("a"))


def exponential_moments(binding, branch_rates, scenario):
    """Closed-form mean/variance for an all-queue series-of-components
    workflow: each bound slot is exponential at rate mu - lam, series
    moments add, two-branch parallel composes by max."""
    mus = {s.id: s.service_rate for s in scenario.servers}
    mean = var = 0.0
    for i, child in enumerate(scenario.workflow.children):
        if child.kind.value == "parallel":
            r1, r2 = branch_rates[str(i)]
            ids = [c.slot_id for c in child.children]
            a = mus[binding[ids[0]]] - r1
            b = mus[binding[ids[1]]] - r2
            m = 1 / a + 1 / b - 1 / (a + b)
            m2 = 2 / a**2 + 2 / b**2 - 2 / (a + b) ** 2
            mean += m
            var += m2 - m * m
        else:
            lam = child.arrival_rate
            for c in child.children:
                rest = mus[binding[c.slot_id]] - lam
                mean += 1 / rest
                var += 1 / rest**2
    return mean, var


class TestFig5Allocation:
    def test_proposed_matches_closed_form(self, fig5):
        plan = manage(fig5)
        assert plan.method == "proposed"
        mean, var = exponential_moments(plan.binding, plan.branch_rates, fig5)
        assert plan.mean == pytest.approx(mean, rel=1e-3)
        assert plan.variance == pytest.approx(var, rel=5e-3)

    def test_proposed_groups_servers_by_pressure(self, fig5):
        # arrival rates 8 / 4 / 2 over components (a,b) / (c,d) / (e,f):
        # the two fastest servers must serve the rate-8 group and the
        # two slowest the rate-2 group
        plan = manage(fig5)
        assert {plan.binding["a"], plan.binding["b"]} == {"s1", "s2"}
        assert {plan.binding["c"], plan.binding["d"]} == {"s3", "s4"}
        assert {plan.binding["e"], plan.binding["f"]} == {"s5", "s6"}

    def test_scheduled_splits_are_proportional(self, fig5):
        plan = manage(fig5)
        mus = {s.id: s.service_rate for s in fig5.servers}
        for path, lam in (("0", 8.0), ("2", 2.0)):
            child = fig5.workflow.children[int(path)]
            got = plan.branch_rates[path]
            weights = [mus[plan.binding[c.slot_id]] for c in child.children]
            want = [lam * w / sum(weights) for w in weights]
            assert got == pytest.approx(want, abs=1e-9)

    def test_baseline_puts_chain_first(self, fig5):
        plan = baseline_allocate(fig5)
        assert plan.method == "baseline"
        # class order: series chain, then parallels by arrival rate
        assert plan.binding["c"] == "s1"
        assert plan.binding["d"] == "s2"
        assert {plan.binding["e"], plan.binding["f"]} == {"s3", "s4"}
        assert {plan.binding["a"], plan.binding["b"]} == {"s5", "s6"}
        mean, var = exponential_moments(plan.binding, plan.branch_rates, fig5)
        assert plan.mean == pytest.approx(mean, rel=1e-3)
        assert plan.variance == pytest.approx(var, rel=5e-3)

    def test_method_ordering(self, fig5):
        prop = manage(fig5)
        base = baseline_allocate(fig5)
        opt = optimal_allocate(fig5)
        assert opt.method == "optimal"
        assert opt.mean <= prop.mean + DUST
        assert prop.mean < base.mean
        mean, var = exponential_moments(opt.binding, opt.branch_rates, fig5)
        assert opt.mean == pytest.approx(mean, rel=1e-3)
        assert opt.variance == pytest.approx(var, rel=5e-3)

    def test_plans_pass_validation(self, fig5):
        for plan in (manage(fig5), baseline_allocate(fig5), optimal_allocate(fig5)):
            assert validate_plan(plan, fig5) == []


class TestManageShapes:
    def test_single_slot(self):
        sc = Scenario(workflow=slot("z", arrival_rate=1.0), servers=(queue("q1", 3.0),))
        plan = manage(sc)
        assert plan.binding == {"z": "q1"}
        assert plan.mean == pytest.approx(0.5, rel=1e-3)

    def test_parallel_root(self):
        sc = Scenario(
            workflow=WorkflowNode.parallel(slot("a"), slot("b"), arrival_rate=7.0),
            servers=(queue("q1", 9.0), queue("q2", 5.0)),
        )
        plan = manage(sc)
        assert plan.binding == {"a": "q2", "b": "q1"}
        assert plan.branch_rates[""] == pytest.approx((7 * 5 / 14, 7 * 9 / 14), abs=1e-9)

    def test_surplus_pool_is_trimmed_to_fastest(self):
        sc = Scenario(
            workflow=WorkflowNode.series(slot("a"), slot("b"), arrival_rate=1.0),
            servers=(queue("slow", 2.0), queue("q1", 9.0), queue("q2", 5.0)),
        )
        plan = manage(sc)
        assert "slow" not in plan.binding.values()

    def test_pool_exhausted(self):
        sc = Scenario(
            workflow=WorkflowNode.series(slot("a"), slot("b"), arrival_rate=1.0),
            servers=(queue("q1", 9.0),),
        )
        with pytest.raises(AllocationError, match="server pool exhausted: 1 servers for 2 slots"):
            manage(sc)


class TestCompleteBranchRates:
    def test_declared_rates_pass_through(self):
        node = WorkflowNode.parallel(
            slot("a"), slot("b"), arrival_rate=6.0, branch_rates=[4.0, 2.0]
        )
        servers = [queue("q1", 9.0), queue("q2", 9.0)]
        rates = complete_branch_rates(node, servers, {"a": "q1", "b": "q2"})
        assert rates == {"": (4.0, 2.0)}

    def test_scheduler_fills_missing_split(self):
        node = WorkflowNode.parallel(slot("a"), slot("b"), arrival_rate=7.0)
        servers = [queue("q1", 9.0), queue("q2", 5.0)]
        rates = complete_branch_rates(node, servers, {"a": "q1", "b": "q2"})
        assert rates[""] == pytest.approx((7 * 9 / 14, 7 * 5 / 14), abs=1e-9)

    def test_explicit_only_parallel_may_stay_unsplit(self):
        node = WorkflowNode.parallel(slot("a"), slot("b"))
        servers = [
            ServerDescriptor.explicit("e1", DistributionSpec.exponential(1.0)),
            ServerDescriptor.explicit("e2", DistributionSpec.exponential(2.0)),
        ]
        assert complete_branch_rates(node, servers, {"a": "e1", "b": "e2"}) == {}

    def test_queue_without_rate_is_refused(self):
        node = WorkflowNode.parallel(slot("a"), slot("b"))
        servers = [queue("q1", 9.0), queue("q2", 9.0)]
        with pytest.raises(InfeasibleRatesError, match="no arrival rate reaches it"):
            complete_branch_rates(node, servers, {"a": "q1", "b": "q2"})


class TestOptimal:
    def test_never_worse_on_small_scenarios(self):
        rng = random.Random(7)
        for _ in range(5):
            mus = sorted(rng.uniform(3.0, 10.0) for _ in range(4))
            sc = Scenario(
                workflow=WorkflowNode.series(
                    WorkflowNode.parallel(slot("a"), slot("b"), arrival_rate=2.0),
                    WorkflowNode.series(slot("c"), slot("d"), arrival_rate=1.0),
                    arrival_rate=2.0,
                ),
                servers=tuple(queue(f"q{i}", mu) for i, mu in enumerate(mus, start=1)),
                grid=GridConfig(points=2048),
            )
            opt = optimal_allocate(sc)
            assert opt.mean <= manage(sc).mean + DUST
            assert opt.mean <= baseline_allocate(sc).mean + DUST

    def test_variance_objective_changes_the_target(self):
        layout = WorkflowNode.series(slot("a"), slot("b"), arrival_rate=1.0)
        servers = (queue("q1", 9.0), queue("q2", 5.0))
        by_mean = optimal_allocate(Scenario(workflow=layout, servers=servers))
        by_var = optimal_allocate(
            Scenario(workflow=layout, servers=servers, objective="variance")
        )
        assert by_var.variance <= by_mean.variance + DUST

    def test_slot_count_guard(self):
        slots = [slot(f"s{i}") for i in range(11)]
        sc = Scenario(
            workflow=WorkflowNode.series(*slots, arrival_rate=1.0),
            servers=tuple(queue(f"q{i}", 9.0) for i in range(11)),
        )
        with pytest.raises(CombinatorialLimitError, match="refuses 11 slots"):
            optimal_allocate(sc)

    def test_assignment_count_guard(self):
        # 30 * 29 * 28 * 27 * 26 falling product exceeds the cap
        slots = [slot(f"s{i}") for i in range(5)]
        sc = Scenario(
            workflow=WorkflowNode.series(*slots, arrival_rate=1.0),
            servers=tuple(queue(f"q{i:02d}", 9.0) for i in range(30)),
        )
        with pytest.raises(CombinatorialLimitError, match="assignments"):
            optimal_allocate(sc)

    def test_no_feasible_assignment(self):
        sc = Scenario(
            workflow=slot("z", arrival_rate=5.0),
            servers=(queue("q1", 4.0), queue("q2", 3.0)),
        )
        with pytest.raises(AllocationError, match="no feasible server assignment"):
            optimal_allocate(sc)


class TestPlanJson:
    def test_round_trip(self, fig5):
        plan = manage(fig5)
        doc = plan_to_json(plan)
        again = plan_from_json(doc)
        assert again == plan
        assert plan_to_json(again) == doc

    def test_missing_keys_rejected(self):
        with pytest.raises(ValueError, match="missing keys"):
            plan_from_json({"method": "proposed"})


class TestValidatePlan:
    def test_unbound_slot_flagged(self, fig5):
        plan = manage(fig5)
        broken = plan_from_json(
            {**plan_to_json(plan), "binding": {k: v for k, v in plan.binding.items() if k != "a"}}
        )
        assert any("unbound" in p for p in validate_plan(broken, fig5))

    def test_reused_server_flagged(self, fig5):
        plan = manage(fig5)
        doc = plan_to_json(plan)
        doc["binding"] = {**doc["binding"], "a": doc["binding"]["b"]}
        assert any("bound to both" in p for p in validate_plan(plan_from_json(doc), fig5))

    def test_unknown_slot_flagged(self, fig5):
        plan = manage(fig5)
        doc = plan_to_json(plan)
        doc["binding"] = {**doc["binding"], "ghost": "s1"}
        assert validate_plan(plan_from_json(doc), fig5)
