import itertools

import numpy as np
import pytest

from coplan.dispatch import worst_case_diu
from coplan.instance_io import AlgoParams, capital_recovery_factor, instance_from_dict, instance_to_dict
from coplan.network import (
    PlanDecision,
    investment_cost,
    solve_master,
    validate_radial,
)
from coplan.transport import charging_load, fixed_scenario, solve_assignment

from genutil import random_instance, random_plan


def _plan(toy6, lines, hubs):
    return PlanDecision({l.key: int(l.key in lines) for l in toy6.candidate_lines},
                        {h.id: int(h.id in hubs) for h in toy6.hubs})


class TestInvestment:
    def test_empty_plan_costs_nothing(self, toy6):
        assert investment_cost(_plan(toy6, set(), set()), toy6) == 0.0

    def test_single_line_annualised(self, toy6):
        # 1.2 km at 23.30 per km over 20 years at 5%
        plan = _plan(toy6, {(1, 2)}, set())
        expected = capital_recovery_factor(0.05, 20) * 23.30 * 1.2
        assert investment_cost(plan, toy6) == pytest.approx(expected, rel=1e-9)

    def test_mixed_lifespan_station(self, toy6):
        # hub 2 costs 194.50 split into 20- and 30-year assets
        plan = _plan(toy6, set(), {2})
        expected = (capital_recovery_factor(0.05, 20) * 120.0
                    + capital_recovery_factor(0.05, 30) * 74.5)
        assert investment_cost(plan, toy6) == pytest.approx(expected, rel=1e-9)

    def test_invariant_under_line_declaration_order(self, toy6):
        data = instance_to_dict(toy6)
        data["candidate_lines"] = list(reversed(data["candidate_lines"]))
        shuffled = instance_from_dict(data)
        plan6 = _plan(toy6, {(1, 2), (2, 3)}, {1, 4})
        plan_s = _plan(shuffled, {(1, 2), (2, 3)}, {1, 4})
        assert investment_cost(plan6, toy6) == pytest.approx(
            investment_cost(plan_s, shuffled), rel=1e-12)


class TestRadiality:
    def test_path_graph_ok(self, toy6):
        plan = _plan(toy6, {(1, 2), (2, 3), (3, 5), (4, 5), (5, 6)}, {1, 4})
        report = validate_radial(plan, toy6)
        assert report.ok, report.problems

    def test_cycle_flagged(self, toy6):
        plan = _plan(toy6, {(1, 2), (1, 3), (2, 3)}, {1, 4})
        report = validate_radial(plan, toy6)
        assert not report.ok
        assert any("count" in p for p in report.problems)
        assert any("pseudo-loop" in p for p in report.problems)

    def test_two_components_fail_flow(self, toy6):
        # five lines but node 6 unreachable and a loop among 1-2-3
        plan = _plan(toy6, {(1, 2), (1, 3), (2, 3), (4, 5), (5, 6)}, {1, 4})
        report = validate_radial(plan, toy6)
        assert not report.ok
        assert any("unreachable" in p for p in report.problems)
        assert any("fictitious flow" in p or "pseudo-loop" in p for p in report.problems)

    def test_random_trees_validate(self, toy6):
        for seed in range(30):
            plan = random_plan(toy6, seed)
            report = validate_radial(plan, toy6)
            assert report.ok, report.problems


class TestMaster:
    def test_empty_scenarios_gives_mst_plus_cheapest_hubs(self, toy6):
        import networkx as nx

        res = solve_master(toy6, [], None, 0.0, gap=0.0)
        crf = capital_recovery_factor(0.05, 20)
        G = nx.Graph()
        for l in toy6.candidate_lines:
            G.add_edge(*l.key, weight=crf * l.cost)
        mst_cost = sum(d["weight"] for *_, d in
                       nx.minimum_spanning_tree(G).edges(data=True))
        hub_costs = sorted(
            sum(capital_recovery_factor(0.05, life) * amount
                for amount, life in (h.cost_components or [(h.cost, 20)]))
            for h in toy6.hubs)
        expected = mst_cost + sum(hub_costs[:toy6.rcs_min_count])
        assert res.eta == pytest.approx(0.0, abs=1e-9)
        assert res.ub == pytest.approx(expected, rel=1e-9)
        assert validate_radial(res.plan, toy6).ok

    def test_scenario_forces_positive_recourse(self, toy6, params):
        res0 = solve_master(toy6, [], None, 0.0, gap=0.0)
        scen = fixed_scenario(toy6, params, 10)
        assign = solve_assignment(res0.plan.open_hubs, scen, toy6)
        load = charging_load(assign, toy6)
        u_star, _, _ = worst_case_diu(res0.plan, load, toy6)
        res1 = solve_master(toy6, [u_star], load, 0.0, gap=0.0)
        assert res1.eta > 0.0
        assert res1.ub >= res0.ub - 1e-9  # restriction never improves the master
        assert validate_radial(res1.plan, toy6).ok

    def test_adding_scenarios_never_decreases_value(self, toy6, params):
        res0 = solve_master(toy6, [], None, 0.0, gap=0.0)
        scen = fixed_scenario(toy6, params, 10)
        assign = solve_assignment(res0.plan.open_hubs, scen, toy6)
        load = charging_load(assign, toy6)
        u1, _, _ = worst_case_diu(res0.plan, load, toy6)
        res1 = solve_master(toy6, [u1], load, 0.0, gap=0.0)
        assign1 = solve_assignment(res1.plan.open_hubs, scen, toy6)
        load1 = charging_load(assign1, toy6)
        u2, _, _ = worst_case_diu(res1.plan, load1, toy6)
        if not u2.is_close(u1):
            res2 = solve_master(toy6, [u1, u2], load1, 0.0, gap=0.0)
            assert res2.ub >= res1.lb - 1e-6

    def test_master_solutions_are_radial(self, toy6, params):
        scen = fixed_scenario(toy6, params, 10)
        res = solve_master(toy6, [], None, 0.0, gap=0.0)
        for _ in range(2):
            assign = solve_assignment(res.plan.open_hubs, scen, toy6)
            load = charging_load(assign, toy6)
            u, _, _ = worst_case_diu(res.plan, load, toy6)
            res = solve_master(toy6, [u], load, 0.0, gap=0.0)
            report = validate_radial(res.plan, toy6)
            assert report.ok, report.problems
            built = res.plan.built_lines
            assert len(built) == len(toy6.nodes) - 1

    def test_gap_request_is_honoured(self, toy6, params):
        scen = fixed_scenario(toy6, params, 10)
        res0 = solve_master(toy6, [], None, 0.0, gap=0.0)
        assign = solve_assignment(res0.plan.open_hubs, scen, toy6)
        load = charging_load(assign, toy6)
        u, _, _ = worst_case_diu(res0.plan, load, toy6)
        res = solve_master(toy6, [u], load, 0.0, gap=0.10)
        assert res.gap <= 0.10 + 1e-9
        assert res.lb <= res.ub + 1e-9

    def test_plan_round_trip(self, toy6):
        res = solve_master(toy6, [], None, 0.0, gap=0.0)
        data = res.plan.to_dict()
        again = PlanDecision.from_dict(data, toy6)
        assert again.built_lines == res.plan.built_lines
        assert again.open_hubs == res.plan.open_hubs
        assert again.to_dict()["built_lines"] == data["built_lines"]
        assert data["fingerprint"] == again.fingerprint()
