"""Decomposition algorithms: adaptive inexact, inexact, and exact C&CG.

All three share one loop skeleton.  Per pass: solve the master over the
accumulated robust realizations within the current optimality gap, draw
the stochastic scenario for this pass (adaptively restricted for the
adaptive variant, pinned at the upper fleet bound for the robust
baselines), solve the EV assignment, evaluate the worst-case operating
cost of the candidate plan, then either terminate, tighten the master
gap and backtrack (exploitation), or enlarge the robust scenario set
(exploration).

Bound bookkeeping follows the inexact-master scheme: the master returns a
feasible value ``UB_i`` and a relaxation bound ``LB_i``; an iteration is
*effective* when ``LB_i`` does not regress the floor, in which case the
floor ratchets up to ``UB_i`` and the certified lower bound ``LB_k``
advances.  The certified gap of a finished run is
``(UB_bar - LB_k) / UB_bar``.  Exploitation-phase gaps are checked
against the analytic bound ``1 - (1 - eps_tilde) * prod(1 - eps_up^n)``
on every occurrence, and runs fail hard when the bound sandwich breaks
beyond the configured slack.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import mathprog as mp
from .dispatch import DiuRealization, worst_case_diu
from .instance_io import AlgoParams, InstanceSpec
from .network import PlanDecision, investment_cost, solve_master
from .transport import EvAssignment, charging_load, fixed_scenario, sample_scenario, solve_assignment

log = logging.getLogger(__name__)


class BoundSandwichError(RuntimeError):
    """Certified lower bound exceeded the upper bound beyond tolerance,
    or an exploration failed to enlarge the scenario set."""


class ConvergenceError(RuntimeError):
    """An analytic convergence guarantee failed at run time."""


@dataclass
class TraceRow:
    iteration: int
    phase: str  # exploit | explore | retighten | terminate | limit
    k: int
    UB_i: float
    LB_i: float
    UB_bar: float
    LB_k: float
    eps_up: float
    scen_count: int
    fleet_draw: int
    wall_ms: float

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration, "phase": self.phase, "k": self.k,
            "UB_i": self.UB_i, "LB_i": self.LB_i, "UB_bar": self.UB_bar,
            "LB_k": self.LB_k, "eps_up": self.eps_up, "scen_count": self.scen_count,
            "fleet_draw": self.fleet_draw, "wall_ms": self.wall_ms,
        }


@dataclass
class RunResult:
    plan: PlanDecision
    objective: float  # certified UB_bar: investment + worst-case loss
    gap_certified: float
    iterations: int  # master solves performed
    explorations: int
    exploitations: int
    trace: list[TraceRow]
    terminated: bool
    costs: dict[str, float]
    worst_u: DiuRealization
    assignment: EvAssignment = field(repr=False, default=None)

    def to_report_dict(self) -> dict:
        return {
            "algorithm": self.costs.get("algorithm", ""),
            "plan": self.plan.to_dict(),
            "objective": self.objective,
            "gap_certified": self.gap_certified,
            "iterations": self.iterations,
            "explorations": self.explorations,
            "exploitations": self.exploitations,
            "terminated": self.terminated,
            "costs": {k: v for k, v in self.costs.items() if k != "algorithm"},
            "worst_case_u": self.worst_u.to_dict(),
        }


def gap_bound(eps_tilde: float, eps_up_history) -> float:
    """Analytic bound on the exploitation-phase gap:
    ``1 - (1 - eps_tilde) * prod_n (1 - eps_up^n)`` over the effective run."""
    prod = 1.0
    for e in eps_up_history:
        if not 0.0 <= e < 1.0:
            raise ValueError(f"eps_up values must lie in [0,1), got {e}")
        prod *= 1.0 - e
    if prod == 1.0:  # all-zero history: the bound is eps_tilde, exactly
        return eps_tilde
    return 1.0 - (1.0 - eps_tilde) * prod


def max_consecutive_exploitations(eps_tilde: float, eps_up_init: float, alpha: float) -> int:
    """Exploitations possible before the master gap drops below eps_tilde."""
    if eps_up_init <= 0.0 or eps_tilde >= eps_up_init:
        return 1 + 1
    return math.ceil(math.log(eps_tilde / eps_up_init) / math.log(alpha)) + 1


def run_aiccg(instance: InstanceSpec, params: AlgoParams) -> RunResult:
    """Adaptive inexact column-and-constraint generation (stochastic fleet)."""
    return _run(instance, params, mode="aiccg")


def run_iccg(instance: InstanceSpec, params: AlgoParams) -> RunResult:
    """Inexact C&CG with the fleet pinned at its upper forecast bound."""
    return _run(instance, params, mode="iccg")


def run_ccg(instance: InstanceSpec, params: AlgoParams) -> RunResult:
    """Exact C&CG baseline: masters at gap zero, pure scenario enlargement."""
    return _run(instance, params, mode="ccg")


def _run(instance: InstanceSpec, params: AlgoParams, mode: str) -> RunResult:
    bad = params.validate()
    if bad:
        raise ValueError("invalid algorithm parameters: " + "; ".join(bad))
    eps = params.epsilon
    eps_tilde = params.resolved_epsilon_tilde()
    eps_cur = 0.0 if mode == "ccg" else params.eps_up_init
    sandwich_slack = params.remark2_slack if mode == "aiccg" else 1e-6

    UB_bar = math.inf
    floor = 0.0  # master objective floor (the running LB-bar of the scheme)
    LB_k = 0.0
    i = k = 1
    scenario_set: list[DiuRealization] = []
    hub_load = None
    mu_prev = params.fleet_mu if params.fleet_mu is not None else \
        0.5 * (instance.fleet.v_min + instance.fleet.v_max)
    eps_hist: dict[int, float] = {}
    tangent_cuts: dict = {}
    capacity_cuts: dict = {}
    trace: list[TraceRow] = []
    incumbent = None
    explorations = exploitations = 0
    consecutive_expl = 0
    expl_cap = max_consecutive_exploitations(eps_tilde, params.eps_up_init, params.alpha)
    draw_counter = 0
    solves = 0

    while solves < params.max_iterations:
        t0 = time.perf_counter()
        mres = solve_master(instance, scenario_set, hub_load, floor, eps_cur,
                            tangent_cuts, capacity_cuts)
        solves += 1
        eps_hist[i] = eps_cur
        UB_i, LB_i = mres.ub, mres.lb
        effective = LB_i >= floor - 1e-9 * max(1.0, abs(floor))
        if effective:
            k = i
            LB_k = LB_i
            floor = UB_i

        # middle level, master path: adaptive draws restrict to [v_min, mu_prev]
        if mode == "aiccg":
            scen = sample_scenario(instance, params, "lower", mu_prev, draw_counter)
            _assert_in_interval(scen, "lower")
            mu_prev = 0.5 * (scen.interval[0] + scen.interval[1])
        else:
            scen = fixed_scenario(instance, params, instance.fleet.v_max)
        draw_counter += 1
        assignment = solve_assignment(mres.plan.open_hubs, scen, instance)
        hub_load = charging_load(assignment, instance)

        # lower level: worst-case DIU for the candidate plan under this load
        u_star, D_i, _ = worst_case_diu(mres.plan, hub_load, instance,
                                        method=params.worst_case_method)
        candidate = mres.investment + D_i
        if candidate < UB_bar:
            UB_bar = candidate
            incumbent = (mres.plan, assignment, u_star, D_i, mres.investment)

        _check_sandwich(LB_i, LB_k, UB_bar, sandwich_slack, effective)
        gap_cert = (UB_bar - LB_k) / max(abs(UB_bar), 1e-10)
        wall_ms = 1000.0 * (time.perf_counter() - t0)
        row = TraceRow(i, "", k, UB_i, LB_i, UB_bar, LB_k, eps_cur,
                       len(scenario_set), scen.fleet_size, wall_ms)

        if gap_cert < eps:
            row.phase = "terminate"
            trace.append(row)
            return _result(mode, instance, incumbent, gap_cert, solves,
                           explorations, exploitations, trace, True)
        exploit_ratio = (UB_bar - UB_i) / max(abs(UB_bar), 1e-10)
        duplicate = any(u_star.is_close(u) for u in scenario_set)
        if mode != "ccg" and exploit_ratio < eps_tilde:
            row.phase = "exploit"
            trace.append(row)
            bound = gap_bound(eps_tilde, [eps_hist[n] for n in range(k, i + 1)])
            if gap_cert > bound + 1e-9:
                raise ConvergenceError(
                    f"exploitation gap {gap_cert:.3e} exceeds its analytic bound {bound:.3e}")
            exploitations += 1
            consecutive_expl += 1
            if consecutive_expl > expl_cap:
                raise ConvergenceError(
                    f"{consecutive_expl} consecutive exploitations exceed the cap {expl_cap}")
            i = k
            floor = LB_k
            eps_cur *= params.alpha
        elif duplicate and mode == "aiccg":
            # stochastic drift between the master's draw and this pass's
            # evaluation can point back to a covered realization; the set
            # cannot grow, so tighten the master instead of enlarging
            row.phase = "retighten"
            trace.append(row)
            exploitations += 1
            consecutive_expl += 1
            if consecutive_expl > expl_cap:
                raise ConvergenceError(
                    f"{consecutive_expl} consecutive tightenings exceed the cap {expl_cap}")
            i = k
            floor = LB_k
            eps_cur *= params.alpha
        elif duplicate:
            raise BoundSandwichError(
                "exploration returned a robust realization already in the set "
                "(no progress; bound bookkeeping is stuck)")
        else:
            row.phase = "explore"
            trace.append(row)
            scenario_set.append(u_star)
            explorations += 1
            consecutive_expl = 0
            i += 1
            if mode == "aiccg":
                # post-enlargement draw explores the upper fleet range and
                # re-solves the middle level before the next master
                scen_up = sample_scenario(instance, params, "upper", mu_prev, draw_counter)
                _assert_in_interval(scen_up, "upper")
                mu_prev = 0.5 * (scen_up.interval[0] + scen_up.interval[1])
                draw_counter += 1
                assignment_up = solve_assignment(mres.plan.open_hubs, scen_up, instance)
                hub_load = charging_load(assignment_up, instance)

    log.warning("%s hit the iteration cap %d with gap %.3e", mode, params.max_iterations,
                (UB_bar - LB_k) / max(abs(UB_bar), 1e-10))
    if trace:
        trace[-1].phase = "limit"
    gap_cert = (UB_bar - LB_k) / max(abs(UB_bar), 1e-10)
    return _result(mode, instance, incumbent, gap_cert, solves, explorations,
                   exploitations, trace, False)


def _assert_in_interval(scen, mode: str) -> None:
    lo, hi = scen.interval
    if not lo - 1e-9 <= scen.draw_value <= hi + 1e-9:
        raise ConvergenceError(
            f"{mode}-interval draw {scen.draw_value} left [{lo}, {hi}]")
    if abs(scen.fleet_size - scen.draw_value) > 0.5 + 1e-9:
        raise ConvergenceError("integer fleet size strayed from its draw")


def _check_sandwich(LB_i: float, LB_k: float, UB_bar: float, slack: float,
                    effective: bool) -> None:
    if not math.isfinite(UB_bar):
        return
    allowance = max(slack * abs(UB_bar), 1e-9)
    if effective and LB_k > UB_bar + allowance:
        raise BoundSandwichError(
            f"certified lower bound {LB_k:.6g} exceeds upper bound {UB_bar:.6g} "
            f"beyond the configured slack {slack:g}")
    if LB_i > UB_bar + allowance:
        raise BoundSandwichError(
            f"master lower bound {LB_i:.6g} exceeds upper bound {UB_bar:.6g} "
            f"beyond the configured slack {slack:g}")


def _result(mode, instance, incumbent, gap_cert, solves, explorations,
            exploitations, trace, terminated) -> RunResult:
    if incumbent is None:
        raise mp.SolveFailure("no incumbent was produced")
    plan, assignment, u_star, D, invest = incumbent
    costs = {
        "algorithm": mode,
        "investment": invest,
        "worst_case_loss": D,
        "ev_travel": assignment.travel_cost,
        "ev_charging": assignment.charging_cost,
        "objective": invest + D,
    }
    return RunResult(plan, invest + D, gap_cert, solves, explorations, exploitations,
                     trace, terminated, costs, u_star, assignment)


# ---------------------------------------------------------------------------
# independent trace verification


def verify_trace(trace: list[TraceRow], params: AlgoParams, mode: str) -> list[str]:
    """Re-derive every phase decision from the recorded bounds."""
    bad = []
    eps = params.epsilon
    eps_tilde = params.resolved_epsilon_tilde()
    prev_ub_bar = math.inf
    for idx, row in enumerate(trace):
        if row.UB_bar > prev_ub_bar + 1e-9 * max(1.0, abs(prev_ub_bar)):
            bad.append(f"row {idx}: UB_bar increased")
        prev_ub_bar = row.UB_bar
        gap = (row.UB_bar - row.LB_k) / max(abs(row.UB_bar), 1e-10)
        ratio = (row.UB_bar - row.UB_i) / max(abs(row.UB_bar), 1e-10)
        if row.phase == "terminate":
            if not gap < eps:
                bad.append(f"row {idx}: terminated with gap {gap:.3e} >= {eps}")
        elif row.phase == "exploit":
            if not (gap >= eps and ratio < eps_tilde):
                bad.append(f"row {idx}: exploit taken with gap {gap:.3e}, ratio {ratio:.3e}")
        elif row.phase == "retighten":
            # duplicate-realization fallback: legal only above the gap target
            if gap < eps:
                bad.append(f"row {idx}: retightened although the gap test passed")
        elif row.phase == "explore":
            if gap < eps:
                bad.append(f"row {idx}: explored although the gap test passed")
            if mode != "ccg" and ratio < eps_tilde:
                bad.append(f"row {idx}: explored although exploitation applied")
        elif row.phase != "limit":
            bad.append(f"row {idx}: unknown phase {row.phase!r}")
    return bad
