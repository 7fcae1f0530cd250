"""Stochastic transport layer: scenario sampling and EV routing/charging.

A scenario is one stochastic draw of the EV side: fleet size from a
truncated normal restricted to an adaptive sub-interval, arrival hubs
proportional to hub population weights, and per-EV state-of-charge
figures.  Arrival and state-of-charge streams come from a Monte Carlo
pool keyed only by the instance seed, so two scenarios with the same
seed and fleet size describe the same vehicles; the per-iteration
randomness is the fleet-size draw.

Given siting decisions, ``solve_assignment`` routes every EV to exactly
one open charging station and schedules its charging power against
time-of-use prices, minimising annualised travel plus energy cost.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.stats import truncnorm

from . import mathprog as mp
from .instance_io import SCHEMA_VERSION, AlgoParams, InstanceSpec

log = logging.getLogger(__name__)

ANNUAL_DAYS = 365.0
_TIE_BREAK = 1e-9  # deterministic preference for low hub ids among equal-cost routes


class HubGraphError(ValueError):
    """Disconnected hub graph; message names the components."""


class PlanningInfeasibleError(RuntimeError):
    """The siting decision cannot serve the scenario (e.g. no open RCS)."""


@dataclass
class TransportScenario:
    """One stochastic draw of the EV fleet."""

    fleet_size: int
    arrival_hub: np.ndarray  # hub id per EV
    soc_init: np.ndarray  # kWh per EV
    soc_target: np.ndarray  # kWh per EV
    interval_mode: str  # "lower" | "upper" | "fixed"
    interval: tuple[float, float]
    draw_value: float  # continuous truncated-normal draw behind fleet_size
    seed: int
    fallback: bool = False  # degenerate interval handled as a point mass

    @property
    def m_in(self) -> dict[int, np.ndarray]:
        """One-hot arrival matrix as hub id -> indicator over EVs."""
        hubs = sorted(set(int(h) for h in self.arrival_hub))
        return {h: (self.arrival_hub == h).astype(float) for h in hubs}

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "fleet_size": int(self.fleet_size),
            "arrival_hub": [int(h) for h in self.arrival_hub],
            "soc_init": [float(v) for v in self.soc_init],
            "soc_target": [float(v) for v in self.soc_target],
            "interval_mode": self.interval_mode,
            "interval": [float(self.interval[0]), float(self.interval[1])],
            "draw_value": float(self.draw_value),
            "seed": int(self.seed),
            "fallback": bool(self.fallback),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransportScenario":
        return cls(
            fleet_size=int(data["fleet_size"]),
            arrival_hub=np.array(data["arrival_hub"], dtype=int),
            soc_init=np.array(data["soc_init"], dtype=float),
            soc_target=np.array(data["soc_target"], dtype=float),
            interval_mode=data["interval_mode"],
            interval=(float(data["interval"][0]), float(data["interval"][1])),
            draw_value=float(data["draw_value"]),
            seed=int(data["seed"]),
            fallback=bool(data.get("fallback", False)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TransportScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EvAssignment:
    """Middle-level solution: hub choice and charging schedule per EV."""

    hub_ids: list[int]  # open hubs, model order
    chosen_hub: np.ndarray  # hub id per EV (empty fleet -> empty)
    p_ut: np.ndarray  # EV x T charging power, kW
    p_ev: np.ndarray  # open-hub x EV x T linked power, kW
    n_k: dict[int, int]  # EV count per open hub
    objective: float  # annualised travel + charging cost
    travel_cost: float
    charging_cost: float
    scenario: TransportScenario = field(repr=False, default=None)


def shortest_distance_matrix(hub_ids: list[int], hub_edges: list[tuple[int, int, float]]):
    """All-pairs shortest-path distances over the hub graph.

    Returns ``(R, index)`` where ``R[index[a], index[b]]`` is the shortest
    distance from hub ``a`` to hub ``b``.  Raises HubGraphError naming the
    components when the graph is disconnected.
    """
    n = len(hub_ids)
    index = {h: i for i, h in enumerate(hub_ids)}
    rows, cols, vals = [], [], []
    for a, b, d in hub_edges:
        if d < 0:
            raise ValueError(f"negative hub distance on edge ({a},{b})")
        rows.extend([index[a], index[b]])
        cols.extend([index[b], index[a]])
        vals.extend([d, d])
    graph = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if n > 1:
        ncomp, labels = connected_components(graph, directed=False)
        if ncomp > 1:
            comps = [[h for h in hub_ids if labels[index[h]] == c] for c in range(ncomp)]
            raise HubGraphError(f"hub graph has {ncomp} components: {comps}")
    R = shortest_path(graph, directed=False)
    return np.asarray(R), index


def hub_distances(instance: InstanceSpec):
    return shortest_distance_matrix([h.id for h in instance.hubs], instance.hub_edges)


# ---------------------------------------------------------------------------
# sampling


def sample_truncated_normal(u01: float, mu: float, sigma: float, lo: float, hi: float):
    """Inverse-CDF draw of TN(mu, sigma^2) restricted to [lo, hi].

    Returns ``(value, fallback)``; fallback is True when the interval is
    degenerate or empty and the draw collapses to a point mass.
    """
    if lo > hi:
        value = min(max(mu, hi), lo)  # nearest bound of the (empty) interval
        return value, True
    if lo == hi:
        return lo, True
    if sigma <= 0:
        return min(max(mu, lo), hi), False
    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    value = float(truncnorm.ppf(u01, a, b, loc=mu, scale=sigma))
    if not np.isfinite(value):
        value = min(max(mu, lo), hi)
    return min(max(value, lo), hi), False


def _fleet_pool(instance: InstanceSpec, seed: int):
    """Deterministic Monte Carlo pool of v_max vehicles (arrival hub, SoC)."""
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 0x5EED])
    hubs = [h.id for h in instance.hubs]
    weights = np.array([h.pop_weight for h in instance.hubs], dtype=float)
    weights = weights / weights.sum()
    n = instance.fleet.v_max
    arrivals = rng.choice(hubs, size=n, p=weights) if n else np.zeros(0, dtype=int)
    ev = instance.ev
    span = ev.e_max_kwh - ev.e_min_kwh
    e0 = ev.e_min_kwh + 0.5 * span * rng.random(n)
    # requested top-up stays reachable inside the charging window
    window_energy = ev.p_max_kw * len(ev.charge_window)
    need = window_energy * (0.3 + 0.65 * rng.random(n))
    target = np.minimum(np.minimum(e0 + need, ev.e_max_kwh), e0 + window_energy)
    target = np.maximum(target, e0)
    return np.asarray(arrivals, dtype=int), e0, target


def sample_scenario(instance: InstanceSpec, params: AlgoParams, interval_mode: str,
                    mu_prev: float, iteration_state: int) -> TransportScenario:
    """Draw one scenario for the given adaptive-tracking branch.

    ``interval_mode`` "lower" restricts the fleet draw to [v_min, mu_prev]
    (taken after a master solve), "upper" to [mu_prev, v_max] (taken after a
    scenario-set enlargement); "fixed" pins the fleet at ``mu_prev``.
    """
    v_lo, v_hi = float(instance.fleet.v_min), float(instance.fleet.v_max)
    mu_prev = min(max(mu_prev, v_lo), v_hi)
    if interval_mode == "lower":
        lo, hi = v_lo, mu_prev
    elif interval_mode == "upper":
        lo, hi = mu_prev, v_hi
    elif interval_mode == "fixed":
        lo = hi = mu_prev
    else:
        raise ValueError(f"unknown interval mode {interval_mode!r}")
    mu = 0.5 * (lo + hi)
    sigma = params.fleet_sigma if params.fleet_sigma is not None else 0.25 * (v_hi - v_lo)
    rng = np.random.default_rng([int(params.seed) & 0x7FFFFFFF, 0xD4A3, int(iteration_state)])
    value, fallback = sample_truncated_normal(rng.random(), mu, sigma, lo, hi)
    if fallback:
        log.info("degenerate fleet interval [%s, %s]: point mass at %s", lo, hi, value)
    fleet = int(round(value))
    fleet = min(max(fleet, instance.fleet.v_min), instance.fleet.v_max)
    arrivals, e0, target = _fleet_pool(instance, params.seed)
    return TransportScenario(
        fleet_size=fleet,
        arrival_hub=arrivals[:fleet].copy(),
        soc_init=e0[:fleet].copy(),
        soc_target=target[:fleet].copy(),
        interval_mode=interval_mode,
        interval=(lo, hi),
        draw_value=value,
        seed=params.seed,
        fallback=fallback,
    )


def fixed_scenario(instance: InstanceSpec, params: AlgoParams, fleet: int) -> TransportScenario:
    """Scenario with the fleet pinned (robust baselines use v_max)."""
    fleet = int(min(max(fleet, instance.fleet.v_min), instance.fleet.v_max))
    arrivals, e0, target = _fleet_pool(instance, params.seed)
    return TransportScenario(
        fleet_size=fleet,
        arrival_hub=arrivals[:fleet].copy(),
        soc_init=e0[:fleet].copy(),
        soc_target=target[:fleet].copy(),
        interval_mode="fixed",
        interval=(float(fleet), float(fleet)),
        draw_value=float(fleet),
        seed=params.seed,
    )


# ---------------------------------------------------------------------------
# assignment MILP


def solve_assignment(open_hubs, scenario: TransportScenario, instance: InstanceSpec,
                     gap: float = 0.0, backend: str | None = None) -> EvAssignment:
    """Route each EV to one open hub and schedule its charging.

    ``open_hubs`` is an iterable of hub ids with an RCS built.  Minimises
    365 * (travel-cost trace + time-of-use charging cost).  Raises
    PlanningInfeasibleError when a nonzero fleet has no open station.
    """
    open_ids = sorted(int(h) for h in open_hubs)
    n_ev = scenario.fleet_size
    T = instance.periods
    window = sorted(instance.ev.charge_window)
    closed = [h for h in instance.hubs if h.id not in open_ids and h.n_min > 0]
    if closed:
        raise PlanningInfeasibleError(
            f"hubs {[h.id for h in closed]} require EVs but have no station built")
    if n_ev == 0:
        return EvAssignment(open_ids, np.zeros(0, dtype=int), np.zeros((0, T)),
                            np.zeros((len(open_ids), 0, T)), {h: 0 for h in open_ids},
                            0.0, 0.0, 0.0, scenario)
    if not open_ids:
        raise PlanningInfeasibleError("no open charging station for a nonzero fleet")

    R, index = hub_distances(instance)
    ev = instance.ev
    builder = mp.new_program("min")
    m_vars = {}  # (hub_pos, u) -> binary
    for kpos, hub in enumerate(open_ids):
        for u in range(n_ev):
            m_vars[kpos, u] = builder.add_binary(f"m_{hub}_{u}")
    p_vars = {}  # (u, t) -> charging power
    for u in range(n_ev):
        for t in window:
            p_vars[u, t] = builder.add_continuous(f"p_{u}_{t}", ev.p_min_kw, ev.p_max_kw)
    pev_vars = {}  # (hub_pos, u, t)
    for kpos in range(len(open_ids)):
        for u in range(n_ev):
            for t in window:
                pev_vars[kpos, u, t] = builder.add_continuous(f"pev_{kpos}_{u}_{t}", 0.0, ev.p_max_kw)

    # each EV charges at exactly one open hub
    for u in range(n_ev):
        builder.add_constraint([(m_vars[kpos, u], 1.0) for kpos in range(len(open_ids))],
                               "==", 1.0, name=f"one_hub_{u}")
    # per-hub vehicle-count bounds
    for kpos, hub in enumerate(open_ids):
        spec_hub = instance.hub_by_id(hub)
        terms = [(m_vars[kpos, u], 1.0) for u in range(n_ev)]
        if spec_hub.n_min > 0:
            builder.add_constraint(terms, ">=", float(spec_hub.n_min), name=f"nmin_{hub}")
        n_max = spec_hub.n_max if spec_hub.n_max is not None else n_ev
        builder.add_constraint(terms, "<=", float(n_max), name=f"nmax_{hub}")
    # big-M link p_ev = p * m without the product (M = max charging power)
    M = ev.p_max_kw
    for kpos in range(len(open_ids)):
        for u in range(n_ev):
            for t in window:
                pev = pev_vars[kpos, u, t]
                builder.add_constraint([(pev, 1.0), (m_vars[kpos, u], -M)], "<=", 0.0)
                builder.add_constraint([(pev, 1.0), (p_vars[u, t], -1.0), (m_vars[kpos, u], -M)],
                                       ">=", -M)
                builder.add_constraint([(pev, 1.0), (p_vars[u, t], -1.0), (m_vars[kpos, u], M)],
                                       "<=", M)
    # state-of-charge window and departure target (1 h periods)
    for u in range(n_ev):
        terms = [(p_vars[u, t], 1.0) for t in window]
        builder.add_constraint(terms, "<=", ev.e_max_kwh - scenario.soc_init[u], name=f"soc_hi_{u}")
        builder.add_constraint(terms, ">=", ev.e_min_kwh - scenario.soc_init[u], name=f"soc_lo_{u}")
        builder.add_constraint(terms, ">=", scenario.soc_target[u] - scenario.soc_init[u],
                               name=f"soc_target_{u}")

    obj = []
    for kpos, hub in enumerate(open_ids):
        for u in range(n_ev):
            dist = R[index[int(scenario.arrival_hub[u])], index[hub]]
            coef = ANNUAL_DAYS * ev.travel_cost_factor * dist + _TIE_BREAK * kpos
            obj.append((m_vars[kpos, u], coef))
    for u in range(n_ev):
        for t in window:
            obj.append((p_vars[u, t], ANNUAL_DAYS * instance.tou_prices[t]))
    builder.set_objective(obj)

    out = mp.solve_with_gap(builder.build(), gap=gap, backend=backend)
    if out.status == mp.INFEASIBLE:
        raise PlanningInfeasibleError("EV assignment infeasible under the given siting")
    if out.assignment is None:
        raise mp.SolveFailure(f"assignment solve ended with status {out.status}")

    chosen = np.zeros(n_ev, dtype=int)
    p_ut = np.zeros((n_ev, T))
    p_ev = np.zeros((len(open_ids), n_ev, T))
    for (kpos, u), var in m_vars.items():
        if out.value(var) > 0.5:
            chosen[u] = open_ids[kpos]
    for (u, t), var in p_vars.items():
        p_ut[u, t] = out.value(var)
    for (kpos, u, t), var in pev_vars.items():
        p_ev[kpos, u, t] = out.value(var)
    n_k = {hub: int((chosen == hub).sum()) for hub in open_ids}
    travel = float(sum(ANNUAL_DAYS * ev.travel_cost_factor *
                       R[index[int(scenario.arrival_hub[u])], index[int(chosen[u])]]
                       for u in range(n_ev)))
    charging = float(ANNUAL_DAYS * sum(instance.tou_prices[t] * p_ut[:, t].sum() for t in window))
    return EvAssignment(open_ids, chosen, p_ut, p_ev, n_k, travel + charging,
                        travel, charging, scenario)


def charging_load(assignment: EvAssignment, instance: InstanceSpec) -> dict[int, np.ndarray]:
    """Aggregated station load, hub id -> kW per period (all hubs, closed rows zero)."""
    T = instance.periods
    load = {h.id: np.zeros(T) for h in instance.hubs}
    for kpos, hub in enumerate(assignment.hub_ids):
        load[hub] += assignment.p_ev[kpos].sum(axis=0)
    return load


def check_assignment(assignment: EvAssignment, open_hubs, instance: InstanceSpec,
                     tol: float = 1e-6) -> list[str]:
    """Re-check the assignment constraints by plain arithmetic (solver-free)."""
    bad = []
    scen = assignment.scenario
    open_ids = sorted(int(h) for h in open_hubs)
    ev = instance.ev
    window = set(instance.ev.charge_window)
    n_ev = scen.fleet_size
    for u in range(n_ev):
        hub = int(assignment.chosen_hub[u])
        if hub not in open_ids:
            bad.append(f"ev {u}: assigned to closed hub {hub}")
        added = assignment.p_ut[u].sum()
        e_end = scen.soc_init[u] + added
        if e_end > ev.e_max_kwh + tol or e_end < ev.e_min_kwh - tol:
            bad.append(f"ev {u}: state of charge {e_end} outside limits")
        if e_end < scen.soc_target[u] - tol:
            bad.append(f"ev {u}: departure target missed")
        for t in range(instance.periods):
            p = assignment.p_ut[u, t]
            if t not in window and abs(p) > tol:
                bad.append(f"ev {u}: charging outside the window at t={t}")
            if t in window and not (ev.p_min_kw - tol <= p <= ev.p_max_kw + tol):
                bad.append(f"ev {u}: power {p} outside [{ev.p_min_kw}, {ev.p_max_kw}] at t={t}")
    for kpos, hub in enumerate(assignment.hub_ids):
        spec_hub = instance.hub_by_id(hub)
        count = int((assignment.chosen_hub == hub).sum()) if n_ev else 0
        n_max = spec_hub.n_max if spec_hub.n_max is not None else n_ev
        if not spec_hub.n_min - tol <= count <= n_max + tol:
            bad.append(f"hub {hub}: vehicle count {count} outside bounds")
        for u in range(n_ev):
            sel = 1.0 if int(assignment.chosen_hub[u]) == hub else 0.0
            for t in range(instance.periods):
                want = assignment.p_ut[u, t] * sel
                if abs(assignment.p_ev[kpos, u, t] - want) > tol:
                    bad.append(f"big-M link broken at hub {hub}, ev {u}, t={t}")
    return bad
