"""Problem-instance loading, validation, and result/trace persistence.

One JSON schema (``schema_version`` 1) covers instances, scenarios, and
results; CSV is used only for iteration traces and sweep tables.

Unit conventions, declared once here and used everywhere:

* power in kW / kvar, energy in kWh, one period = one hour;
* voltage magnitudes in per-unit; the model works with squared values;
* line ``r``/``x`` are effective per-unit impedances scaled so that
  ``loss_kw = r * (p_kw**2 + q_kvar**2)`` and the squared-voltage drop is
  ``2 * (r * p + x * q)``;
* costs in units of 10^4 CNY, prices in 10^4 CNY per kWh, all
  investment figures annualised via the capital recovery factor;
* the planning day is scaled by 365 to annualise operating costs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1

#: Trace CSV column order (one row per master solve).
TRACE_COLUMNS = ["iteration", "phase", "k", "UB_i", "LB_i", "UB_bar", "LB_k",
                 "eps_up", "scen_count", "fleet_draw", "wall_ms"]


class InstanceError(ValueError):
    """Schema or invariant violations; message lists every failure found."""

    def __init__(self, problems, path=None):
        self.problems = list(problems)
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(where + "; ".join(self.problems))


class ReportIOError(OSError):
    """I/O failure while writing results, annotated with the path."""


@dataclass
class Node:
    id: int
    kind: str  # "root" | "load"
    fictitious_demand: float = 1.0


@dataclass
class CandidateLine:
    i: int
    j: int
    length_km: float
    r: float
    x: float
    capacity_kw: float
    unit_cost: float  # 10^4 CNY per km

    @property
    def key(self) -> tuple[int, int]:
        return (self.i, self.j) if self.i < self.j else (self.j, self.i)

    @property
    def cost(self) -> float:
        return self.unit_cost * self.length_km


@dataclass
class Hub:
    id: int
    node: int
    cost: float
    pop_weight: float
    cost_components: list[tuple[float, float]] | None = None  # (amount, lifespan)
    n_min: int = 0
    n_max: int | None = None  # None -> fleet size


@dataclass
class EvParams:
    consumption_wh_per_km: float
    travel_cost_factor: float  # 10^4 CNY per km travelled
    p_min_kw: float
    p_max_kw: float
    e_min_kwh: float
    e_max_kwh: float
    charge_window: list[int]


@dataclass
class FleetBounds:
    v_min: int
    v_max: int


@dataclass
class EssParams:
    eta_ch: float
    eta_dis: float
    p_ch_max: float
    p_dis_max: float
    e_min: float
    e_max: float


@dataclass
class InstanceSpec:
    """A full planning instance; see the module docstring for units."""

    name: str
    nodes: list[Node]
    candidate_lines: list[CandidateLine]
    hubs: list[Hub]
    hub_edges: list[tuple[int, int, float]]
    rcs_min_count: int
    rcs_type: str  # "ev-only" | "pv-ev" | "pv-ess-ev"
    ev: EvParams
    fleet: FleetBounds
    tou_prices: list[float]
    p_load_box: dict[int, list[tuple[float, float]]]  # node -> per-period (lo, hi)
    q_load_box: dict[int, list[tuple[float, float]]]
    pv_box: dict[int, list[tuple[float, float]]]  # hub -> per-period (lo, hi)
    ess: EssParams | None
    substation: dict[str, float]  # p_min/p_max/q_min/q_max
    voltage: dict[str, float]  # v_min/v_max in p.u.
    finance: dict[str, float]  # inflation_rate, life_line_years, life_rcs_years

    @property
    def periods(self) -> int:
        return len(self.tou_prices)

    @property
    def root_id(self) -> int:
        return next(n.id for n in self.nodes if n.kind == "root")

    @property
    def load_node_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "load"]

    def hub_by_id(self, hub_id: int) -> Hub:
        return next(h for h in self.hubs if h.id == hub_id)

    def load_box(self, kind: str, node_id: int) -> list[tuple[float, float]]:
        box = self.p_load_box if kind == "p" else self.q_load_box
        return box.get(node_id, [(0.0, 0.0)] * self.periods)

    def pv_box_for(self, hub_id: int) -> list[tuple[float, float]]:
        return self.pv_box.get(hub_id, [(0.0, 0.0)] * self.periods)

    def validate(self) -> list[str]:
        """All invariant violations, with field paths; empty when valid."""
        bad: list[str] = []
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            bad.append("nodes: duplicate ids")
        roots = [n for n in self.nodes if n.kind == "root"]
        if len(roots) != 1:
            bad.append(f"nodes: exactly one root required, found {len(roots)}")
        for n in self.nodes:
            if n.kind not in ("root", "load"):
                bad.append(f"nodes[{n.id}].kind: unknown kind {n.kind!r}")
        node_set = set(ids)
        seen_lines = set()
        for li, line in enumerate(self.candidate_lines):
            path = f"candidate_lines[{li}]"
            if line.i not in node_set or line.j not in node_set:
                bad.append(f"{path}: endpoint not a node")
            if line.key in seen_lines:
                bad.append(f"{path}: duplicate corridor {line.key}")
            seen_lines.add(line.key)
            for attr in ("length_km", "r", "x", "capacity_kw", "unit_cost"):
                if getattr(line, attr) < 0:
                    bad.append(f"{path}.{attr}: negative")
        if self.nodes and not _connected(node_set, [l.key for l in self.candidate_lines]):
            bad.append("candidate_lines: graph is not connected over all nodes")
        hub_ids = [h.id for h in self.hubs]
        if len(set(hub_ids)) != len(hub_ids):
            bad.append("hubs: duplicate ids")
        for h in self.hubs:
            if h.node not in node_set:
                bad.append(f"hubs[{h.id}].node: {h.node} is not a DN node")
            if h.cost < 0:
                bad.append(f"hubs[{h.id}].cost: negative")
            if h.pop_weight < 0:
                bad.append(f"hubs[{h.id}].pop_weight: negative")
            if h.cost_components is not None:
                total = sum(a for a, _ in h.cost_components)
                if abs(total - h.cost) > 1e-6 * max(1.0, abs(h.cost)):
                    bad.append(f"hubs[{h.id}].cost_components: sum {total} != cost {h.cost}")
        if sum(h.pop_weight for h in self.hubs) <= 0:
            bad.append("hubs: total pop_weight must be positive")
        hub_set = set(hub_ids)
        for ei, (a, b, d) in enumerate(self.hub_edges):
            if a not in hub_set or b not in hub_set:
                bad.append(f"hub_edges[{ei}]: endpoint not a hub")
            if d < 0:
                bad.append(f"hub_edges[{ei}]: negative distance")
        if self.rcs_min_count > len(self.hubs):
            bad.append(f"rcs_min_count: {self.rcs_min_count} exceeds hub count {len(self.hubs)}")
        if self.rcs_type not in ("ev-only", "pv-ev", "pv-ess-ev"):
            bad.append(f"rcs_type: unknown type {self.rcs_type!r}")
        if self.rcs_type == "pv-ess-ev" and self.ess is None:
            bad.append("ess: required for rcs_type pv-ess-ev")
        T = self.periods
        if T == 0:
            bad.append("tou_prices: empty")
        if any(p < 0 for p in self.tou_prices):
            bad.append("tou_prices: negative price")
        if not self.ev.charge_window:
            bad.append("ev.charge_window: empty")
        if any(t < 0 or t >= T for t in self.ev.charge_window):
            bad.append("ev.charge_window: period out of range")
        if not 0 <= self.ev.p_min_kw <= self.ev.p_max_kw:
            bad.append("ev: requires 0 <= p_min_kw <= p_max_kw")
        if not 0 <= self.ev.e_min_kwh <= self.ev.e_max_kwh:
            bad.append("ev: requires 0 <= e_min_kwh <= e_max_kwh")
        if not 0 <= self.fleet.v_min <= self.fleet.v_max:
            bad.append("fleet: requires 0 <= v_min <= v_max")
        for label, box, keys in (("p_load", self.p_load_box, node_set),
                                 ("q_load", self.q_load_box, node_set),
                                 ("pv", self.pv_box, hub_set)):
            for key, intervals in box.items():
                if key not in keys:
                    bad.append(f"diu_box.{label}[{key}]: unknown id")
                if len(intervals) != T:
                    bad.append(f"diu_box.{label}[{key}]: expected {T} intervals")
                for t, (lo, hi) in enumerate(intervals):
                    if lo > hi:
                        bad.append(f"diu_box.{label}[{key}][{t}]: lower {lo} > upper {hi}")
        if self.ess is not None:
            e = self.ess
            if e.eta_ch <= 0 or e.eta_dis <= 0:
                bad.append("ess: efficiencies must be positive")
            if e.p_ch_max < 0 or e.p_dis_max < 0:
                bad.append("ess: power limits must be nonnegative")
            if not 0 <= e.e_min <= e.e_max:
                bad.append("ess: requires 0 <= e_min <= e_max")
        if not 0 < self.voltage["v_min"] < self.voltage["v_max"]:
            bad.append("voltage: requires 0 < v_min < v_max")
        if self.substation["p_min"] > self.substation["p_max"]:
            bad.append("substation: p_min > p_max")
        if self.substation["q_min"] > self.substation["q_max"]:
            bad.append("substation: q_min > q_max")
        if self.finance["inflation_rate"] < 0:
            bad.append("finance.inflation_rate: negative")
        for key in ("life_line_years", "life_rcs_years"):
            if self.finance[key] < 1:
                bad.append(f"finance.{key}: must be >= 1 year")
        return bad


def _connected(nodes: set[int], edges: list[tuple[int, int]]) -> bool:
    if not nodes:
        return True
    adj: dict[int, list[int]] = {n: [] for n in nodes}
    for a, b in edges:
        if a in adj and b in adj:
            adj[a].append(b)
            adj[b].append(a)
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen == nodes


@dataclass
class AlgoParams:
    """Algorithm knobs shared by the three decomposition variants."""

    epsilon: float = 1e-4
    epsilon_tilde: float | None = None  # default: half of epsilon/(1+epsilon)
    eps_up_init: float = 0.1
    alpha: float = 0.5
    seed: int = 0
    max_iterations: int = 200
    fleet_mu: float | None = None  # default: midpoint of instance fleet bounds
    fleet_sigma: float | None = None  # default: quarter of the bound range
    remark2_slack: float = 0.005  # relative slack on LB_k <= UB_bar (stochastic path)
    worst_case_method: str = "vertex-enum"

    def resolved_epsilon_tilde(self) -> float:
        if self.epsilon_tilde is not None:
            return self.epsilon_tilde
        return 0.5 * self.epsilon / (1.0 + self.epsilon)

    def validate(self) -> list[str]:
        bad = []
        if not 0.0 <= self.epsilon <= 1.0:
            bad.append("epsilon: must be in [0,1]")
        et = self.resolved_epsilon_tilde()
        if not 0.0 < et < self.epsilon / (self.epsilon + 1.0) + 1e-15:
            bad.append("epsilon_tilde: must lie in (0, epsilon/(epsilon+1))")
        if not 0.0 < self.alpha < 1.0:
            bad.append("alpha: must be in (0,1)")
        if not 0.0 <= self.eps_up_init <= 1.0:
            bad.append("eps_up_init: must be in [0,1]")
        if self.max_iterations < 1:
            bad.append("max_iterations: must be >= 1")
        if self.fleet_sigma is not None and self.fleet_sigma < 0:
            bad.append("fleet_sigma: negative")
        return bad


# ---------------------------------------------------------------------------
# loading / saving


def _boxes_from_json(obj: dict) -> dict[int, list[tuple[float, float]]]:
    return {int(k): [(float(lo), float(hi)) for lo, hi in v] for k, v in obj.items()}


def instance_from_dict(data: dict) -> InstanceSpec:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InstanceError([f"schema_version: expected {SCHEMA_VERSION}, got {data.get('schema_version')!r}"])
    try:
        nodes = [Node(int(n["id"]), n["kind"], float(n.get("fictitious_demand",
                      1.0 if n["kind"] == "load" else 0.0))) for n in data["nodes"]]
        lines = [CandidateLine(int(l["i"]), int(l["j"]), float(l["length_km"]), float(l["r"]),
                               float(l["x"]), float(l["capacity_kw"]), float(l["unit_cost"]))
                 for l in data["candidate_lines"]]
        hubs = [Hub(int(h["id"]), int(h["node"]), float(h["cost"]), float(h["pop_weight"]),
                    [(float(a), float(t)) for a, t in h["cost_components"]] if h.get("cost_components") else None,
                    int(h.get("n_min", 0)),
                    int(h["n_max"]) if h.get("n_max") is not None else None)
                for h in data["hubs"]]
        ev = EvParams(float(data["ev"]["consumption_wh_per_km"]),
                      float(data["ev"]["travel_cost_factor"]),
                      float(data["ev"]["p_min_kw"]), float(data["ev"]["p_max_kw"]),
                      float(data["ev"]["e_min_kwh"]), float(data["ev"]["e_max_kwh"]),
                      [int(t) for t in data["ev"]["charge_window"]])
        ess = None
        if data.get("ess") is not None:
            e = data["ess"]
            ess = EssParams(float(e["eta_ch"]), float(e["eta_dis"]), float(e["p_ch_max"]),
                            float(e["p_dis_max"]), float(e["e_min"]), float(e["e_max"]))
        spec = InstanceSpec(
            name=str(data.get("name", "unnamed")),
            nodes=nodes,
            candidate_lines=lines,
            hubs=hubs,
            hub_edges=[(int(a), int(b), float(d)) for a, b, d in data["hub_edges"]],
            rcs_min_count=int(data["rcs_min_count"]),
            rcs_type=str(data["rcs_type"]),
            ev=ev,
            fleet=FleetBounds(int(data["fleet"]["v_min"]), int(data["fleet"]["v_max"])),
            tou_prices=[float(p) for p in data["tou_prices"]],
            p_load_box=_boxes_from_json(data["diu_box"].get("p_load", {})),
            q_load_box=_boxes_from_json(data["diu_box"].get("q_load", {})),
            pv_box=_boxes_from_json(data["diu_box"].get("pv", {})),
            ess=ess,
            substation={k: float(v) for k, v in data["substation"].items()},
            voltage={k: float(v) for k, v in data["voltage"].items()},
            finance={k: float(v) for k, v in data["finance"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError([f"schema error: {exc!r}"]) from exc
    return spec


def instance_to_dict(spec: InstanceSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "nodes": [{"id": n.id, "kind": n.kind, "fictitious_demand": n.fictitious_demand}
                  for n in spec.nodes],
        "candidate_lines": [{"i": l.i, "j": l.j, "length_km": l.length_km, "r": l.r, "x": l.x,
                             "capacity_kw": l.capacity_kw, "unit_cost": l.unit_cost}
                            for l in spec.candidate_lines],
        "hubs": [{"id": h.id, "node": h.node, "cost": h.cost, "pop_weight": h.pop_weight,
                  "cost_components": [list(c) for c in h.cost_components] if h.cost_components else None,
                  "n_min": h.n_min, "n_max": h.n_max}
                 for h in spec.hubs],
        "hub_edges": [[a, b, d] for a, b, d in spec.hub_edges],
        "rcs_min_count": spec.rcs_min_count,
        "rcs_type": spec.rcs_type,
        "ev": {"consumption_wh_per_km": spec.ev.consumption_wh_per_km,
               "travel_cost_factor": spec.ev.travel_cost_factor,
               "p_min_kw": spec.ev.p_min_kw, "p_max_kw": spec.ev.p_max_kw,
               "e_min_kwh": spec.ev.e_min_kwh, "e_max_kwh": spec.ev.e_max_kwh,
               "charge_window": list(spec.ev.charge_window)},
        "fleet": {"v_min": spec.fleet.v_min, "v_max": spec.fleet.v_max},
        "tou_prices": list(spec.tou_prices),
        "diu_box": {
            "p_load": {str(k): [[lo, hi] for lo, hi in v] for k, v in spec.p_load_box.items()},
            "q_load": {str(k): [[lo, hi] for lo, hi in v] for k, v in spec.q_load_box.items()},
            "pv": {str(k): [[lo, hi] for lo, hi in v] for k, v in spec.pv_box.items()},
        },
        "ess": None if spec.ess is None else dict(vars(spec.ess)),
        "substation": dict(spec.substation),
        "voltage": dict(spec.voltage),
        "finance": dict(spec.finance),
    }


def load_instance(path) -> InstanceSpec:
    """Load and validate an instance file; raises InstanceError listing
    every schema/invariant violation found (not just the first)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise InstanceError([f"cannot read file: {exc}"], path=path) from exc
    except json.JSONDecodeError as exc:
        raise InstanceError([f"invalid JSON: {exc}"], path=path) from exc
    spec = instance_from_dict(data)
    problems = spec.validate()
    if problems:
        raise InstanceError(problems, path=path)
    return spec


def save_instance(spec: InstanceSpec, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(spec), indent=2) + "\n")


# ---------------------------------------------------------------------------
# finance


def capital_recovery_factor(d: float, T: float) -> float:
    """Annuity factor ``d(1+d)^T / ((1+d)^T - 1)``.

    Multiplying an investment cost by this converts it into an equivalent
    annual cost over a lifespan of ``T`` years at rate ``d``.  Uses
    expm1/log1p so the straight-line limit ``1/T`` is exact as d -> 0.
    """
    if d < 0:
        raise ValueError("rate must be nonnegative")
    if T < 1:
        raise ValueError("lifespan must be at least one year")
    if d == 0.0:
        return 1.0 / T
    growth = math.expm1(T * math.log1p(d))  # (1+d)^T - 1
    return d * (growth + 1.0) / growth


# ---------------------------------------------------------------------------
# results and traces


def write_report(result: dict, trace, outdir) -> None:
    """Write ``result.json`` and ``trace.csv`` into ``outdir``.

    ``result`` is a JSON-ready mapping; ``trace`` is an iterable of
    mappings with the TRACE_COLUMNS keys.
    """
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        payload = {"schema_version": SCHEMA_VERSION, **result}
        (outdir / "result.json").write_text(json.dumps(payload, indent=2) + "\n")
        with open(outdir / "trace.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            writer.writeheader()
            for row in trace:
                writer.writerow({k: row[k] for k in TRACE_COLUMNS})
    except OSError as exc:
        raise ReportIOError(f"failed writing report under {outdir}: {exc}") from exc


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in TRACE_COLUMNS:
            if key not in ("phase",):
                row[key] = float(row[key])
    return rows
