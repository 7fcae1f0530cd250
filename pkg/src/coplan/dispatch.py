"""Lower-level robust operation: minimum-loss dispatch and its worst case.

For a fixed plan (built lines, open stations) and fixed station charging
load, the inner problem is a convex quadratic program over a linearised
branch-flow model: squared voltages are decision variables, the line
capacity disk is outer-approximated by tangent cuts (refined until the
returned point respects the disk), and the loss objective uses a constant
1.0 p.u. voltage anchor.

Everything is canonicalised to ``min 0.5 x'Qx + d'x + c0`` over ``x >= 0``
with inequality rows ``A_in x <= b_in(u)`` and equality rows
``A_eq x = b_eq(u)``, where the uncertain loads and PV outputs ``u`` enter
only the right-hand sides.  That canonical form drives three consumers:

* the exact QP oracle (per-realization dispatch),
* the box worst case, either by vertex enumeration (the inner minimum is
  convex in ``u``, so the maximum sits at a box vertex) or through the
  KKT single-level mixed-binary reformulation with big-M complementarity,
* KKT certificates checked independently of any solver.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import mathprog as mp
from .instance_io import InstanceSpec

log = logging.getLogger(__name__)

CAPACITY_SEGMENTS = 8  # tangent directions on the line-capacity disk
PWL_SEGMENTS = 6  # secant segments per quadratic term in the KKT MILP
KKT_AGREE_RTOL = 5e-4  # certified refinement target for the MILP route
DUAL_BOUND = 1e4  # big-M on multipliers, audited post-solve
MAX_ENUM_DIM = 12


class DispatchInfeasibleError(RuntimeError):
    """Inner dispatch infeasible; message names the binding constraint family."""


class BudgetExceededError(RuntimeError):
    """Vertex enumeration would exceed the configured budget."""


class BigMError(RuntimeError):
    """A KKT multiplier reached its big-M bound; the reformulation is unsound."""


@dataclass
class DiuRealization:
    """One point of the robust box: nodal loads and PV outputs per period."""

    p_load: dict[int, np.ndarray]  # node id -> kW per period
    q_load: dict[int, np.ndarray]
    p_pv: dict[int, np.ndarray]  # hub id -> kW per period

    def to_dict(self) -> dict:
        return {
            "p_load": {str(k): [float(v) for v in arr] for k, arr in self.p_load.items()},
            "q_load": {str(k): [float(v) for v in arr] for k, arr in self.q_load.items()},
            "p_pv": {str(k): [float(v) for v in arr] for k, arr in self.p_pv.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiuRealization":
        unpack = lambda d: {int(k): np.array(v, dtype=float) for k, v in d.items()}
        return cls(unpack(data["p_load"]), unpack(data["q_load"]), unpack(data["p_pv"]))

    def is_close(self, other: "DiuRealization", tol: float = 1e-7) -> bool:
        for mine, theirs in ((self.p_load, other.p_load), (self.q_load, other.q_load),
                             (self.p_pv, other.p_pv)):
            if set(mine) != set(theirs):
                return False
            for key, arr in mine.items():
                if np.max(np.abs(arr - theirs[key])) > tol:
                    return False
        return True


@dataclass
class DistFlowState:
    """Dispatch solution in physical units (built lines / open hubs only)."""

    p_flow: dict[tuple[int, int], np.ndarray]
    q_flow: dict[tuple[int, int], np.ndarray]
    v_sq: dict[int, np.ndarray]
    p_sub: np.ndarray
    q_sub: np.ndarray
    e_ess: dict[int, np.ndarray]  # hub -> length T+1 trajectory
    p_ch: dict[int, np.ndarray]
    p_dis: dict[int, np.ndarray]
    loss_cost: float  # annualised, 10^4 CNY


@dataclass
class KktCertificate:
    """Primal/dual witness for the inner QP at one DIU realization."""

    x: np.ndarray
    pi: np.ndarray  # multipliers of the inequality rows (>= 0)
    y_eq: np.ndarray  # multipliers of the equality rows (free)
    lam: np.ndarray  # multipliers of x >= 0
    o: np.ndarray  # complementarity binaries for inequality rows
    w: np.ndarray  # complementarity binaries for x >= 0
    u: np.ndarray  # active DIU coordinates the system was evaluated at
    residuals: dict[str, float] = field(default_factory=dict)


@dataclass
class UDim:
    kind: str  # "p_load" | "q_load" | "pv"
    ident: int  # node id or hub id
    t: int
    lo: float
    hi: float
    entries: list[tuple[int, float]]  # (program row, rhs coefficient)

    @property
    def free(self) -> bool:
        return self.hi - self.lo > 1e-12


@dataclass
class KktSystem:
    """Canonical inner QP: min 0.5 x'Qx + d'x + c0, A_in x <= b_in(u),
    A_eq x = b_eq(u), x >= 0, with u entering the right-hand sides."""

    Q: np.ndarray  # diagonal entries
    d: np.ndarray
    c0: float
    A_in: np.ndarray
    b_in0: np.ndarray
    U_in: np.ndarray  # b_in = b_in0 + U_in @ u
    A_eq: np.ndarray
    b_eq0: np.ndarray
    U_eq: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    def b_in(self, u: np.ndarray) -> np.ndarray:
        return self.b_in0 + (self.U_in @ u if len(u) else 0.0)

    def b_eq(self, u: np.ndarray) -> np.ndarray:
        return self.b_eq0 + (self.U_eq @ u if len(u) else 0.0)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.Q * x) + self.d @ x + self.c0)


class DispatchModel:
    """Canonical QP for one (plan, hub load) pair; u varies per solve."""

    def __init__(self, plan, hub_load: dict[int, np.ndarray], instance: InstanceSpec,
                 capacity_cuts: dict[tuple[int, int], list[float]] | None = None):
        self.instance = instance
        self.built = sorted(set(plan.built_lines))
        self.open_hubs = sorted(set(plan.open_hubs))
        self.hub_load = hub_load
        self.capacity_cuts = capacity_cuts or {}
        self._build()

    # -- construction --------------------------------------------------------

    def _build(self) -> None:
        inst = self.instance
        T = inst.periods
        lines = {l.key: l for l in inst.candidate_lines}
        self.lines = [lines[k] for k in self.built]
        builder = mp.new_program("min")

        self.var_offset: dict[mp.VarRef, float] = {}

        def shifted(name, lo, hi):
            ref = builder.add_continuous(name, 0.0, hi - lo)
            self.var_offset[ref] = lo
            return ref

        v_lo, v_hi = inst.voltage["v_min"] ** 2, inst.voltage["v_max"] ** 2
        self.vp = {}
        self.vq = {}
        for line in self.lines:
            cap = line.capacity_kw
            for t in range(T):
                self.vp[line.key, t] = shifted(f"p_{line.key[0]}_{line.key[1]}_{t}", -cap, cap)
                self.vq[line.key, t] = shifted(f"q_{line.key[0]}_{line.key[1]}_{t}", -cap, cap)
        self.vv = {(n.id, t): shifted(f"v_{n.id}_{t}", v_lo, v_hi)
                   for n in inst.nodes for t in range(T)}
        sub = inst.substation
        self.vpsub = {t: shifted(f"psub_{t}", sub["p_min"], sub["p_max"]) for t in range(T)}
        self.vqsub = {t: shifted(f"qsub_{t}", sub["q_min"], sub["q_max"]) for t in range(T)}
        self.ess_hubs = [h for h in self.open_hubs if inst.ess is not None]
        self.ve, self.vch, self.vdis = {}, {}, {}
        if inst.ess is not None:
            e = inst.ess
            # loss indifference admits simultaneous charge/discharge on the
            # optimal face; a vanishing throughput cost selects the clean point
            ess_tie = 1e-6 * 365.0 * min(p for p in inst.tou_prices if p > 0)
            for k in self.ess_hubs:
                for t in range(T + 1):
                    self.ve[k, t] = shifted(f"e_{k}_{t}", e.e_min, e.e_max)
                for t in range(T):
                    self.vch[k, t] = shifted(f"ch_{k}_{t}", 0.0, e.p_ch_max)
                    self.vdis[k, t] = shifted(f"dis_{k}_{t}", 0.0, e.p_dis_max)
                    builder.add_objective_term(self.vch[k, t], ess_tie)
                    builder.add_objective_term(self.vdis[k, t], ess_tie)

        # quadratic loss objective at the 1.0 p.u. voltage anchor
        c0 = 0.0
        for line in self.lines:
            for t in range(T):
                w = 365.0 * inst.tou_prices[t] * line.r
                for ref in (self.vp[line.key, t], self.vq[line.key, t]):
                    off = self.var_offset[ref]
                    builder.add_quadratic_term(ref, w)
                    builder.add_objective_term(ref, 2.0 * w * off)
                    c0 += w * off * off
        self._obj_const = c0

        def add_row(terms, sense, rhs_phys, name):
            # physical row -> shifted row (constants from the shifts fold into rhs)
            correction = sum(c * self.var_offset[v] for v, c in terms)
            return builder.add_constraint(terms, sense, rhs_phys - correction, name)

        hubs_at: dict[int, list[int]] = {}
        for k in self.open_hubs:
            hubs_at.setdefault(inst.hub_by_id(k).node, []).append(k)

        self.row_family: dict[int, str] = {}
        self.row_p_balance = {}
        self.row_q_balance = {}
        root = inst.root_id
        for node in inst.nodes:
            for t in range(T):
                terms = []
                for line in self.lines:
                    a, b = line.key
                    if node.id == b:
                        terms.append((self.vp[line.key, t], 1.0))
                    elif node.id == a:
                        terms.append((self.vp[line.key, t], -1.0))
                if node.id == root:
                    terms.append((self.vpsub[t], 1.0))
                rhs = 0.0
                for k in hubs_at.get(node.id, []):
                    rhs += float(self.hub_load[k][t])
                    if k in self.ve:
                        terms.append((self.vdis[k, t], 1.0))
                        terms.append((self.vch[k, t], -1.0))
                r = add_row(terms, "==", rhs, f"pbal_{node.id}_{t}")
                self.row_p_balance[node.id, t] = r
                self.row_family[r] = "balance"
        for node in inst.nodes:
            for t in range(T):
                terms = []
                for line in self.lines:
                    a, b = line.key
                    if node.id == b:
                        terms.append((self.vq[line.key, t], 1.0))
                    elif node.id == a:
                        terms.append((self.vq[line.key, t], -1.0))
                if node.id == root:
                    terms.append((self.vqsub[t], 1.0))
                r = add_row(terms, "==", 0.0, f"qbal_{node.id}_{t}")
                self.row_q_balance[node.id, t] = r
                self.row_family[r] = "balance"

        for line in self.lines:
            a, b = line.key
            for t in range(T):
                terms = [(self.vv[a, t], 1.0), (self.vv[b, t], -1.0),
                         (self.vp[line.key, t], -2.0 * line.r),
                         (self.vq[line.key, t], -2.0 * line.x)]
                r = add_row(terms, "==", 0.0, f"vdrop_{a}_{b}_{t}")
                self.row_family[r] = "voltage"
        for t in range(T):
            r = add_row([(self.vv[root, t], 1.0)], "==", 1.0, f"vroot_{t}")
            self.row_family[r] = "voltage"

        if inst.ess is not None:
            e = inst.ess
            init = e.e_min + 0.5 * (e.e_max - e.e_min)
            for k in self.ess_hubs:
                for t in range(T):
                    r = add_row([(self.ve[k, t + 1], 1.0), (self.ve[k, t], -1.0),
                                 (self.vch[k, t], -e.eta_ch), (self.vdis[k, t], e.eta_dis)],
                                "==", 0.0, f"ess_dyn_{k}_{t}")
                    self.row_family[r] = "ess"
                r = add_row([(self.ve[k, 0], 1.0)], "==", init, f"ess_init_{k}")
                self.row_family[r] = "ess"
                r = add_row([(self.ve[k, T], 1.0), (self.ve[k, 0], -1.0)], "==", 0.0,
                            f"ess_cyc_{k}")
                self.row_family[r] = "ess"

        self.capacity_rows: dict[tuple, int] = {}
        for line in self.lines:
            angles = _capacity_angles(self.capacity_cuts.get(line.key))
            for t in range(T):
                for theta in angles:
                    terms = [(self.vp[line.key, t], float(np.cos(theta))),
                             (self.vq[line.key, t], float(np.sin(theta)))]
                    r = add_row(terms, "<=", line.capacity_kw, f"cap_{line.key[0]}_{line.key[1]}_{t}_{theta:.4f}")
                    self.capacity_rows[line.key, t, round(theta, 9)] = r
                    self.row_family[r] = "capacity"

        self.program = builder.build()
        self._base_rhs = np.array([row.rhs for row in self.program.rows])

        # DIU dimensions: every box entry that reaches this model's RHS
        self.u_dims: list[UDim] = []
        for node in inst.nodes:
            pbox = inst.load_box("p", node.id)
            qbox = inst.load_box("q", node.id)
            for t in range(T):
                self.u_dims.append(UDim("p_load", node.id, t, pbox[t][0], pbox[t][1],
                                        [(self.row_p_balance[node.id, t], 1.0)]))
                self.u_dims.append(UDim("q_load", node.id, t, qbox[t][0], qbox[t][1],
                                        [(self.row_q_balance[node.id, t], 1.0)]))
        for k in self.open_hubs:
            box = inst.pv_box_for(k)
            node = inst.hub_by_id(k).node
            for t in range(T):
                self.u_dims.append(UDim("pv", k, t, box[t][0], box[t][1],
                                        [(self.row_p_balance[node, t], -1.0)]))
        self.free_idx = [i for i, d in enumerate(self.u_dims) if d.free]
        self.free_dims = [self.u_dims[i] for i in self.free_idx]

    # -- realizations ---------------------------------------------------------

    def realization_from_values(self, values: np.ndarray) -> DiuRealization:
        """Full realization from per-dim values (closed-hub PV pinned low)."""
        inst = self.instance
        T = inst.periods
        p_load = {n.id: np.zeros(T) for n in inst.nodes}
        q_load = {n.id: np.zeros(T) for n in inst.nodes}
        p_pv = {h.id: np.array([lo for lo, _ in inst.pv_box_for(h.id)], dtype=float)
                for h in inst.hubs}
        for dim, val in zip(self.u_dims, values):
            if dim.kind == "p_load":
                p_load[dim.ident][dim.t] = val
            elif dim.kind == "q_load":
                q_load[dim.ident][dim.t] = val
            else:
                p_pv[dim.ident][dim.t] = val
        return DiuRealization(p_load, q_load, p_pv)

    def values_from_realization(self, real: DiuRealization) -> np.ndarray:
        vals = np.empty(len(self.u_dims))
        for i, dim in enumerate(self.u_dims):
            source = {"p_load": real.p_load, "q_load": real.q_load, "pv": real.p_pv}[dim.kind]
            vals[i] = source[dim.ident][dim.t]
        return vals

    def base_values(self) -> np.ndarray:
        return np.array([d.lo for d in self.u_dims])

    def program_at(self, values: np.ndarray) -> mp.Program:
        rhs = self._base_rhs.copy()
        for dim, val in zip(self.u_dims, values):
            for row, coeff in dim.entries:
                rhs[row] += coeff * val
        return self.program.with_rhs({r: rhs[r] for r in range(len(rhs))})


def _capacity_angles(extra: list[float] | None) -> list[float]:
    base = [2.0 * np.pi * m / CAPACITY_SEGMENTS for m in range(CAPACITY_SEGMENTS)]
    return sorted(set(round(a % (2 * np.pi), 9) for a in base + (extra or [])))


# ---------------------------------------------------------------------------
# exact dispatch


def dispatch_min_loss(plan, hub_load, u: DiuRealization, instance: InstanceSpec,
                      model: DispatchModel | None = None,
                      capacity_cuts: dict | None = None) -> DistFlowState:
    """Minimum-loss dispatch at one DIU realization.

    The capacity disk starts as a tangent polygon and is refined with
    further tangents until the returned flows respect the disk to 1e-7.
    """
    if model is not None:
        cuts = {k: list(v) for k, v in model.capacity_cuts.items()}
    else:
        cuts = {k: list(v) for k, v in (capacity_cuts or {}).items()}
        model = DispatchModel(plan, hub_load, instance, cuts)
    for _ in range(12):
        state, _ = _solve_model(model, u)
        violated = _capacity_violations(state, model)
        if not violated:
            return _polish_ess_overlap(model, u, state)
        for key, theta in violated:
            cuts.setdefault(key, []).append(theta)
        model = DispatchModel(plan, hub_load, instance, cuts)
    raise mp.SolveFailure("capacity refinement did not converge")


def _polish_ess_overlap(model: DispatchModel, u: DiuRealization, state: DistFlowState,
                        tol: float = 1e-8) -> DistFlowState:
    """Remove loss-indifferent charge/discharge overlap from the solution.

    The storage complementarity is dropped by the exact relaxation, so the
    solver may return overlapping schedules on the optimal face.  Pinning
    the smaller side of each overlap to zero and re-solving keeps the loss
    unchanged when the relaxation really is exact; if the loss would rise,
    the original state is kept so the audit reports the overlap honestly.
    """
    if not model.ess_hubs:
        return state
    values = model.values_from_realization(u)
    current = state
    for _ in range(3):
        pins = {}
        for k in model.ess_hubs:
            for t in range(model.instance.periods):
                ch, dis = current.p_ch[k][t], current.p_dis[k][t]
                if ch * dis > tol:
                    ref = model.vch[k, t] if ch <= dis else model.vdis[k, t]
                    pins[ref.index] = 0.0
        if not pins:
            return current
        prog = model.program_at(values).with_bounds(ub_updates=pins)
        out = mp.solve_with_gap(prog)
        if out.status != mp.OPTIMAL:
            return current
        candidate = _unpack_state(model, out)
        if candidate.loss_cost > current.loss_cost * (1 + 1e-9) + 1e-12:
            return current
        current = candidate
    return current


def _solve_model(model: DispatchModel, u: DiuRealization):
    values = model.values_from_realization(u)
    prog = model.program_at(values)
    out = mp.solve_with_gap(prog)
    if out.status != mp.OPTIMAL:
        raise _dispatch_failure(model, prog)
    return _unpack_state(model, out), out


def _dispatch_failure(model: DispatchModel, prog: mp.Program) -> Exception:
    families = _diagnose_infeasible(model, prog)
    if families:
        return DispatchInfeasibleError(
            f"dispatch infeasible; binding constraint families: {families}")
    return mp.SolveFailure(
        "dispatch QP did not reach optimality although an elastic feasibility "
        "check passed (numerical failure)")


def _unpack_state(model: DispatchModel, out: mp.SolveOutcome) -> DistFlowState:
    inst = model.instance
    T = inst.periods
    phys = lambda ref: out.value(ref) + model.var_offset[ref]
    p_flow = {k: np.array([phys(model.vp[k, t]) for t in range(T)]) for k in model.built}
    q_flow = {k: np.array([phys(model.vq[k, t]) for t in range(T)]) for k in model.built}
    v_sq = {n.id: np.array([phys(model.vv[n.id, t]) for t in range(T)]) for n in inst.nodes}
    p_sub = np.array([phys(model.vpsub[t]) for t in range(T)])
    q_sub = np.array([phys(model.vqsub[t]) for t in range(T)])
    e_ess = {k: np.array([phys(model.ve[k, t]) for t in range(T + 1)]) for k in model.ess_hubs}
    p_ch = {k: np.array([phys(model.vch[k, t]) for t in range(T)]) for k in model.ess_hubs}
    p_dis = {k: np.array([phys(model.vdis[k, t]) for t in range(T)]) for k in model.ess_hubs}
    lines = {l.key: l for l in model.lines}
    loss = 0.0
    for key, line in lines.items():
        for t in range(T):
            loss += 365.0 * inst.tou_prices[t] * line.r * (p_flow[key][t] ** 2 + q_flow[key][t] ** 2)
    return DistFlowState(p_flow, q_flow, v_sq, p_sub, q_sub, e_ess, p_ch, p_dis, loss)


def _capacity_violations(state: DistFlowState, model: DispatchModel, rtol: float = 1e-7):
    out = []
    for line in model.lines:
        cap2 = line.capacity_kw ** 2
        for t in range(model.instance.periods):
            p, q = state.p_flow[line.key][t], state.q_flow[line.key][t]
            if p * p + q * q > cap2 * (1.0 + rtol):
                out.append((line.key, float(np.arctan2(q, p)) % (2 * np.pi)))
    return out


def _diagnose_infeasible(model: DispatchModel, prog: mp.Program) -> list[str]:
    """Phase-1 elastic LP naming the constraint families that cannot hold."""
    from scipy.optimize import linprog

    A, lo, hi = prog.constraint_matrix()
    A = A.toarray()
    n, m = prog.n_vars, prog.n_rows
    # x, plus one elastic slack per row side
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for r in range(m):
        row = np.zeros(n + 2 * m)
        row[:n] = A[r]
        row[n + 2 * r] = -1.0
        row[n + 2 * r + 1] = 1.0
        if np.isfinite(hi[r]) and np.isfinite(lo[r]) and hi[r] == lo[r]:
            A_eq.append(row)
            b_eq.append(hi[r])
        elif np.isfinite(hi[r]):
            A_ub.append(row)
            b_ub.append(hi[r])
        else:
            A_ub.append(-row)
            b_ub.append(-lo[r])
    bounds = [(prog.lb[j], prog.ub[j]) for j in range(n)] + [(0, None)] * (2 * m)
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=np.array(A_eq) if A_eq else None, b_eq=np.array(b_eq) if b_eq else None,
                  bounds=bounds, method="highs")
    if res.x is None or res.fun is None or res.fun < 1e-7:
        return []
    slacks = res.x[n:].reshape(m, 2).sum(axis=1)
    return sorted({model.row_family.get(r, "other") for r in range(m) if slacks[r] > 1e-7})


# ---------------------------------------------------------------------------
# worst case over the DIU box


def worst_case_diu(plan, hub_load, instance: InstanceSpec, method: str = "vertex-enum",
                   model: DispatchModel | None = None, max_vertices: int = 4096,
                   allow_refinement: bool = True, pwl_segments: int = PWL_SEGMENTS):
    """Worst-case realization of the DIU box for the given plan and load.

    Returns ``(u_star, D, cert)`` where ``D`` is the inner minimum at the
    maximiser and ``cert`` is a KKT certificate (kkt-milp route only).
    """
    model = model or DispatchModel(plan, hub_load, instance)
    if method == "vertex-enum":
        values, D = _worst_case_vertices(model, max_vertices, allow_refinement)
        u_star = model.realization_from_values(values)
        state = dispatch_min_loss(plan, hub_load, u_star, instance)  # disk-exact value
        return u_star, state.loss_cost, None
    if method == "kkt-milp":
        return _worst_case_kkt(model, plan, hub_load, instance, pwl_segments)
    raise ValueError(f"unknown worst-case method {method!r}")


def _inner_value(model: DispatchModel, values: np.ndarray) -> float:
    prog = model.program_at(values)
    out = mp.solve_with_gap(prog)
    if out.status != mp.OPTIMAL:
        raise _dispatch_failure(model, prog)
    # value from the flows directly, so tie-break terms never leak into bounds
    return _unpack_state(model, out).loss_cost


def _worst_case_vertices(model: DispatchModel, max_vertices: int, allow_refinement: bool):
    free = model.free_dims
    values = model.base_values()
    if not free:
        return values, _inner_value(model, values)
    if 2 ** len(free) > max_vertices:
        if not allow_refinement:
            raise BudgetExceededError(
                f"2^{len(free)} vertices exceed the budget {max_vertices}; "
                "group dimensions or enable coordinate refinement")
        return _worst_case_coordinate(model, values)
    best_vals, best = None, -np.inf
    for corner in itertools.product((0, 1), repeat=len(free)):
        for pos, side in zip(model.free_idx, corner):
            dim = model.u_dims[pos]
            values[pos] = dim.hi if side else dim.lo
        val = _inner_value(model, values)
        if val > best + 1e-12:
            best, best_vals = val, values.copy()
    return best_vals, best


def _worst_case_coordinate(model: DispatchModel, values: np.ndarray):
    """Coordinate-wise best-response over box endpoints until a fixpoint."""
    free = list(zip(model.free_idx, model.free_dims))
    for pos, dim in free:  # heuristic start: loads high, PV low
        values[pos] = dim.lo if dim.kind == "pv" else dim.hi
    best = _inner_value(model, values)
    for _ in range(60):
        improved = False
        for pos, dim in free:
            other = dim.hi if values[pos] == dim.lo else dim.lo
            trial = values.copy()
            trial[pos] = other
            val = _inner_value(model, trial)
            if val > best + 1e-10 * max(1.0, abs(best)):
                best, values, improved = val, trial, True
        if not improved:  # certifying sweep found no better neighbouring vertex
            return values, best
    log.warning("coordinate refinement hit its sweep limit")
    return values, best


# ---------------------------------------------------------------------------
# KKT reformulation


def extract_kkt_system(model: DispatchModel) -> KktSystem:
    """Canonical (Q, d, A, b, U) blocks of the inner QP for the free dims."""
    prog = model.program
    n = prog.n_vars
    Q = 2.0 * prog.quad_vector()
    d = prog.c_vector()
    in_rows, eq_rows = [], []
    for r, row in enumerate(prog.rows):
        dense = np.zeros(n)
        dense[row.indices] = row.coeffs
        if row.sense == "<=":
            in_rows.append((dense, row.rhs, r))
        elif row.sense == "==":
            eq_rows.append((dense, row.rhs, r))
        else:
            raise AssertionError("dispatch models only emit <= and == rows")
    # finite upper bounds become explicit inequality rows (x >= 0 stays a bound)
    ub_rows = []
    for j in range(n):
        if np.isfinite(prog.ub[j]):
            e = np.zeros(n)
            e[j] = 1.0
            ub_rows.append((e, prog.ub[j], None))
    all_in = in_rows + ub_rows
    A_in = np.array([r[0] for r in all_in]) if all_in else np.zeros((0, n))
    b_in0 = np.array([r[1] for r in all_in])
    A_eq = np.array([r[0] for r in eq_rows]) if eq_rows else np.zeros((0, n))
    b_eq0 = np.array([r[1] for r in eq_rows])
    row_to_in = {r[2]: i for i, r in enumerate(in_rows)}
    row_to_eq = {r[2]: i for i, r in enumerate(eq_rows)}
    free = model.free_dims
    col_of = {pos: col for col, pos in enumerate(model.free_idx)}
    U_in = np.zeros((len(all_in), len(free)))
    U_eq = np.zeros((len(eq_rows), len(free)))
    base_shift_in = np.zeros(len(all_in))
    base_shift_eq = np.zeros(len(eq_rows))
    for pos, dim in enumerate(model.u_dims):
        for row, coeff in dim.entries:
            if dim.free:
                col = col_of[pos]
                if row in row_to_in:
                    U_in[row_to_in[row], col] += coeff
                else:
                    U_eq[row_to_eq[row], col] += coeff
            else:  # pinned dims fold into the base right-hand side
                if row in row_to_in:
                    base_shift_in[row_to_in[row]] += coeff * dim.lo
                else:
                    base_shift_eq[row_to_eq[row]] += coeff * dim.lo
    return KktSystem(Q, d, model._obj_const, A_in, b_in0 + base_shift_in, U_in,
                     A_eq, b_eq0 + base_shift_eq, U_eq,
                     np.array([dim.lo for dim in free]), np.array([dim.hi for dim in free]))


def _worst_case_kkt(model: DispatchModel, plan, hub_load, instance, segments: int):
    sys = extract_kkt_system(model)
    best = None
    for round_idx in range(5):
        u_vals, pwl_bound = _solve_kkt_milp(model, sys, segments)
        full = model.base_values()
        for pos, val in zip(model.free_idx, u_vals):
            full[pos] = val
        u_star = model.realization_from_values(full)
        state = dispatch_min_loss(plan, hub_load, u_star, instance, capacity_cuts=model.capacity_cuts)
        D = state.loss_cost
        if best is None or D > best[1]:
            best = (u_star, D)
        # the secant surrogate overestimates, so pwl_bound >= true max: certify
        if pwl_bound - best[1] <= KKT_AGREE_RTOL * max(best[1], 1e-9):
            break
        segments *= 2
        log.info("kkt-milp refinement: bound %.6g vs value %.6g, retry with %d segments",
                 pwl_bound, best[1], segments)
    u_star, D = best
    cert = certify_kkt(model, sys, u_star)
    return u_star, D, cert


def _solve_kkt_milp(model: DispatchModel, sys: KktSystem, segments: int):
    """Single-level maximisation: KKT rows plus big-M complementarity.

    The convex-quadratic objective is replaced by per-variable secant
    interpolants (binaries select the active segment), which overestimate
    the true objective; the caller certifies against an exact re-solve.
    """
    n = len(sys.d)
    m_in = len(sys.b_in0)
    m_eq = len(sys.b_eq0)
    nu = len(sys.u_lo)
    prog = model.program
    builder = mp.new_program("max")
    x = [builder.add_continuous(f"x{j}", 0.0, prog.ub[j] if np.isfinite(prog.ub[j]) else 1e9)
         for j in range(n)]
    u = [builder.add_continuous(f"u{dd}", sys.u_lo[dd], sys.u_hi[dd]) for dd in range(nu)]
    pi = [builder.add_continuous(f"pi{r}", 0.0, DUAL_BOUND) for r in range(m_in)]
    lam = [builder.add_continuous(f"lam{j}", 0.0, DUAL_BOUND) for j in range(n)]
    yeq = [builder.add_continuous(f"y{e}", -DUAL_BOUND, DUAL_BOUND) for e in range(m_eq)]
    o = [builder.add_binary(f"o{r}") for r in range(m_in)]
    w = [builder.add_binary(f"w{j}") for j in range(n)]

    def row_terms(r):
        terms = [(x[j], sys.A_in[r, j]) for j in np.flatnonzero(sys.A_in[r])]
        terms += [(u[dd], -sys.U_in[r, dd]) for dd in np.flatnonzero(sys.U_in[r])]
        return terms

    # primal feasibility
    for r in range(m_in):
        builder.add_constraint(row_terms(r), "<=", sys.b_in0[r], name=f"pf_in_{r}")
    for e in range(m_eq):
        terms = [(x[j], sys.A_eq[e, j]) for j in np.flatnonzero(sys.A_eq[e])]
        terms += [(u[dd], -sys.U_eq[e, dd]) for dd in np.flatnonzero(sys.U_eq[e])]
        builder.add_constraint(terms, "==", sys.b_eq0[e], name=f"pf_eq_{e}")
    # stationarity: Q x + d + A_in' pi + A_eq' y - lam = 0
    for j in range(n):
        terms = [(lam[j], -1.0)]
        if sys.Q[j]:
            terms.append((x[j], sys.Q[j]))
        terms += [(pi[r], sys.A_in[r, j]) for r in np.flatnonzero(sys.A_in[:, j])]
        terms += [(yeq[e], sys.A_eq[e, j]) for e in np.flatnonzero(sys.A_eq[:, j])]
        builder.add_constraint(terms, "==", -sys.d[j], name=f"stat_{j}")
    # complementarity via big-M: slack_r <= M (1 - o_r), pi_r <= M o_r
    for r in range(m_in):
        lo, hi = builder.interval_bound(row_terms(r))
        slack_m = mp.BIG_M_SAFETY * max(sys.b_in0[r] - lo, 1e-6)
        builder.add_constraint(row_terms(r) + [(o[r], -slack_m)], ">=", sys.b_in0[r] - slack_m,
                               name=f"comp_slack_{r}")
        builder.add_constraint([(pi[r], 1.0), (o[r], -DUAL_BOUND)], "<=", 0.0, name=f"comp_pi_{r}")
    # x_j <= M w_j, lam_j <= M (1 - w_j)
    for j in range(n):
        xm = prog.ub[j] if np.isfinite(prog.ub[j]) else 1e9
        builder.add_constraint([(x[j], 1.0), (w[j], -xm)], "<=", 0.0, name=f"comp_x_{j}")
        builder.add_constraint([(lam[j], 1.0), (w[j], DUAL_BOUND)], "<=", DUAL_BOUND,
                               name=f"comp_lam_{j}")

    # objective: secant interpolation of each quadratic term + the linear part
    obj = [(x[j], sys.d[j]) for j in range(n) if sys.d[j]]
    for j in np.flatnonzero(sys.Q):
        ub = prog.ub[j]
        knots = np.linspace(0.0, ub, segments + 1)
        fvals = 0.5 * sys.Q[j] * knots ** 2
        thetas = [builder.add_continuous(f"th_{j}_{i}", 0.0, 1.0) for i in range(segments + 1)]
        segs = [builder.add_binary(f"sg_{j}_{i}") for i in range(segments)]
        builder.add_constraint([(th, 1.0) for th in thetas], "==", 1.0)
        builder.add_constraint([(sg, 1.0) for sg in segs], "==", 1.0)
        builder.add_constraint([(x[j], 1.0)] + [(thetas[i], -knots[i]) for i in range(segments + 1)],
                               "==", 0.0)
        for i in range(segments + 1):
            adj = [(segs[i2], -1.0) for i2 in range(max(0, i - 1), min(segments, i + 1))]
            builder.add_constraint([(thetas[i], 1.0)] + adj, "<=", 0.0)
        for i in range(segments + 1):
            if fvals[i]:
                obj.append((thetas[i], fvals[i]))
    builder.set_objective(obj, sys.c0)

    out = mp.solve_with_gap(builder.build(), gap=0.0)
    if out.status != mp.OPTIMAL:
        raise mp.SolveFailure(f"KKT MILP ended with status {out.status}")
    _audit_big_m(out, pi, lam, yeq)
    return np.array([out.value(uv) for uv in u]), out.incumbent_value


def _audit_big_m(out: mp.SolveOutcome, pi, lam, yeq) -> None:
    worst = 0.0
    for ref in list(pi) + list(lam) + list(yeq):
        worst = max(worst, abs(out.value(ref)))
    if worst >= DUAL_BOUND * (1.0 - 1e-6):
        raise BigMError(
            f"a multiplier reached the big-M bound {DUAL_BOUND}; increase DUAL_BOUND")


def certify_kkt(model: DispatchModel, sys: KktSystem, u_star: DiuRealization) -> KktCertificate:
    """Exact-QP certificate at a realization (multipliers from the solver)."""
    values = model.values_from_realization(u_star)
    prog = model.program_at(values)
    out = mp.solve_with_gap(prog)
    if out.status != mp.OPTIMAL or out.duals is None:
        raise DispatchInfeasibleError("cannot certify: inner QP did not solve")
    n = prog.n_vars
    x = out.assignment
    # inequality multipliers: program <= rows first, then upper-bound rows
    pi_rows = [out.duals["row"][r] for r, row in enumerate(prog.rows) if row.sense == "<="]
    pi_ub = [out.duals["upper"][j] for j in range(n) if np.isfinite(prog.ub[j])]
    pi = np.array(pi_rows + pi_ub)
    y_eq = np.array([out.duals["row"][r] for r, row in enumerate(prog.rows) if row.sense == "=="])
    lam = out.duals["lower"].copy()
    u_free = np.array([values[pos] for pos in model.free_idx])
    slack = sys.b_in(u_free) - sys.A_in @ x
    o = (slack <= 1e-7).astype(int)
    w = (x > 1e-7).astype(int)
    cert = KktCertificate(x, pi, y_eq, lam, o, w, u_free)
    cert.residuals = check_kkt(cert, sys)
    return cert


def check_kkt(cert: KktCertificate, sys: KktSystem) -> dict[str, float]:
    """Residual maxima of the four KKT families, independent of any solver."""
    x, pi, lam, y = cert.x, cert.pi, cert.lam, cert.y_eq
    b_in = sys.b_in(cert.u)
    b_eq = sys.b_eq(cert.u)
    stationarity = sys.Q * x + sys.d + sys.A_in.T @ pi - lam
    if len(y):
        stationarity = stationarity + sys.A_eq.T @ y
    slack = b_in - sys.A_in @ x
    primal = 0.0
    if len(slack):
        primal = max(primal, float(np.max(-slack)))
    if len(b_eq):
        primal = max(primal, float(np.max(np.abs(sys.A_eq @ x - b_eq))))
    primal = max(primal, float(np.max(-x)) if len(x) else 0.0)
    dual = 0.0
    if len(pi):
        dual = max(dual, float(np.max(-pi)))
    if len(lam):
        dual = max(dual, float(np.max(-lam)))
    comp = 0.0
    if len(pi):
        comp = max(comp, float(np.max(np.abs(pi * slack))))
    if len(lam):
        comp = max(comp, float(np.max(np.abs(lam * x))))
    return {
        "stationarity": float(np.max(np.abs(stationarity))) if len(x) else 0.0,
        "primal": max(primal, 0.0),
        "dual": max(dual, 0.0),
        "complementarity": comp,
    }


def kkt_residuals_pass(residuals: dict[str, float], tol: float = 1e-5) -> bool:
    return all(v <= tol for v in residuals.values())


# ---------------------------------------------------------------------------
# audits and invariant rechecks


def ess_relaxation_audit(state: DistFlowState, tol: float = 1e-8) -> list[tuple[int, int]]:
    """(hub, period) pairs where charging and discharging overlap."""
    flagged = []
    for k in state.p_ch:
        prod = state.p_ch[k] * state.p_dis[k]
        for t in np.flatnonzero(prod > tol):
            flagged.append((k, int(t)))
    return flagged


def check_dispatch_state(state: DistFlowState, plan, hub_load, u: DiuRealization,
                         instance: InstanceSpec, tol: float = 1e-6) -> list[str]:
    """Arithmetic re-check of the dispatch constraint families."""
    bad = []
    inst = instance
    T = inst.periods
    lines = {l.key: l for l in inst.candidate_lines}
    built = sorted(set(plan.built_lines))
    open_hubs = sorted(set(plan.open_hubs))
    hubs_at: dict[int, list[int]] = {}
    for k in open_hubs:
        hubs_at.setdefault(inst.hub_by_id(k).node, []).append(k)
    scale = 1.0 + max((float(np.max(np.abs(state.p_flow[k]))) for k in built), default=0.0)
    root = inst.root_id
    for node in inst.nodes:
        for t in range(T):
            inflow = 0.0
            qin = 0.0
            for key in built:
                a, b = key
                if node.id == b:
                    inflow += state.p_flow[key][t]
                    qin += state.q_flow[key][t]
                elif node.id == a:
                    inflow -= state.p_flow[key][t]
                    qin -= state.q_flow[key][t]
            if node.id == root:
                inflow += state.p_sub[t]
                qin += state.q_sub[t]
            rhs = u.p_load.get(node.id, np.zeros(T))[t]
            for k in hubs_at.get(node.id, []):
                rhs += hub_load[k][t] - u.p_pv.get(k, np.zeros(T))[t]
                if k in state.p_ch:
                    inflow += state.p_dis[k][t] - state.p_ch[k][t]
            if abs(inflow - rhs) > tol * scale:
                bad.append(f"active balance off at node {node.id}, t={t}")
            if abs(qin - u.q_load.get(node.id, np.zeros(T))[t]) > tol * scale:
                bad.append(f"reactive balance off at node {node.id}, t={t}")
    v_lo, v_hi = inst.voltage["v_min"] ** 2, inst.voltage["v_max"] ** 2
    for node in inst.nodes:
        if np.any(state.v_sq[node.id] < v_lo - tol) or np.any(state.v_sq[node.id] > v_hi + tol):
            bad.append(f"voltage bounds violated at node {node.id}")
    for key in built:
        line = lines[key]
        a, b = key
        for t in range(T):
            drop = state.v_sq[a][t] - state.v_sq[b][t] - 2.0 * (
                line.r * state.p_flow[key][t] + line.x * state.q_flow[key][t])
            if abs(drop) > tol * scale:
                bad.append(f"voltage drop inconsistent on {key}, t={t}")
            s2 = state.p_flow[key][t] ** 2 + state.q_flow[key][t] ** 2
            if s2 > line.capacity_kw ** 2 * (1.0 + 1e-6):
                bad.append(f"capacity exceeded on {key}, t={t}")
    sub = inst.substation
    if np.any(state.p_sub < sub["p_min"] - tol) or np.any(state.p_sub > sub["p_max"] + tol):
        bad.append("substation active power outside bounds")
    if np.any(state.q_sub < sub["q_min"] - tol) or np.any(state.q_sub > sub["q_max"] + tol):
        bad.append("substation reactive power outside bounds")
    if inst.ess is not None:
        e = inst.ess
        for k in state.e_ess:
            traj = state.e_ess[k]
            if np.any(traj < e.e_min - tol) or np.any(traj > e.e_max + tol):
                bad.append(f"ess energy outside bounds at hub {k}")
            if np.any(state.p_ch[k] < -tol) or np.any(state.p_ch[k] > e.p_ch_max + tol):
                bad.append(f"ess charge power outside bounds at hub {k}")
            if np.any(state.p_dis[k] < -tol) or np.any(state.p_dis[k] > e.p_dis_max + tol):
                bad.append(f"ess discharge power outside bounds at hub {k}")
            # telescoped dynamics: end-of-day equals start plus net throughput
            net = (e.eta_ch * state.p_ch[k] - e.eta_dis * state.p_dis[k]).sum()
            if abs(traj[-1] - traj[0] - net) > tol * (1.0 + abs(net)):
                bad.append(f"ess dynamics do not telescope at hub {k}")
            if abs(traj[-1] - traj[0]) > tol * (1.0 + e.e_max):
                bad.append(f"ess not cyclic at hub {k}")
    return bad
