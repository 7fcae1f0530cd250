"""Solver-agnostic mathematical programs with gap-controlled solving.

Programs hold binary and continuous variables, linear rows, and an
objective that is linear plus an optional diagonal convex-quadratic part.
Solving returns both a feasible (incumbent) bound and a relaxation bound,
so callers can reason about optimality gaps honestly.

Two interchangeable mixed-binary backends are provided:

* ``highs`` (default) -- scipy's HiGHS interface, used for speed;
* ``bnb`` -- an embedded best-first branch-and-bound over the binary
  variables with LP relaxations, kept so the package has no hard
  dependency on any particular MILP engine's behaviour.

Quadratic objectives are supported only for fully continuous programs
(they are solved as convex QPs through cvxopt); mixed-binary programs
must be linear.  The backend is picked by the ``COPLAN_SOLVER``
environment variable or per call.
"""

from __future__ import annotations

import heapq
import math
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint as ScipyLinearConstraint, linprog, milp

FEASIBILITY_TOL = 1e-6
INTEGRALITY_TOL = 1e-6
BIG_M_SAFETY = 1.1

#: Statuses a solve can report.
OPTIMAL = "optimal-within-gap"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT = "limit"


class ProgramError(ValueError):
    """Raised for malformed programs or unsupported solve requests."""


class SolveFailure(RuntimeError):
    """Raised when a backend cannot produce a usable answer."""


@dataclass(frozen=True)
class VarRef:
    """Handle for one decision variable inside a single program."""

    index: int
    kind: str  # binary | continuous-nonnegative | continuous-free
    name: str

    def __repr__(self):
        return f"VarRef({self.index}, {self.name!r})"


@dataclass
class Row:
    """One linear constraint: ``terms . x  sense  rhs``."""

    indices: np.ndarray
    coeffs: np.ndarray
    sense: str  # "<=", ">=", "=="
    rhs: float
    name: str


@dataclass
class SolveOutcome:
    """Result of a gap-controlled solve.

    ``incumbent_value`` is the objective of the best feasible point found;
    ``relaxation_value`` bounds the true optimum from the relaxed side
    (below for minimisation, above for maximisation).
    """

    status: str
    incumbent_value: float
    relaxation_value: float
    assignment: np.ndarray | None
    gap: float
    duals: dict | None = None

    def value(self, var: VarRef) -> float:
        if self.assignment is None:
            raise SolveFailure("no assignment available (status %s)" % self.status)
        return float(self.assignment[var.index])


class ProgramBuilder:
    """Single-writer builder; ``build()`` freezes it into a Program."""

    def __init__(self, sense: str = "min"):
        if sense not in ("min", "max"):
            raise ProgramError(f"unknown sense {sense!r}")
        self.sense = sense
        self._names: list[str] = []
        self._name_set: set[str] = set()
        self._kinds: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._rows: list[Row] = []
        self._obj: dict[int, float] = {}
        self._quad: dict[int, float] = {}
        self._obj_const = 0.0
        self._built = False

    # -- variables ---------------------------------------------------------

    def _add_var(self, name, kind, lb, ub) -> VarRef:
        if self._built:
            raise ProgramError("builder already frozen")
        if name in self._name_set:
            raise ProgramError(f"duplicate variable name {name!r}")
        idx = len(self._names)
        self._names.append(name)
        self._name_set.add(name)
        self._kinds.append(kind)
        self._lb.append(lb)
        self._ub.append(ub)
        return VarRef(idx, kind, name)

    def add_binary(self, name: str) -> VarRef:
        return self._add_var(name, "binary", 0.0, 1.0)

    def add_continuous(self, name: str, lb: float = 0.0, ub: float = math.inf) -> VarRef:
        if not lb <= ub:
            raise ProgramError(f"variable {name!r}: lb {lb} > ub {ub}")
        kind = "continuous-nonnegative" if lb >= 0.0 else "continuous-free"
        return self._add_var(name, kind, float(lb), float(ub))

    # -- objective ---------------------------------------------------------

    def set_objective(self, terms, constant: float = 0.0) -> None:
        """Linear objective terms as an iterable of (VarRef, coeff)."""
        self._obj = {}
        for var, coef in terms:
            self._obj[var.index] = self._obj.get(var.index, 0.0) + float(coef)
        self._obj_const = float(constant)

    def add_objective_term(self, var: VarRef, coef: float) -> None:
        self._obj[var.index] = self._obj.get(var.index, 0.0) + float(coef)

    def add_quadratic_term(self, var: VarRef, weight: float) -> None:
        """Add ``weight * var**2`` to the objective (weight >= 0)."""
        if weight < 0:
            raise ProgramError("quadratic weights must be nonnegative (convexity)")
        self._quad[var.index] = self._quad.get(var.index, 0.0) + float(weight)

    # -- constraints -------------------------------------------------------

    def add_constraint(self, terms, sense: str, rhs: float, name: str = "") -> int:
        """Add a row; duplicate variables are merged.  Returns the row index."""
        if self._built:
            raise ProgramError("builder already frozen")
        if sense not in ("<=", ">=", "=="):
            raise ProgramError(f"unknown sense {sense!r}")
        merged: dict[int, float] = {}
        for var, coef in terms:
            c = float(coef)
            if not math.isfinite(c):
                raise ProgramError(f"non-finite coefficient on {var.name}")
            merged[var.index] = merged.get(var.index, 0.0) + c
        if not math.isfinite(rhs):
            raise ProgramError("non-finite rhs")
        idx = np.fromiter(merged.keys(), dtype=np.int64, count=len(merged))
        coe = np.fromiter(merged.values(), dtype=np.float64, count=len(merged))
        order = np.argsort(idx)
        row = Row(idx[order], coe[order], sense, float(rhs), name or f"r{len(self._rows)}")
        self._rows.append(row)
        return len(self._rows) - 1

    def add_bigm_indicator(self, indicator: VarRef, terms, M: float, mode: str = "upper") -> list[int]:
        """Link ``expr`` to a binary via big-M rows.

        mode "upper" adds ``expr <= M*indicator``; mode "lower" adds
        ``expr >= -M*(1-indicator)``; mode "both" adds the pair.
        """
        if indicator.kind != "binary":
            raise ProgramError("indicator must be binary")
        if not M > 0:
            raise ProgramError("big-M must be positive")
        rows = []
        if mode in ("upper", "both"):
            rows.append(self.add_constraint(list(terms) + [(indicator, -M)], "<=", 0.0))
        if mode in ("lower", "both"):
            # expr + M*ind >= ... rearranged from expr >= -M*(1-ind)
            rows.append(self.add_constraint(list(terms) + [(indicator, M)], ">=", -M + 0.0))
        if not rows:
            raise ProgramError(f"unknown big-M mode {mode!r}")
        return rows

    def interval_bound(self, terms) -> tuple[float, float]:
        """Interval-arithmetic range of a linear expression over variable bounds."""
        lo = hi = 0.0
        for var, coef in terms:
            c = float(coef)
            a, b = c * self._lb[var.index], c * self._ub[var.index]
            lo += min(a, b)
            hi += max(a, b)
        return lo, hi

    def suggest_big_m(self, terms) -> float:
        """Valid big-M for ``|expr|``: interval bound times a safety factor."""
        lo, hi = self.interval_bound(terms)
        mag = max(abs(lo), abs(hi))
        if not math.isfinite(mag):
            raise ProgramError("cannot bound expression: a variable is unbounded")
        return BIG_M_SAFETY * max(mag, 1e-9)

    def build(self) -> "Program":
        self._built = True
        return Program(
            sense=self.sense,
            names=list(self._names),
            kinds=list(self._kinds),
            lb=np.array(self._lb, dtype=float),
            ub=np.array(self._ub, dtype=float),
            rows=list(self._rows),
            obj=dict(self._obj),
            quad=dict(self._quad),
            obj_const=self._obj_const,
        )


@dataclass
class Program:
    """Frozen program.  Safe to share across threads and solves."""

    sense: str
    names: list[str]
    kinds: list[str]
    lb: np.ndarray
    ub: np.ndarray
    rows: list[Row]
    obj: dict[int, float]
    quad: dict[int, float]
    obj_const: float
    _cache: dict = field(default_factory=dict, repr=False)

    # -- views -------------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def binary_mask(self) -> np.ndarray:
        if "binmask" not in self._cache:
            self._cache["binmask"] = np.array([k == "binary" for k in self.kinds])
        return self._cache["binmask"]

    @property
    def is_mixed_binary(self) -> bool:
        return bool(self.binary_mask.any())

    def c_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, v in self.obj.items():
            c[j] = v
        return c

    def quad_vector(self) -> np.ndarray:
        q = np.zeros(self.n_vars)
        for j, v in self.quad.items():
            q[j] = v
        return q

    def constraint_matrix(self):
        """(A, lo, hi): one sparse matrix with per-row interval bounds."""
        if "A" not in self._cache:
            data, ri, ci = [], [], []
            lo = np.empty(self.n_rows)
            hi = np.empty(self.n_rows)
            for r, row in enumerate(self.rows):
                ri.extend([r] * len(row.indices))
                ci.extend(row.indices.tolist())
                data.extend(row.coeffs.tolist())
                if row.sense == "<=":
                    lo[r], hi[r] = -np.inf, row.rhs
                elif row.sense == ">=":
                    lo[r], hi[r] = row.rhs, np.inf
                else:
                    lo[r] = hi[r] = row.rhs
            A = sp.csr_matrix((data, (ri, ci)), shape=(self.n_rows, self.n_vars))
            self._cache["A"] = (A, lo, hi)
        return self._cache["A"]

    def with_rhs(self, updates: dict[int, float]) -> "Program":
        """Copy sharing matrices/cache, with some row right-hand sides replaced."""
        rows = list(self.rows)
        for r, rhs in updates.items():
            old = rows[r]
            rows[r] = Row(old.indices, old.coeffs, old.sense, float(rhs), old.name)
        prog = Program(self.sense, self.names, self.kinds, self.lb, self.ub, rows,
                       self.obj, self.quad, self.obj_const, _cache={})
        prog._cache["shared"] = self._cache.get("shared", self._cache)
        return prog

    def with_bounds(self, lb_updates: dict[int, float] | None = None,
                    ub_updates: dict[int, float] | None = None) -> "Program":
        """Copy with tightened variable bounds; finiteness must not change
        (the solver caches which bound rows exist, not their values)."""
        lb = self.lb.copy()
        ub = self.ub.copy()
        for j, v in (lb_updates or {}).items():
            if math.isfinite(lb[j]) != math.isfinite(v):
                raise ProgramError("with_bounds cannot change bound finiteness")
            lb[j] = v
        for j, v in (ub_updates or {}).items():
            if math.isfinite(ub[j]) != math.isfinite(v):
                raise ProgramError("with_bounds cannot change bound finiteness")
            ub[j] = v
        prog = Program(self.sense, self.names, self.kinds, lb, ub, self.rows,
                       self.obj, self.quad, self.obj_const, _cache={})
        prog._cache["shared"] = self._cache.get("shared", self._cache)
        return prog

    def evaluate_objective(self, x: np.ndarray) -> float:
        val = self.obj_const + sum(c * x[j] for j, c in self.obj.items())
        val += sum(w * x[j] ** 2 for j, w in self.quad.items())
        return float(val)

    def check_feasible(self, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> list[str]:
        """Names of rows/bounds violated beyond ``tol`` (empty when feasible).

        Row violations are measured relative to the row's coefficient scale,
        matching how MILP engines define primal feasibility.
        """
        bad = []
        for j in range(self.n_vars):
            if x[j] < self.lb[j] - tol or x[j] > self.ub[j] + tol:
                bad.append(f"bound:{self.names[j]}")
            if self.kinds[j] == "binary" and min(abs(x[j]), abs(1 - x[j])) > 10 * INTEGRALITY_TOL:
                bad.append(f"integrality:{self.names[j]}")
        for row in self.rows:
            lhs = float(row.coeffs @ x[row.indices])
            scale = 1.0 + float(np.abs(row.coeffs).sum()) + abs(row.rhs)
            if row.sense == "<=" and lhs > row.rhs + tol * scale:
                bad.append(f"row:{row.name}")
            elif row.sense == ">=" and lhs < row.rhs - tol * scale:
                bad.append(f"row:{row.name}")
            elif row.sense == "==" and abs(lhs - row.rhs) > tol * scale:
                bad.append(f"row:{row.name}")
        return bad


def new_program(sense: str = "min") -> ProgramBuilder:
    """Start an empty program with the given optimisation sense."""
    return ProgramBuilder(sense)


# ---------------------------------------------------------------------------
# solving


def _relative_gap(incumbent: float, relaxation: float, sense: str) -> float:
    diff = incumbent - relaxation if sense == "min" else relaxation - incumbent
    return max(diff, 0.0) / max(abs(incumbent), 1e-10)


def solve_with_gap(program: Program, gap: float = 0.0, time_limit: float | None = None,
                   backend: str | None = None) -> SolveOutcome:
    """Solve to within a relative optimality gap.

    For status ``optimal-within-gap`` the returned gap is at most the
    requested one and the assignment satisfies every row within the
    feasibility tolerance.  On an iteration/time limit the best incumbent
    is returned with its honest gap.
    """
    if not 0.0 <= gap <= 1.0:
        raise ProgramError(f"gap must be in [0,1], got {gap}")
    if program.n_vars == 0:
        return SolveOutcome(OPTIMAL, program.obj_const, program.obj_const, np.zeros(0), 0.0)
    if program.quad:
        if program.is_mixed_binary:
            raise ProgramError("quadratic objectives are only supported for continuous programs")
        return _solve_qp(program)
    backend = backend or os.environ.get("COPLAN_SOLVER", "highs")
    if backend == "highs":
        out = _solve_highs(program, gap, time_limit)
    elif backend == "bnb":
        out = _solve_bnb(program, gap, time_limit)
    else:
        raise ProgramError(f"unknown backend {backend!r} (expected 'highs' or 'bnb')")
    if out.status == OPTIMAL and out.assignment is not None:
        bad = program.check_feasible(out.assignment)
        if bad:
            raise SolveFailure(f"backend returned an infeasible point: {bad[:5]}")
    return out


def _split_rows(program: Program):
    """(A_ub, b_ub, A_eq, b_eq) dense views for LP backends."""
    n = program.n_vars
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for row in program.rows:
        dense = np.zeros(n)
        dense[row.indices] = row.coeffs
        if row.sense == "<=":
            ub_rows.append(dense)
            ub_rhs.append(row.rhs)
        elif row.sense == ">=":
            ub_rows.append(-dense)
            ub_rhs.append(-row.rhs)
        else:
            eq_rows.append(dense)
            eq_rhs.append(row.rhs)
    A_ub = np.array(ub_rows) if ub_rows else None
    A_eq = np.array(eq_rows) if eq_rows else None
    return A_ub, (np.array(ub_rhs) if ub_rows else None), A_eq, (np.array(eq_rhs) if eq_rows else None)


def _solve_highs(program: Program, gap: float, time_limit: float | None) -> SolveOutcome:
    sign = 1.0 if program.sense == "min" else -1.0
    c = sign * program.c_vector()
    A, lo, hi = program.constraint_matrix()
    constraints = [ScipyLinearConstraint(A, lo, hi)] if program.n_rows else []
    integrality = program.binary_mask.astype(np.int64)
    options: dict = {"mip_rel_gap": float(gap)}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(c=c, constraints=constraints, integrality=integrality,
               bounds=Bounds(program.lb, program.ub), options=options)
    if res.status == 2:
        return SolveOutcome(INFEASIBLE, math.nan, math.nan, None, math.nan)
    if res.status == 3:
        return SolveOutcome(UNBOUNDED, -math.inf * sign, -math.inf * sign, None, math.nan)
    if res.x is None:
        status = LIMIT if res.status == 1 else INFEASIBLE
        return SolveOutcome(status, math.nan, math.nan, None, math.nan)
    incumbent = program.evaluate_objective(res.x)
    dual = getattr(res, "mip_dual_bound", None)
    if dual is None or not program.is_mixed_binary:
        relaxation = incumbent
    else:
        relaxation = sign * dual + program.obj_const
    realized = _relative_gap(incumbent, relaxation, program.sense)
    status = OPTIMAL if res.status == 0 else LIMIT
    x = np.asarray(res.x, dtype=float)
    if program.is_mixed_binary:
        x = _snap_binaries(program, x)
    return SolveOutcome(status, incumbent, relaxation, x, realized)


def _snap_binaries(program: Program, x: np.ndarray) -> np.ndarray:
    x = x.copy()
    mask = program.binary_mask
    x[mask] = np.round(x[mask])
    return x


# -- embedded branch and bound ----------------------------------------------


def _solve_bnb(program: Program, gap: float, time_limit: float | None) -> SolveOutcome:
    """Best-first branch-and-bound over the binaries, LP relaxations per node."""
    sign = 1.0 if program.sense == "min" else -1.0
    c = sign * program.c_vector()
    A_ub, b_ub, A_eq, b_eq = _split_rows(program)
    bin_idx = np.flatnonzero(program.binary_mask)
    deadline = None if time_limit is None else time.monotonic() + time_limit

    def relax(lb, ub):
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=np.column_stack([lb, ub]), method="highs")
        return res

    root = relax(program.lb, program.ub)
    if root.status == 2:
        return SolveOutcome(INFEASIBLE, math.nan, math.nan, None, math.nan)
    if root.status == 3:
        return SolveOutcome(UNBOUNDED, -math.inf * sign, -math.inf * sign, None, math.nan)

    best_x = None
    best_val = math.inf  # incumbent objective, minimisation space
    counter = 0
    heap = [(root.fun, counter, program.lb.copy(), program.ub.copy(), root.x)]
    hit_limit = False
    open_bound = root.fun  # valid lower bound from unexplored nodes

    while heap:
        bound, _, lb, ub, x = heapq.heappop(heap)
        open_bound = bound  # best-first: popped bound is the global one
        if best_x is not None and bound >= best_val - gap * max(abs(best_val), 1e-10) - 1e-12:
            break
        if deadline is not None and time.monotonic() > deadline:
            hit_limit = True
            break
        frac = np.abs(x[bin_idx] - np.round(x[bin_idx])) if len(bin_idx) else np.array([])
        if len(bin_idx) == 0 or frac.max() <= INTEGRALITY_TOL:
            if bound < best_val:
                best_val = bound
                best_x = x
            if not heap:
                open_bound = best_val
            continue
        j = bin_idx[int(np.argmax(frac))]
        for fixed in (0.0, 1.0):
            lb2, ub2 = lb.copy(), ub.copy()
            lb2[j] = ub2[j] = fixed
            res = relax(lb2, ub2)
            if res.status in (2, 3) or res.x is None:
                continue
            frac2 = np.abs(res.x[bin_idx] - np.round(res.x[bin_idx]))
            if frac2.max() <= INTEGRALITY_TOL:
                if res.fun < best_val:
                    best_val = res.fun
                    best_x = res.x
            else:
                counter += 1
                heapq.heappush(heap, (res.fun, counter, lb2, ub2, res.x))
        if not heap:
            open_bound = best_val
    else:
        open_bound = best_val  # tree exhausted: incumbent is exact

    if best_x is None:
        if hit_limit:
            return SolveOutcome(LIMIT, math.nan, math.nan, None, math.nan)
        return SolveOutcome(INFEASIBLE, math.nan, math.nan, None, math.nan)
    x = _snap_binaries(program, np.asarray(best_x))
    incumbent = program.evaluate_objective(x)
    relaxation = sign * min(open_bound, best_val) + program.obj_const
    realized = _relative_gap(incumbent, relaxation, program.sense)
    status = LIMIT if hit_limit and realized > gap else OPTIMAL
    return SolveOutcome(status, incumbent, relaxation, x, realized)


# -- convex quadratic programs ----------------------------------------------


def _qp_blocks(program: Program):
    """Clarabel (P, q, A, cones) blocks with row bookkeeping, cached per
    structure; right-hand sides are assembled per solve."""
    cache = program._cache.get("shared", program._cache)
    if "qp" in cache:
        return cache["qp"]
    n = program.n_vars
    P = sp.diags([2.0 * program.quad.get(j, 0.0) for j in range(n)], format="csc")

    eq_rows = []  # (dense, program-row)
    in_rows = []  # (dense, kind, key)
    for r, row in enumerate(program.rows):
        dense = np.zeros(n)
        dense[row.indices] = row.coeffs
        if row.sense == "==":
            eq_rows.append((dense, r))
        elif row.sense == "<=":
            in_rows.append((dense, "row", r))
        else:
            in_rows.append((-dense, "row-neg", r))
    for j in range(n):
        if math.isfinite(program.lb[j]):
            e = np.zeros(n)
            e[j] = -1.0
            in_rows.append((e, "lower", j))
        if math.isfinite(program.ub[j]):
            e = np.zeros(n)
            e[j] = 1.0
            in_rows.append((e, "upper", j))
    stacked = [r[0] for r in eq_rows] + [r[0] for r in in_rows]
    A = sp.csc_matrix(np.array(stacked)) if stacked else sp.csc_matrix((0, n))
    blocks = (P, A, [r[1] for r in eq_rows], [(k, key) for _, k, key in in_rows])
    cache["qp"] = blocks
    return blocks


def _solve_qp(program: Program) -> SolveOutcome:
    import clarabel

    if program.sense != "min":
        raise ProgramError("quadratic objectives are supported for minimisation only")
    P, A, eq_meta, in_meta = _qp_blocks(program)
    q = program.c_vector()
    b = np.empty(len(eq_meta) + len(in_meta))
    for pos, r in enumerate(eq_meta):
        b[pos] = program.rows[r].rhs
    off = len(eq_meta)
    for pos, (kind, key) in enumerate(in_meta):
        if kind == "row":
            b[off + pos] = program.rows[key].rhs
        elif kind == "row-neg":
            b[off + pos] = -program.rows[key].rhs
        elif kind == "lower":
            b[off + pos] = -program.lb[key]
        else:
            b[off + pos] = program.ub[key]
    cones = []
    if eq_meta:
        cones.append(clarabel.ZeroConeT(len(eq_meta)))
    if in_meta:
        cones.append(clarabel.NonnegativeConeT(len(in_meta)))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveOutcome(INFEASIBLE, math.nan, math.nan, None, math.nan)
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveOutcome(UNBOUNDED, -math.inf, -math.inf, None, math.nan)
    if status not in ("Solved", "AlmostSolved"):
        raise SolveFailure(f"QP solve ended with status {status}")
    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    incumbent = program.evaluate_objective(x)
    row_dual = np.zeros(program.n_rows)
    lower_dual = np.zeros(program.n_vars)
    upper_dual = np.zeros(program.n_vars)
    for pos, r in enumerate(eq_meta):
        row_dual[r] = z[pos]
    for pos, (kind, key) in enumerate(in_meta):
        mult = z[off + pos]
        if kind in ("row", "row-neg"):
            row_dual[key] = mult
        elif kind == "lower":
            lower_dual[key] = mult
        else:
            upper_dual[key] = mult
    duals = {"row": row_dual, "lower": lower_dual, "upper": upper_dual}
    return SolveOutcome(OPTIMAL, incumbent, incumbent, x, 0.0, duals=duals)


# ---------------------------------------------------------------------------
# debug text format


def dump_program(program: Program) -> str:
    """Human-readable LP-style dump used by golden-file tests."""
    out = [f"SENSE {program.sense}"]
    obj_terms = " + ".join(f"{c:.17g} {program.names[j]}" for j, c in sorted(program.obj.items()))
    quad_terms = " + ".join(f"{w:.17g} {program.names[j]}^2" for j, w in sorted(program.quad.items()))
    line = "OBJ " + (obj_terms or "0")
    if quad_terms:
        line += " + [ " + quad_terms + " ]"
    if program.obj_const:
        line += f" + const {program.obj_const:.17g}"
    out.append(line)
    out.append("ROWS")
    for row in program.rows:
        terms = " + ".join(f"{c:.17g} {program.names[j]}" for j, c in zip(row.indices, row.coeffs))
        out.append(f"  {row.name}: {terms or '0'} {row.sense} {row.rhs:.17g}")
    out.append("BOUNDS")
    for j in range(program.n_vars):
        out.append(f"  {program.lb[j]:.17g} <= {program.names[j]} <= {program.ub[j]:.17g}")
    binaries = [program.names[j] for j in range(program.n_vars) if program.kinds[j] == "binary"]
    out.append("BINARIES " + " ".join(binaries))
    out.append("END")
    return "\n".join(out) + "\n"


def parse_program(text: str) -> Program:
    """Parse a ``dump_program`` dump back into an equivalent Program."""
    lines = [ln.rstrip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("SENSE"):
        raise ProgramError("dump must start with SENSE")
    sense = lines[0].split()[1]
    binaries: set[str] = set()
    bounds: dict[str, tuple[float, float]] = {}
    rows_spec = []
    obj_spec: list[tuple[str, float]] = []
    quad_spec: list[tuple[str, float]] = []
    obj_const = 0.0
    section = None
    for ln in lines[1:]:
        if ln.startswith("OBJ"):
            body = ln[3:].strip()
            if "+ const" in body:
                body, const_part = body.split("+ const")
                obj_const = float(const_part)
            if "[" in body:
                body, quad_part = body.split("[")
                quad_part = quad_part.split("]")[0]
                for piece in quad_part.split("+"):
                    piece = piece.strip()
                    if piece:
                        coef, name = piece.rsplit(" ", 1)
                        quad_spec.append((name.removesuffix("^2"), float(coef)))
            for piece in body.split("+"):
                piece = piece.strip()
                if piece and piece != "0":
                    coef, name = piece.rsplit(" ", 1)
                    obj_spec.append((name, float(coef)))
        elif ln == "ROWS":
            section = "rows"
        elif ln == "BOUNDS":
            section = "bounds"
        elif ln.startswith("BINARIES"):
            binaries = set(ln.split()[1:])
            section = None
        elif ln == "END":
            break
        elif section == "rows":
            name, body = ln.strip().split(":", 1)
            m = re.search(r"(<=|>=|==)", body)
            if m is None:
                raise ProgramError(f"row without sense: {ln!r}")
            lhs, rhs = body[: m.start()], body[m.end():]
            terms = []
            for piece in lhs.split("+"):
                piece = piece.strip()
                if piece and piece != "0":
                    coef, vname = piece.rsplit(" ", 1)
                    terms.append((vname, float(coef)))
            rows_spec.append((name.strip(), terms, m.group(1), float(rhs)))
        elif section == "bounds":
            lo, rest = ln.strip().split("<=", 1)
            name, hi = rest.split("<=")
            bounds[name.strip()] = (float(lo), float(hi))

    builder = ProgramBuilder(sense)
    refs: dict[str, VarRef] = {}
    for name, (lo, hi) in bounds.items():
        if name in binaries:
            refs[name] = builder.add_binary(name)
        else:
            refs[name] = builder._add_var(name, "continuous-nonnegative" if lo >= 0 else "continuous-free", lo, hi)
    builder.set_objective([(refs[n], c) for n, c in obj_spec], obj_const)
    for n, w in quad_spec:
        builder.add_quadratic_term(refs[n], w)
    for name, terms, sense_s, rhs in rows_spec:
        builder.add_constraint([(refs[n], c) for n, c in terms], sense_s, rhs, name=name)
    return builder.build()
