"""Comparison tables, sensitivity sweeps, and figure rendering.

All figures are static SVG files written next to the delimited output
they visualise, so results can be consumed entirely from disk.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import decomposition
from .instance_io import AlgoParams, InstanceSpec, instance_from_dict, instance_to_dict

ALGORITHMS = {
    "ccg": decomposition.run_ccg,
    "iccg": decomposition.run_iccg,
    "aiccg": decomposition.run_aiccg,
}

COMPARE_COLUMNS = ["algorithm", "status", "objective", "gap_certified", "iterations",
                   "explorations", "exploitations", "wall_ms"]
SWEEP_COLUMNS = ["parameter", "value", "status", "objective", "worst_case_loss",
                 "plan_fingerprint", "plan_changed", "iterations", "explorations", "wall_ms"]


@dataclass
class CompareRow:
    algorithm: str
    status: str
    objective: float | None
    gap_certified: float | None
    iterations: int | None
    explorations: int | None
    exploitations: int | None
    wall_ms: float


def run_algorithm(name: str, instance: InstanceSpec, params: AlgoParams):
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {sorted(ALGORITHMS)}")
    return ALGORITHMS[name](instance, params)


def compare_algorithms(instance: InstanceSpec, params: AlgoParams,
                       algorithms=("ccg", "iccg", "aiccg")) -> list[CompareRow]:
    """Run each algorithm on the same instance and seed; failures are
    recorded in their row and do not stop the remaining runs."""
    rows = []
    for name in algorithms:
        t0 = time.perf_counter()
        try:
            result = run_algorithm(name, instance, params)
            rows.append(CompareRow(name, "ok" if result.terminated else "limit",
                                   result.objective, result.gap_certified,
                                   result.iterations, result.explorations,
                                   result.exploitations,
                                   1000.0 * (time.perf_counter() - t0)))
        except Exception as exc:  # one failing algorithm must not sink the table
            rows.append(CompareRow(name, f"error: {type(exc).__name__}: {exc}",
                                   None, None, None, None, None,
                                   1000.0 * (time.perf_counter() - t0)))
    return rows


def write_compare_outputs(rows: list[CompareRow], outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "compare.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: getattr(row, k) for k in COMPARE_COLUMNS})
    ok = [r for r in rows if r.objective is not None]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    if ok:
        names = [r.algorithm for r in ok]
        axes[0].bar(names, [r.objective for r in ok], color="#4878a8")
        axes[0].set_ylabel("certified objective (10^4 CNY / yr)")
        axes[1].bar(names, [r.wall_ms / 1000.0 for r in ok], color="#a85448")
        axes[1].set_ylabel("wall time (s)")
    for ax in axes:
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(outdir / "compare.svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# sensitivity sweeps


def scale_diu(instance: InstanceSpec, factor: float) -> InstanceSpec:
    """Scale every DIU interval's half-width about its midpoint."""
    data = instance_to_dict(instance)
    for section in data["diu_box"].values():
        for intervals in section.values():
            for pair in intervals:
                lo, hi = pair
                mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
                pair[0] = mid - factor * half
                pair[1] = mid + factor * half
    data["name"] = f"{instance.name}@diu{factor:g}"
    return instance_from_dict(data)


def scale_fleet(instance: InstanceSpec, factor: float) -> InstanceSpec:
    """Scale the fleet forecast bounds (outward integer rounding)."""
    import math

    data = instance_to_dict(instance)
    data["fleet"]["v_min"] = max(0, math.floor(instance.fleet.v_min * factor))
    data["fleet"]["v_max"] = max(data["fleet"]["v_min"],
                                 math.ceil(instance.fleet.v_max * factor))
    data["name"] = f"{instance.name}@fleet{factor:g}"
    return instance_from_dict(data)


def _sweep_point(args):
    instance_data, params, algorithm, parameter, value = args
    instance = instance_from_dict(instance_data)
    if parameter == "diu-width":
        instance = scale_diu(instance, value)
    elif parameter == "fleet-mu":
        instance = scale_fleet(instance, value)
        params = AlgoParams(**{**vars(params), "fleet_mu": None})
    else:
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    t0 = time.perf_counter()
    try:
        result = run_algorithm(algorithm, instance, params)
        return {
            "parameter": parameter, "value": value,
            "status": "ok" if result.terminated else "limit",
            "objective": result.objective,
            "worst_case_loss": result.costs["worst_case_loss"],
            "plan_fingerprint": result.plan.fingerprint(),
            "iterations": result.iterations,
            "explorations": result.explorations,
            "wall_ms": 1000.0 * (time.perf_counter() - t0),
        }
    except Exception as exc:
        return {
            "parameter": parameter, "value": value,
            "status": f"error: {type(exc).__name__}: {exc}",
            "objective": None, "worst_case_loss": None, "plan_fingerprint": None,
            "iterations": None, "explorations": None,
            "wall_ms": 1000.0 * (time.perf_counter() - t0),
        }


def run_sweep(instance: InstanceSpec, params: AlgoParams, algorithm: str,
              parameter: str, grid: list[float], jobs: int = 1) -> list[dict]:
    """One algorithm run per grid point; points are fully isolated."""
    if not grid:
        raise ValueError("sweep grid must be nonempty")
    tasks = [(instance_to_dict(instance), params, algorithm, parameter, v) for v in grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    first_fp = next((r["plan_fingerprint"] for r in rows if r["plan_fingerprint"]), None)
    for row in rows:
        row["plan_changed"] = (row["plan_fingerprint"] != first_fp
                               if row["plan_fingerprint"] else None)
    return rows


def write_sweep_outputs(rows: list[dict], outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in SWEEP_COLUMNS})
    ok = [r for r in rows if r["objective"] is not None]
    fig, ax = plt.subplots(figsize=(6, 3.8))
    if ok:
        xs = [r["value"] for r in ok]
        ax.plot(xs, [r["objective"] for r in ok], "o-", label="objective")
        ax.plot(xs, [r["worst_case_loss"] for r in ok], "s--", label="worst-case loss")
        ax.set_xlabel(ok[0]["parameter"])
        ax.set_ylabel("10^4 CNY / yr")
        ax.legend()
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(outdir / "sweep.svg")
    plt.close(fig)


def write_convergence_plot(trace, outdir) -> None:
    """Bounds per master solve, from the trace rows."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.8))
    if trace:
        steps = list(range(1, len(trace) + 1))
        ax.plot(steps, [row.UB_bar for row in trace], "o-", label="global upper bound")
        ax.plot(steps, [row.LB_k for row in trace], "s--", label="certified lower bound")
        ax.set_xlabel("master solve")
        ax.set_ylabel("10^4 CNY / yr")
        ax.legend()
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(outdir / "convergence.svg")
    plt.close(fig)
