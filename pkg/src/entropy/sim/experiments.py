"""Parameter sweeps over the simulators, with CSV and manifest output."""

from __future__ import annotations

import csv
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ..codec import CodecParams
from .baseline import run_baseline
from .config import AttackerConfig, SimConfig, SimMetrics
from .engine import run_entropy

log = logging.getLogger(__name__)

CSV_VERSION = 1
CSV_COLUMNS = [
    "sweep_var", "sweep_value", "system", "seed", "repair_traffic_objects", "lost_fraction",
    "lost_objects", "repairs", "cache_hits", "cache_misses", "node_failures", "attacked_nodes",
    "storage_ratio_initial", "storage_ratio_final", "trace_min",
]
RUNNERS: dict[str, Callable[[SimConfig], SimMetrics]] = {
    "entropy": run_entropy,
    "baseline": run_baseline,
}


@dataclass(frozen=True)
class Job:
    system: str
    sweep_var: str
    sweep_value: float | str
    cfg: SimConfig


def _run_job(job: Job) -> dict:
    met = RUNNERS[job.system](job.cfg)
    row = {
        "sweep_var": job.sweep_var,
        "sweep_value": job.sweep_value,
        "system": job.system,
        "seed": job.cfg.seed,
        "repair_traffic_objects": met.repair_traffic_objects,
        "lost_fraction": met.lost_fraction,
        "lost_objects": met.lost_objects,
        "repairs": met.repairs,
        "cache_hits": met.cache_hits,
        "cache_misses": met.cache_misses,
        "node_failures": met.node_failures,
        "attacked_nodes": met.attacked_nodes,
        "storage_ratio_initial": met.storage_ratio_initial,
        "storage_ratio_final": met.storage_ratio_final,
        "trace_min": min(v for _, v in met.trace) if met.trace else "",
    }
    log.info("%s %s=%s seed=%d traffic=%.1f lost=%.3f", job.system, job.sweep_var,
             job.sweep_value, job.cfg.seed, met.repair_traffic_objects, met.lost_fraction)
    return row


def run_jobs(jobs: Sequence[Job], workers: int = 1) -> list[dict]:
    """Run independent simulations; rows come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _jobs(base: SimConfig, var: str, values: Iterable, seeds: Iterable[int],
          systems: Sequence[str], make: Callable[[SimConfig, object], SimConfig]) -> list[Job]:
    return [Job(sys_, var, v, make(base, v).with_(seed=s))
            for v in values for sys_ in systems for s in seeds]


def repair_traffic_sweep(base: SimConfig, var: str, values: Sequence[float],
                         seeds: Iterable[int] = (0,), systems=("entropy", "baseline"),
                         workers: int = 1) -> list[dict]:
    """Repair traffic as ``objects``, ``churn`` or ``cache_ttl`` varies."""
    field = {"objects": "objects", "churn": "churn_per_year", "cache_ttl": "cache_ttl_hours"}[var]
    cast = int if var == "objects" else float
    return run_jobs(_jobs(base, var, values, list(seeds), systems,
                          lambda c, v: c.with_(**{field: cast(v)})), workers)


def byzantine_sweep(base: SimConfig, fractions: Sequence[float], seeds: Iterable[int] = (0,),
                    systems=("entropy", "baseline"), workers: int = 1) -> list[dict]:
    return run_jobs(_jobs(base, "byzantine_fraction", fractions, list(seeds), systems,
                          lambda c, v: c.with_(byzantine_fraction=float(v))), workers)


def targeted_sweep(base: SimConfig, fractions: Sequence[float], seeds: Iterable[int] = (0,),
                   strategy: str = "greedy", systems=("entropy", "baseline"),
                   workers: int = 1) -> list[dict]:
    return run_jobs(_jobs(base, "attacked_fraction", fractions, list(seeds), systems,
                          lambda c, v: c.with_(attack=AttackerConfig(float(v), strategy))), workers)


def trace_runs(base: SimConfig, seeds: Iterable[int], r_groups: Sequence[int] = (80,),
               chunk: int = 0) -> dict[int, list[list[tuple[float, int]]]]:
    """Alive-honest fragment series of one chunk, per inner group size."""
    out: dict[int, list] = {}
    for r in r_groups:
        codec = CodecParams(base.codec.k_inner, r, base.codec.k_outer, base.codec.n_chunks)
        out[r] = [run_entropy(base.with_(codec=codec, trace_chunk=chunk, seed=s)).trace
                  for s in seeds]
    return out


def trace_rows(traces: dict[int, list[list[tuple[float, int]]]], seeds: Sequence[int]) -> list[dict]:
    rows = []
    for r, series in traces.items():
        for seed, trace in zip(seeds, series):
            rows.extend({"r_group": r, "seed": seed, "hours": t, "alive_honest_fragments": v}
                        for t, v in trace)
    return rows


# -- summaries ----------------------------------------------------------------

def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / total if total > 0 else 1.0
    return float(slope), float(intercept), r2


def mean_by(rows: Iterable[dict], system: str, key: str = "repair_traffic_objects") -> dict:
    """Mean of ``key`` per sweep value for one system, in sweep order."""
    acc: dict = {}
    for r in rows:
        if r["system"] == system:
            acc.setdefault(r["sweep_value"], []).append(float(r[key]))
    return {v: float(np.mean(vals)) for v, vals in acc.items()}


def loss_onset(rows: Iterable[dict], system: str) -> float:
    """Smallest swept value at which any seed lost an object (inf if none)."""
    hits = [float(r["sweep_value"]) for r in rows
            if r["system"] == system and float(r["lost_objects"]) > 0]
    return min(hits) if hits else float("inf")


# -- output -------------------------------------------------------------------

def write_csv(rows: Sequence[dict], path: str | Path, columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (CSV_COLUMNS if rows and "system" in rows[0] else rows[0].keys()))
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def write_manifest(path: str | Path, command: str, cfg: SimConfig, seeds: Sequence[int],
                   outputs: Sequence[str | Path], extra: dict | None = None) -> Path:
    from .. import __version__

    manifest = {
        "tool": "entropy",
        "version": __version__,
        "command": command,
        "config": cfg.to_dict(),
        "seeds": list(seeds),
        "csv_version": CSV_VERSION,
        "csv_columns": CSV_COLUMNS,
        "outputs": [str(p) for p in outputs],
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        manifest.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
