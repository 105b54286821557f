"""Scaling benchmarks and per-phase wall-time breakdowns.

Each cell runs a short MD stage on a synthetic system of the given size. NN
inference on each cell's final configuration is then timed in isolation with
a prebuilt edge list; repeats cycle over all cells in turn and the best time
per cell is kept, so slow spells on a shared machine hit every size alike.
The wall-time slope is fitted to those times. Failures are recorded per cell;
the report is always written.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import State
from ..neighbors import build_neighbor_list
from ..nnpot import NnInput, infer
from .config import RunConfig, validate_config
from .runner import PHASES, RunMetrics, build_model, run_pipeline

log = logging.getLogger(__name__)

DEFAULT_SIZES = (582, 1231, 2643, 4114)
CLASSICAL = "classical"
DEFAULT_VARIANTS = ((CLASSICAL, None), ("embed_fit", 1), ("message_passing", 3))
BENCH_FIELDS = ("n_atoms", "model", "depth", "status", "ns_per_day", "md_wall_s",
                "nn_fraction", "nn_flops", "nn_activation_bytes", "nn_call_s", "n_edges",
                "error")
SLOPE_METRICS = ("nn_flops", "nn_activation_bytes", "nn_call_s")


@dataclass
class BenchCell:
    n_atoms: int
    model: str
    depth: int | None
    status: str = "ok"
    ns_per_day: float = float("nan")
    md_wall_s: float = float("nan")
    nn_fraction: float = float("nan")
    nn_flops: float = float("nan")  # per inference call
    nn_activation_bytes: float = float("nan")  # peak
    nn_call_s: float = float("nan")  # best-of-repeats inference time
    n_edges: int = 0
    error: str = ""
    metrics: RunMetrics | None = None

    def row(self) -> dict:
        return {k: getattr(self, k) for k in BENCH_FIELDS}


@dataclass
class BenchReport:
    cells: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)  # (model, metric) -> slope

    def cell(self, n_atoms: int, model: str) -> BenchCell:
        for c in self.cells:
            if c.n_atoms == n_atoms and c.model == model:
                return c
        raise KeyError((n_atoms, model))

    def models(self) -> list:
        return list(dict.fromkeys(c.model for c in self.cells))

    def series(self, model: str, metric: str):
        pts = [(c.n_atoms, getattr(c, metric)) for c in self.cells
               if c.model == model and c.status == "ok"]
        pts.sort()
        return np.array([p[0] for p in pts], float), np.array([p[1] for p in pts], float)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def bench_config(template: RunConfig, n_atoms: int, family: str | None, depth: int | None,
                 md_steps: int) -> RunConfig:
    """MD-only config for one cell; ``family=None`` disables the NN."""
    cfg = RunConfig(**{s: dataclasses.replace(getattr(template, s))
                       for s in RunConfig.SECTIONS})
    cfg.system.n_atoms = n_atoms
    cfg.md.steps = md_steps
    cfg.md.nstlog = md_steps
    cfg.md.nstxout = 0
    if family is None:
        cfg.nn.stages = ("none",)
    else:
        cfg.nn.stages = ("md",)
        cfg.nn.family = family
        cfg.nn.depth = 1 if depth is None else depth
    validate_config(cfg)
    return cfg


def inference_input(state: State, types, group_atoms, rc_model: float,
                    skin: float = 0.1) -> NnInput:
    """Group input with a prebuilt full edge list, as the MD engine supplies it."""
    sub = State.from_positions(state.positions[group_atoms], state.box)
    edges = build_neighbor_list(sub, None, rc_model, skin, mode="full").pairs
    return NnInput(sub.positions, types[group_atoms], state.box, edges=edges)


def time_inference(jobs, repeats: int = 5) -> list[tuple[float, int]]:
    """Best wall time and edge count per ``(model, input, dtype)`` job.

    Each repeat runs every job once before the next repeat starts.
    """
    best = [np.inf] * len(jobs)
    edges = [0] * len(jobs)
    for _ in range(repeats):
        for k, (model, inp, dtype) in enumerate(jobs):
            start = time.perf_counter()
            out = infer(inp, model, dtype)
            best[k] = min(best[k], time.perf_counter() - start)
            edges[k] = out.n_edges
    return [(float(b), int(e)) for b, e in zip(best, edges)]


def run_cell(template: RunConfig, n_atoms: int, family: str | None, depth: int | None,
             md_steps: int = 20) -> tuple[BenchCell, tuple | None]:
    """One MD run; returns the cell and the inference job to time (or None)."""
    cell = BenchCell(n_atoms, family or CLASSICAL, depth)
    job = None
    try:
        cfg = bench_config(template, n_atoms, family, depth, md_steps)
        result = run_pipeline(cfg, stages=("md",))
        m = result.metrics
        cell.metrics = m
        cell.md_wall_s = m.stage_wall["md"]
        cell.ns_per_day = m.ns_per_day("md")
        cell.nn_fraction = m.phases["md"]["nn"] / m.stage_wall["md"]
        if family is not None:
            calls = max(m.nn_calls, 1)
            cell.nn_flops = m.nn_flops / calls
            cell.nn_activation_bytes = m.nn_activation_bytes
            dtype = np.float64 if cfg.general.precision == "fp64" else np.float32
            model = build_model(cfg, result.topology.n_types)
            inp = inference_input(result.state, result.topology.types,
                                  result.plan.group_atoms, model.rc_model,
                                  cfg.general.neighbor_skin)
            job = (model, inp, dtype)
    except Exception as exc:  # recorded per cell; the report is still written
        _fail(cell, exc)
    return cell, job


def _fail(cell, exc):
    cell.status = "failed"
    cell.error = f"{type(exc).__name__}: {exc}"
    log.warning("bench cell N=%d %s failed:\n%s", cell.n_atoms, cell.model,
                traceback.format_exc())


def bench_scaling(template: RunConfig | None = None, sizes=DEFAULT_SIZES,
                  variants=DEFAULT_VARIANTS, md_steps: int = 20, repeats: int = 5,
                  output_dir=None) -> BenchReport:
    """Run every (size, model variant) cell and fit log-log slopes per metric."""
    sizes = sorted(int(n) for n in sizes)
    if len(sizes) < 3 or sizes[-1] < 4 * sizes[0]:
        raise ValueError("need at least 3 sizes spanning a factor of 4 or more")
    template = template or RunConfig()
    report = BenchReport()
    timed = []
    for n in sizes:
        for family, depth in variants:
            fam = None if family == CLASSICAL else family
            log.info("bench N=%d model=%s", n, family)
            cell, job = run_cell(template, n, fam, depth, md_steps)
            report.cells.append(cell)
            if job is not None:
                timed.append((cell, job))
    try:
        times = time_inference([job for _, job in timed], repeats)
    except Exception as exc:
        for cell, _ in timed:
            _fail(cell, exc)
    else:
        for (cell, _), (seconds, n_edges) in zip(timed, times):
            cell.nn_call_s, cell.n_edges = seconds, n_edges
    for model in report.models():
        metrics = ("ns_per_day",) + (SLOPE_METRICS if model != CLASSICAL else ())
        for metric in metrics:
            report.slopes[(model, metric)] = loglog_slope(*report.series(model, metric))
    if output_dir is not None:
        write_bench_csv(report, Path(output_dir))
    return report


def write_bench_csv(report: BenchReport, output_dir: Path) -> tuple[Path, Path]:
    output_dir.mkdir(parents=True, exist_ok=True)
    cells_path = output_dir / "bench_scaling.csv"
    with cells_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        for c in report.cells:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v)
                             for k, v in c.row().items()})
    slopes_path = output_dir / "bench_slopes.csv"
    with slopes_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "metric", "loglog_slope"])
        for (model, metric), slope in report.slopes.items():
            writer.writerow([model, metric, f"{slope:.4f}"])
    return cells_path, slopes_path


def emit_phase_breakdown(metrics: RunMetrics, stage: str | None = None) -> list[dict]:
    """Per-phase share of wall time; unattributed time is reported as ``other``.

    Shares are percentages of the stage wall time (or of all stages together)
    and sum to 100.
    """
    stages = [stage] if stage else list(metrics.stage_wall)
    wall = sum(metrics.stage_wall.get(s, 0.0) for s in stages)
    totals = metrics.phase_totals(stage)
    rows = [{"phase": p, "seconds": totals[p]} for p in PHASES]
    rows.append({"phase": "other", "seconds": max(wall - sum(totals.values()), 0.0)})
    denom = sum(r["seconds"] for r in rows)
    for r in rows:
        r["percent"] = 100.0 * r["seconds"] / denom if denom > 0 else 0.0
    return rows


def format_breakdown(rows: list[dict]) -> str:
    lines = [f"{'phase':<16}{'seconds':>12}{'percent':>10}"]
    for r in rows:
        lines.append(f"{r['phase']:<16}{r['seconds']:>12.4f}{r['percent']:>9.1f}%")
    return "\n".join(lines)


def write_breakdown_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("phase", "seconds", "percent"))
        writer.writeheader()
        for r in rows:
            writer.writerow({"phase": r["phase"], "seconds": f"{r['seconds']:.6f}",
                             "percent": f"{r['percent']:.3f}"})
