"""Report figures, written as PNG files next to the CSV they are drawn from."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import CLASSICAL, BenchReport  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_energy_log(rows: list[dict], path) -> Path:
    """Potential, kinetic and total energy, temperature and pressure per stage."""
    fig, axes = plt.subplots(3, 1, figsize=(8, 8), sharex=False)
    stages = list(dict.fromkeys(r["stage"] for r in rows))
    offset = 0.0
    for stage in stages:
        sel = [r for r in rows if r["stage"] == stage]
        t = np.array([r["time"] for r in sel]) + offset
        axes[0].plot(t, [r["total_potential"] for r in sel], label=f"{stage} potential")
        axes[0].plot(t, [r["total"] for r in sel], "--", label=f"{stage} total")
        axes[1].plot(t, [r["temperature"] for r in sel], label=stage)
        axes[2].plot(t, [r["pressure"] for r in sel], label=stage)
        if len(t):
            offset = t[-1]
    axes[0].set_ylabel("energy (kJ/mol)")
    axes[1].set_ylabel("temperature (K)")
    axes[2].set_ylabel("pressure (bar)")
    axes[2].set_xlabel("time (ps, stages concatenated)")
    for ax in axes:
        ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_phase_breakdown(rows: list[dict], path, title: str = "wall-time share") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = [r["phase"] for r in rows]
    ax.barh(names, [r["percent"] for r in rows])
    ax.set_xlabel("% of wall time")
    ax.set_title(title)
    ax.invert_yaxis()
    return _save(fig, path)


def plot_scaling(report: BenchReport, output_dir) -> list[Path]:
    """Throughput, inference time and counter figures against atom count."""
    output_dir = Path(output_dir)
    panels = (
        ("ns_per_day", "throughput (ns/day)", "bench_throughput.png"),
        ("nn_call_s", "inference wall time (s)", "bench_inference_time.png"),
        ("nn_flops", "inference flops per call", "bench_flops.png"),
        ("nn_activation_bytes", "peak activation bytes", "bench_memory.png"),
    )
    paths = []
    for metric, label, name in panels:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for model in report.models():
            if model == CLASSICAL and metric != "ns_per_day":
                continue
            x, y = report.series(model, metric)
            if len(x) == 0:
                continue
            slope = report.slopes.get((model, metric), float("nan"))
            ax.loglog(x, y, "o-", label=f"{model} (slope {slope:.2f})")
        ax.set_xlabel("atoms")
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        ax.grid(True, which="both", alpha=0.3)
        paths.append(_save(fig, output_dir / name))
    return paths
