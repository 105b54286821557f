"""Command-line entry point: ``hybridmd <command> ...``.

Exit codes: 0 success, 1 configuration error, 2 simulation blow-up or other
runtime failure, 3 resource or constraint error (including failed checks).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, HybridMDError
from .gro import write_gro_topology
from .nnpot import NnModel
from .pipeline.config import DESK, PRODUCTION, RunConfig, format_config, parse_config

log = logging.getLogger("hybridmd")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CONSTRAINT = 0, 1, 2, 3


def _load_config(path: str | None, paper_scale: bool = False) -> RunConfig:
    preset = PRODUCTION if paper_scale else DESK
    text = Path(path).read_text() if path else ""
    return parse_config(text, preset=preset)


def _output_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_metrics_csv(metrics, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "steps", "simulated_ps", "wall_s", "ns_per_day"])
        for stage, wall in metrics.stage_wall.items():
            ps = metrics.stage_ps.get(stage, 0.0)
            writer.writerow([stage, metrics.stage_steps.get(stage, 0), f"{ps:.6g}",
                             f"{wall:.6g}",
                             f"{metrics.ns_per_day(stage) if ps else 0.0:.6g}"])
        writer.writerow([])
        writer.writerow(["counter", "value"])
        for name in ("nn_calls", "nn_flops", "nn_activation_bytes", "message_bytes",
                     "neighbor_builds", "em_iterations", "em_converged", "em_stalled"):
            writer.writerow([name, getattr(metrics, name)])


# -- commands -------------------------------------------------------------------

def cmd_genconf(args) -> int:
    cfg = _load_config(None, args.paper_scale)
    text = format_config(cfg)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_minimize(args) -> int:
    from .pipeline.runner import run_pipeline

    cfg = _load_config(args.config)
    out = _output_dir(args.output)
    result = run_pipeline(cfg, stages=("em",))
    m = result.metrics
    (out / "minimized.gro").write_text(
        write_gro_topology(result.state, result.topology, title="minimized"))
    print(f"EM: {m.em_iterations} iterations, converged={m.em_converged}, "
          f"stalled={m.em_stalled}, wall {m.stage_wall['em']:.2f} s")
    print(f"wrote {out / 'minimized.gro'}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline.bench import emit_phase_breakdown, format_breakdown, write_breakdown_csv
    from .pipeline.plots import plot_energy_log, plot_phase_breakdown
    from .pipeline.runner import run_pipeline

    cfg = _load_config(args.config, args.paper_scale)
    if args.seed is not None:
        cfg.general.seed = args.seed
    out = _output_dir(args.output)
    (out / "config.used").write_text(format_config(cfg))
    model = NnModel.load(args.model) if args.model else None
    result = run_pipeline(cfg, output_dir=out, model=model)
    m = result.metrics
    (out / "final.gro").write_text(write_gro_topology(result.state, result.topology,
                                                      title="final"))
    write_metrics_csv(m, out / "metrics.csv")
    rows = emit_phase_breakdown(m, "md")
    write_breakdown_csv(rows, out / "phase_breakdown.csv")
    plot_energy_log(result.energy_log, out / "energy.png")
    plot_phase_breakdown(rows, out / "phase_breakdown.png", "MD stage wall-time share")
    for stage, wall in m.stage_wall.items():
        print(f"{stage:>4}: {m.stage_steps[stage]:>6} steps  {wall:8.2f} s"
              + (f"  {m.ns_per_day(stage):8.3f} ns/day" if m.stage_ps.get(stage) else ""))
    print(format_breakdown(rows))
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_bench_scaling(args) -> int:
    from .pipeline.bench import bench_scaling
    from .pipeline.plots import plot_scaling

    cfg = _load_config(args.config)
    if args.fraction_grouped is not None:
        cfg.system.fraction_grouped = args.fraction_grouped
    out = _output_dir(args.output)
    report = bench_scaling(cfg, sizes=args.sizes, md_steps=args.md_steps,
                           repeats=args.repeats, output_dir=out)
    plot_scaling(report, out)
    for c in report.cells:
        status = c.status if c.status == "ok" else f"FAILED ({c.error})"
        print(f"N={c.n_atoms:>5} {c.model:<16} {c.ns_per_day:9.3f} ns/day  "
              f"nn {c.nn_fraction * 100:5.1f}%  {status}")
    for (model, metric), slope in report.slopes.items():
        print(f"slope {model:<16} {metric:<20} {slope:6.3f}")
    print(f"outputs in {out}")
    failed = sum(c.status != "ok" for c in report.cells)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_check_forces(args) -> int:
    from .pipeline.oracles import force_checks, format_rows

    model = NnModel.load(args.model) if args.model else None
    rows = force_checks(model, n_configs=args.configs, n_atoms=args.atoms, seed=args.seed,
                        tol=args.tolerance)
    print(format_rows(rows))
    return EXIT_OK if all(r.passed for r in rows) else EXIT_CONSTRAINT


def cmd_check_dd(args) -> int:
    from .pipeline.oracles import (classical_dd_checks, format_rows, nn_dd_checks,
                                   write_rows_csv)

    rows = classical_dd_checks(args.ranks) + nn_dd_checks(args.ranks)
    print(format_rows(rows))
    if args.output:
        out = _output_dir(args.output)
        write_rows_csv(rows, out / "dd_checks.csv")
        print(f"wrote {out / 'dd_checks.csv'}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_CONSTRAINT


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridmd", description="Hybrid classical / neural-network molecular dynamics.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genconf", help="print the canonical configuration with all defaults")
    p.add_argument("--paper-scale", action="store_true",
                   help="production step counts instead of the desk preset")
    p.add_argument("-o", "--output", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_genconf)

    p = sub.add_parser("minimize", help="energy-minimize the configured system")
    p.add_argument("config", nargs="?", help="configuration file (defaults if omitted)")
    p.add_argument("-o", "--output", default="hybridmd_out")
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("run", help="run EM, NVT, NPT and MD and write the report")
    p.add_argument("config", nargs="?", help="configuration file (defaults if omitted)")
    p.add_argument("-o", "--output", default="hybridmd_out")
    p.add_argument("--paper-scale", action="store_true",
                   help="50k-step equilibration and 10k-step MD unless the file overrides")
    p.add_argument("--seed", type=int, help="override [general] seed")
    p.add_argument("--model", help="NN model JSON file (overrides [nn] model)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench-scaling", help="throughput and counter scaling against size")
    p.add_argument("config", nargs="?", help="configuration template")
    p.add_argument("-o", "--output", default="hybridmd_bench")
    p.add_argument("--sizes", type=int, nargs="+", default=[582, 1231, 2643, 4114])
    p.add_argument("--md-steps", type=int, default=20)
    p.add_argument("--repeats", type=int, default=5, help="inference timing repeats")
    p.add_argument("--fraction-grouped", type=float,
                   help="fraction of atoms in the NN group (1.0 = whole system)")
    p.set_defaults(func=cmd_bench_scaling)

    p = sub.add_parser("check-forces", help="finite-difference check of NN forces")
    p.add_argument("--model", help="model JSON file; default checks built-in toy models")
    p.add_argument("--configs", type=int, default=50)
    p.add_argument("--atoms", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_check_forces)

    p = sub.add_parser("check-dd", help="domain-decomposition oracle suite")
    p.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 4, 8],
                   choices=[1, 2, 4, 8])
    p.add_argument("-o", "--output", help="directory for dd_checks.csv")
    p.set_defaults(func=cmd_check_dd)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", invalid="ignore")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HybridMDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT


if __name__ == "__main__":
    sys.exit(main())
