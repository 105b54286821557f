"""Oracle suites behind the ``check-forces`` and ``check-dd`` commands.

Each suite returns plain rows (one per check) so the CLI can print and dump
them and the tests can assert on them.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..domain import (InMemoryTransport, classical_forces_decomposed, decompose,
                      exchange_ghost_positions, halo_is_sufficient, nn_inference_decomposed)
from ..forcefield import CoulombParams, ForceFieldParams, LjParams, compute_classical
from ..neighbors import build_neighbor_list
from ..nnpot import NnInput, NnModel, infer
from ..nnpot.checks import check_model_forces, random_cluster
from ..synthetic import SyntheticParams, generate_synthetic_system

GRIDS = {1: (1, 1, 1), 2: (2, 1, 1), 4: (2, 2, 1), 8: (2, 2, 2)}


@dataclass
class OracleRow:
    check: str
    n_ranks: int
    detail: str
    value: float  # relative force deviation (or error)
    threshold: float
    passed: bool
    message_bytes: int = 0


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def classical_dd_checks(n_ranks=(1, 2, 4, 8), n_atoms: int = 700, rc: float = 0.7,
                        seed: int = 1, tol: float = 1e-10) -> list[OracleRow]:
    """Decomposed classical forces against the single-domain result (FP64)."""
    topo, state = generate_synthetic_system(n_atoms, 25.0, 0.3, seed=seed)
    sp = SyntheticParams()
    params = ForceFieldParams(LjParams(sp.sigma, sp.epsilon),
                              CoulombParams("reaction_field", rc), rc)
    ref = state.copy()
    compute_classical(ref, topo, build_neighbor_list(state, topo, rc, 0.1), params)
    rows = []
    for n in n_ranks:
        modes = ("symmetric", "asymmetric") if n <= 2 else ("symmetric",)
        for mode in modes:
            layout = decompose(state, topo, n, rc, GRIDS[n])
            transport = InMemoryTransport()
            forces, _ = classical_forces_decomposed(layout, state, topo, params, mode,
                                                    transport)
            err = _rel(forces, ref.forces)
            rows.append(OracleRow("classical", n, f"{mode} grid={layout.grid}", err, tol,
                                  err <= tol and transport.balanced(),
                                  transport.total_bytes()))
    return rows


def nn_dd_checks(n_ranks=(1, 2, 4, 8), n_atoms: int = 820, rc_model: float = 0.4,
                 depth: int = 2, seed: int = 2, tol: float = 1e-10,
                 control_threshold: float = 1e-3) -> list[OracleRow]:
    """NN gather_to_root and halo_inference against single-domain inference (FP64),
    plus the negative control with a halo of one cutoff and the depth check disabled."""
    topo, state = generate_synthetic_system(n_atoms, 25.0, 0.5, seed=seed)
    model = NnModel.create("message_passing", topo.n_types, rc_model=rc_model, depth=depth,
                           seed=seed + 3)
    ref = infer(NnInput(state.positions, topo.types, state.box), model, np.float64).forces
    halo = model.receptive_field
    rows = []
    for n in n_ranks:
        layout = decompose(state, topo, n, halo, GRIDS[n])
        for strategy in ("gather_to_root", "halo_inference"):
            transport = InMemoryTransport()
            res = nn_inference_decomposed(layout, state, topo, model, strategy,
                                          transport=transport, dtype=np.float64)
            err = _rel(res.forces, ref)
            rows.append(OracleRow("nn", n, f"{strategy} halo={halo:.2f}", err, tol,
                                  err <= tol and transport.balanced(),
                                  transport.total_bytes()))
    for n in n_ranks:
        if n == 1:
            continue
        layout = decompose(state, topo, n, rc_model, GRIDS[n])
        res = nn_inference_decomposed(layout, state, topo, model, "halo_inference",
                                      dtype=np.float64, check_receptive_field=False)
        dev = _rel(res.forces, ref)
        views = exchange_ghost_positions(layout, state)
        sufficient = halo_is_sufficient(layout, views, state, rc_model, depth)
        rows.append(OracleRow("nn_negative_control", n,
                              f"halo={rc_model:.2f} < {halo:.2f}, sufficient={sufficient}",
                              dev, control_threshold, dev > control_threshold and not sufficient))
    return rows


def force_checks(model: NnModel | None = None, n_configs: int = 10, n_atoms: int = 12,
                 seed: int = 0, tol: float = 1e-4, families=None) -> list[OracleRow]:
    """Analytic NN forces against central differences on random configurations (FP64)."""
    rng = np.random.default_rng(seed)
    if model is not None:
        models = [("model", model)]
    else:
        models = [(f"{fam} L={L}", NnModel.create(fam, 2, rc_model=0.5, hidden=16, depth=L,
                                                   seed=seed + L))
                  for fam, L in (families or (("embed_fit", 1), ("message_passing", 1),
                                              ("message_passing", 2),
                                              ("message_passing", 3)))]
    rows = []
    for name, m in models:
        worst = 0.0
        for _ in range(n_configs):
            pos, types, box = random_cluster(n_atoms, m.n_types, rng)
            worst = max(worst, check_model_forces(m, pos, types, box).relative_error)
        rows.append(OracleRow("forces", 1, f"{name} configs={n_configs}", worst, tol,
                              worst <= tol))
    return rows


def format_rows(rows: list[OracleRow]) -> str:
    lines = []
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        cmp = ">" if r.check.endswith("negative_control") else "<="
        lines.append(f"{status}  {r.check:<20} ranks={r.n_ranks:<2} {r.detail:<40} "
                     f"{r.value:.3e} {cmp} {r.threshold:.0e}")
    return "\n".join(lines)


def write_rows_csv(rows: list[OracleRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(asdict(rows[0])) if rows else ["check"])
        writer.writeheader()
        for r in rows:
            writer.writerow(asdict(r))
