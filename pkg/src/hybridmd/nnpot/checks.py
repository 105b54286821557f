"""Finite-difference force checks shared by the tests and the ``check-forces`` CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import SimBox
from .inference import NnInput, evaluate
from .model import NnModel


@dataclass
class ForceCheck:
    max_abs_error: float
    max_force: float
    n_checked: int

    @property
    def relative_error(self) -> float:
        """Worst component error over the largest force component."""
        return self.max_abs_error / max(self.max_force, 1e-12)


def finite_difference_forces(energy_fn, positions, atoms=None, h: float = 1e-5) -> np.ndarray:
    """Central-difference ``-dE/dr`` for the selected atoms, shape ``(len(atoms), 3)``."""
    positions = np.asarray(positions, dtype=float)
    atoms = np.arange(len(positions)) if atoms is None else np.asarray(atoms)
    out = np.zeros((len(atoms), 3))
    for row, a in enumerate(atoms):
        for axis in range(3):
            p = positions.copy()
            p[a, axis] += h
            e_plus = energy_fn(p)
            p[a, axis] -= 2.0 * h
            e_minus = energy_fn(p)
            out[row, axis] = -(e_plus - e_minus) / (2.0 * h)
    return out


def check_forces(energy_fn, positions, forces, atoms=None, h: float = 1e-5) -> ForceCheck:
    atoms = np.arange(len(positions)) if atoms is None else np.asarray(atoms)
    fd = finite_difference_forces(energy_fn, positions, atoms, h)
    analytic = np.asarray(forces)[atoms]
    return ForceCheck(float(np.max(np.abs(fd - analytic))), float(np.max(np.abs(analytic))),
                      len(atoms))


def check_model_forces(model: NnModel, positions, types, box: SimBox, atoms=None,
                       h: float = 1e-5) -> ForceCheck:
    """Compare analytic NN forces against central differences of the total energy (FP64)."""
    types = np.asarray(types)
    out = evaluate(model, NnInput(positions, types, box))
    energy = lambda p: evaluate(model, NnInput(p, types, box)).energy  # noqa: E731
    return check_forces(energy, positions, out.forces, atoms, h)


def random_cluster(n_atoms: int, n_types: int, rng: np.random.Generator, spacing: float = 0.2,
                   box_length: float | None = None):
    """Random configuration without close contacts: jittered simple-cubic sites.

    Periodic when ``box_length`` is given, otherwise an open cluster.
    """
    side = int(np.ceil(n_atoms ** (1.0 / 3.0)))
    grid = np.stack(np.meshgrid(*[np.arange(side)] * 3, indexing="ij"), -1).reshape(-1, 3)
    sites = grid[rng.permutation(len(grid))[:n_atoms]] * spacing
    pos = sites + rng.uniform(-0.2, 0.2, size=sites.shape) * spacing
    types = rng.integers(0, n_types, size=n_atoms)
    if box_length is None:
        box = SimBox(tuple(np.ptp(pos, axis=0) + 10.0), (False, False, False))
        pos = pos + 5.0
    else:
        box = SimBox((box_length,) * 3, (True, True, True))
        pos = np.mod(pos, box_length)
    return pos, types, box
