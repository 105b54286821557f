"""Synthetic "protein in solvent" systems.

A bonded chain (the protein analog, group ``protein``) is laid along a
boustrophedon path of a jittered cubic lattice; the remaining lattice sites
are filled with a charged Lennard-Jones fluid (group ``solvent``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import SimBox, State, Topology, maxwell_boltzmann, minimum_image
from .errors import OverlapError

PROTEIN, SOLVENT = 0, 1


@dataclass
class SyntheticParams:
    """Per-type parameters (index 0: chain atoms, index 1: solvent)."""

    sigma: tuple = (0.32, 0.30)
    epsilon: tuple = (0.40, 0.65)
    mass: tuple = (12.011, 18.015)
    charge: tuple = (0.10, 0.20)  # magnitudes; signs alternate along each species
    bond_k: float = 5.0e4
    angle_k: float = 400.0
    dihedral_k: float = 2.0
    dihedral_n: int = 3
    exclusion_bonds: int = 3  # exclude non-bonded pairs up to this many bonds apart
    jitter: float = 0.1  # uniform jitter amplitude, fraction of lattice spacing
    type_names: tuple = field(default=("CA", "OW"))
    residue_names: tuple = field(default=("PRT", "SOL"))


def snake_lattice(n_side: int) -> np.ndarray:
    """Lattice sites ordered so that consecutive sites are nearest neighbours."""
    sites = []
    line = 0
    for ix in range(n_side):
        ys = range(n_side) if ix % 2 == 0 else range(n_side - 1, -1, -1)
        for iy in ys:
            zs = range(n_side) if line % 2 == 0 else range(n_side - 1, -1, -1)
            line += 1
            for iz in zs:
                sites.append((ix, iy, iz))
    return np.array(sites, dtype=float)


def _angle(a, b, c, box):
    u = minimum_image(a - b, box)
    v = minimum_image(c - b, box)
    cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def generate_synthetic_system(n_atoms: int, density: float = 25.0, fraction_grouped: float = 0.25,
                              seed: int = 0, temperature: float = 300.0,
                              params: SyntheticParams | None = None) -> tuple[Topology, State]:
    """Build a deterministic synthetic system.

    The box is cubic with volume ``n_atoms / density``. The first
    ``ceil(fraction_grouped * n_atoms)`` atoms form the bonded chain.
    """
    if n_atoms < 2:
        raise ValueError("need at least 2 atoms")
    if density <= 0:
        raise ValueError("density must be positive")
    if not 0.0 <= fraction_grouped <= 1.0:
        raise ValueError("fraction_grouped must lie in [0, 1]")
    p = params or SyntheticParams()
    rng = np.random.default_rng(seed)

    length = (n_atoms / density) ** (1.0 / 3.0)
    n_side = math.ceil(n_atoms ** (1.0 / 3.0) - 1e-9)
    spacing = length / n_side
    if spacing < 0.8 * max(p.sigma):
        raise OverlapError(
            f"lattice spacing {spacing:.4f} nm is below 0.8*sigma = {0.8 * max(p.sigma):.4f} nm; "
            "density too high")
    box = SimBox.cubic(length)

    sites = snake_lattice(n_side)
    n_group = math.ceil(fraction_grouped * n_atoms - 1e-9)
    rest = np.arange(n_group, len(sites))
    chosen = np.sort(rng.choice(rest, size=n_atoms - n_group, replace=False))
    order = np.concatenate([np.arange(n_group), chosen]).astype(np.int64)
    jitter = rng.uniform(-p.jitter, p.jitter, size=(n_atoms, 3))
    positions = (sites[order] + 0.5 + jitter) * spacing

    types = np.where(np.arange(n_atoms) < n_group, PROTEIN, SOLVENT)
    masses = np.asarray(p.mass)[types]
    signs = np.ones(n_atoms)
    signs[1:n_group:2] = -1.0
    signs[n_group + 1::2] = -1.0
    charges = signs * np.asarray(p.charge)[types]

    bonds, bond_params = [], []
    angles, angle_params = [], []
    dihedrals, dihedral_params = [], []
    for i in range(n_group - 1):
        r0 = float(np.linalg.norm(minimum_image(positions[i + 1] - positions[i], box)))
        bonds.append((i, i + 1))
        bond_params.append((p.bond_k, r0))
    for i in range(n_group - 2):
        angles.append((i, i + 1, i + 2))
        angle_params.append((p.angle_k, _angle(positions[i], positions[i + 1],
                                               positions[i + 2], box)))
    for i in range(n_group - 3):
        dihedrals.append((i, i + 1, i + 2, i + 3))
        dihedral_params.append((p.dihedral_k, p.dihedral_n, 0.0))

    exclusions = [[] for _ in range(n_atoms)]
    for i in range(n_group):
        for j in range(i + 1, min(n_group, i + p.exclusion_bonds + 1)):
            exclusions[i].append(j)
            exclusions[j].append(i)

    topo = Topology(
        n_atoms=n_atoms, types=types, masses=masses, charges=charges,
        bond_index=bonds, bond_params=bond_params,
        angle_index=angles, angle_params=angle_params,
        dihedral_index=dihedrals, dihedral_params=dihedral_params,
        exclusions=exclusions,
        groups={"protein": list(range(n_group)), "solvent": list(range(n_group, n_atoms)),
                "system": list(range(n_atoms))},
        atom_names=[p.type_names[t] for t in types],
        residue_names=[p.residue_names[t] for t in types],
        residue_numbers=np.where(types == PROTEIN, 1, np.arange(n_atoms) - n_group + 2),
        type_names=list(p.type_names),
    )
    velocities = maxwell_boltzmann(masses, temperature, rng)
    state = State(positions, velocities, None, box)
    return topo, state.wrapped()


def lj_fluid(n_side: int, density: float, temperature: float, seed: int = 0,
             mass: float = 39.948, jitter: float = 0.02) -> tuple[Topology, State]:
    """Single-type neutral LJ fluid on a simple cubic lattice (argon-like masses)."""
    n = n_side ** 3
    length = (n / density) ** (1.0 / 3.0)
    spacing = length / n_side
    rng = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*[np.arange(n_side)] * 3, indexing="ij"), -1).reshape(-1, 3)
    positions = (grid + 0.5 + rng.uniform(-jitter, jitter, size=(n, 3))) * spacing
    masses = np.full(n, mass)
    topo = Topology(n_atoms=n, types=np.zeros(n, dtype=int), masses=masses,
                    charges=np.zeros(n), groups={"system": list(range(n))},
                    atom_names=["AR"] * n, residue_names=["AR"] * n, type_names=["AR"])
    velocities = maxwell_boltzmann(masses, temperature, rng)
    return topo, State(positions, velocities, None, SimBox.cubic(length)).wrapped()
