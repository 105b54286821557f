"""Units, periodic box geometry and the topology/state containers.

All quantities use the GROMACS unit system: nm, ps, kJ/mol, amu, e, K.
With these choices amu*nm^2/ps^2 is exactly kJ/mol, so integrators need no
conversion factors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegreesOfFreedomError

KB = 0.008314462618  # kJ mol^-1 K^-1
COULOMB_PREFACTOR = 138.935458  # kJ mol^-1 nm e^-2
BAR_PER_KJ_MOL_NM3 = 16.6054


@dataclass(frozen=True)
class UnitSystem:
    length: str = "nm"
    time: str = "ps"
    energy: str = "kJ/mol"
    mass: str = "amu"
    charge: str = "e"
    temperature: str = "K"
    force: str = "kJ/mol/nm"
    kB: float = KB


UNITS = UnitSystem()


@dataclass(frozen=True)
class SimBox:
    """Orthorhombic simulation box."""

    lengths: tuple[float, float, float]
    periodic: tuple[bool, bool, bool] = (True, True, True)

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        if len(lengths) != 3 or not all(x > 0 for x in lengths):
            raise ValueError(f"box lengths must be three positive numbers, got {self.lengths}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))

    @classmethod
    def cubic(cls, length: float) -> "SimBox":
        return cls((length, length, length))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float)

    @property
    def volume(self) -> float:
        a, b, c = self.lengths
        return a * b * c

    def scaled(self, mu: float) -> "SimBox":
        return SimBox(tuple(mu * x for x in self.lengths), self.periodic)

    def with_periodic(self, periodic) -> "SimBox":
        return SimBox(self.lengths, tuple(periodic))


def minimum_image(dr, box: SimBox) -> np.ndarray:
    """Fold displacement vectors (shape ``(..., 3)``) to their nearest image.

    Only periodic axes are folded; the others pass through unchanged.
    """
    dr = np.array(dr, dtype=np.result_type(dr, np.float32), copy=True)
    lengths = np.asarray(box.lengths, dtype=dr.dtype)
    for axis in range(3):
        if box.periodic[axis]:
            length = lengths[axis]
            dr[..., axis] -= length * np.round(dr[..., axis] / length)
    return dr


def wrap_positions(positions: np.ndarray, box: SimBox) -> np.ndarray:
    out = np.array(positions, dtype=float, copy=True)
    for axis in range(3):
        if box.periodic[axis]:
            out[:, axis] = np.mod(out[:, axis], box.lengths[axis])
            # np.mod can return exactly L for tiny negative inputs
            out[out[:, axis] >= box.lengths[axis], axis] = 0.0
    return out + 0.0


def _as_index_array(rows, width):
    arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, width), dtype=np.int64)
    return arr.reshape(-1, width)


def _as_param_array(rows, width):
    arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        return np.zeros((0, width), dtype=float)
    return arr.reshape(-1, width)


@dataclass
class Topology:
    """Atoms, bonded terms, exclusions and named atom groups.

    Bonded terms are stored as index arrays plus parameter arrays so the
    force kernels can vectorize over them:

    * ``bond_index`` ``(nb, 2)``, ``bond_params`` ``(nb, 2)`` = (k_b, r0)
    * ``angle_index`` ``(na, 3)``, ``angle_params`` ``(na, 2)`` = (k_a, theta0)
    * ``dihedral_index`` ``(nd, 4)``, ``dihedral_params`` ``(nd, 3)`` = (k_d, n, phase)
    """

    n_atoms: int
    types: np.ndarray
    masses: np.ndarray
    charges: np.ndarray
    bond_index: np.ndarray = None
    bond_params: np.ndarray = None
    angle_index: np.ndarray = None
    angle_params: np.ndarray = None
    dihedral_index: np.ndarray = None
    dihedral_params: np.ndarray = None
    exclusions: list = None
    block_excluded: np.ndarray = None  # atoms whose mutual non-bonded pairs are all excluded
    groups: dict = field(default_factory=dict)
    atom_names: list = None
    residue_names: list = None
    residue_numbers: np.ndarray = None
    type_names: list = None

    def __post_init__(self):
        n = int(self.n_atoms)
        self.n_atoms = n
        self.types = np.asarray(self.types, dtype=np.int64).reshape(n)
        self.masses = np.asarray(self.masses, dtype=float).reshape(n)
        self.charges = np.asarray(self.charges, dtype=float).reshape(n)
        self.bond_index = _as_index_array(self.bond_index if self.bond_index is not None else [], 2)
        self.bond_params = _as_param_array(self.bond_params if self.bond_params is not None else [], 2)
        self.angle_index = _as_index_array(self.angle_index if self.angle_index is not None else [], 3)
        self.angle_params = _as_param_array(self.angle_params if self.angle_params is not None else [], 2)
        self.dihedral_index = _as_index_array(
            self.dihedral_index if self.dihedral_index is not None else [], 4)
        self.dihedral_params = _as_param_array(
            self.dihedral_params if self.dihedral_params is not None else [], 3)
        if self.exclusions is None:
            self.exclusions = [[] for _ in range(n)]
        self.exclusions = [sorted(set(int(j) for j in ex)) for ex in self.exclusions]
        self.block_excluded = (np.zeros(n, dtype=bool) if self.block_excluded is None
                               else np.asarray(self.block_excluded, dtype=bool).reshape(n))
        self.groups = {name: sorted(set(int(i) for i in idx)) for name, idx in self.groups.items()}
        if self.atom_names is None:
            self.atom_names = [f"A{t}" for t in self.types]
        if self.residue_names is None:
            self.residue_names = ["RES"] * n
        if self.residue_numbers is None:
            self.residue_numbers = np.arange(1, n + 1)
        self.residue_numbers = np.asarray(self.residue_numbers, dtype=np.int64)
        self._exclusion_keys = None

    @property
    def n_types(self) -> int:
        return int(self.types.max()) + 1 if self.n_atoms else 0

    @property
    def bonds(self) -> list:
        return [(int(i), int(j), float(k), float(r0))
                for (i, j), (k, r0) in zip(self.bond_index, self.bond_params)]

    @property
    def angles(self) -> list:
        return [(int(i), int(j), int(k), float(ka), float(t0))
                for (i, j, k), (ka, t0) in zip(self.angle_index, self.angle_params)]

    @property
    def dihedrals(self) -> list:
        return [(int(i), int(j), int(k), int(l), float(kd), int(n), float(ph))
                for (i, j, k, l), (kd, n, ph) in zip(self.dihedral_index, self.dihedral_params)]

    def exclusion_keys(self) -> np.ndarray:
        """Sorted ``i * n_atoms + j`` keys (i < j) of every excluded pair."""
        if self._exclusion_keys is None:
            n = self.n_atoms
            keys = [i * n + j for i, ex in enumerate(self.exclusions) for j in ex if j > i]
            self._exclusion_keys = np.array(sorted(keys), dtype=np.int64)
        return self._exclusion_keys

    def excluded(self, pairs: np.ndarray) -> np.ndarray:
        """Boolean mask over ``pairs``: explicit exclusions or both atoms block-excluded."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        i, j = pairs[:, 0], pairs[:, 1]
        out = self.block_excluded[i] & self.block_excluded[j]
        keys = self.exclusion_keys()
        if keys.size:
            n = self.n_atoms
            out |= np.isin(np.minimum(i, j) * n + np.maximum(i, j), keys)
        return out

    def validate(self) -> None:
        n = self.n_atoms
        for name in ("types", "masses", "charges"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has wrong length")
        for name in ("bond_index", "angle_index", "dihedral_index"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"{name} references an atom outside [0, {n})")
            for row in idx:
                if len(set(row.tolist())) != len(row):
                    raise ValueError(f"{name} term {row.tolist()} repeats an atom")
        for i, ex in enumerate(self.exclusions):
            for j in ex:
                if not 0 <= j < n or j == i:
                    raise ValueError(f"bad exclusion {i}-{j}")
                if i not in self.exclusions[j]:
                    raise ValueError(f"exclusion {i}-{j} is not symmetric")
        for name, idx in self.groups.items():
            if idx and (idx[0] < 0 or idx[-1] >= n):
                raise ValueError(f"group {name!r} references an atom outside [0, {n})")

    def copy(self) -> "Topology":
        return dataclasses.replace(
            self,
            bond_index=self.bond_index.copy(), bond_params=self.bond_params.copy(),
            angle_index=self.angle_index.copy(), angle_params=self.angle_params.copy(),
            dihedral_index=self.dihedral_index.copy(),
            dihedral_params=self.dihedral_params.copy(),
            exclusions=[list(ex) for ex in self.exclusions],
            block_excluded=self.block_excluded.copy(),
            groups={k: list(v) for k, v in self.groups.items()},
            atom_names=list(self.atom_names), residue_names=list(self.residue_names),
            residue_numbers=self.residue_numbers.copy(),
            type_names=None if self.type_names is None else list(self.type_names),
        )


@dataclass
class State:
    positions: np.ndarray
    velocities: np.ndarray
    forces: np.ndarray
    box: SimBox
    step: int = 0
    time: float = 0.0
    potential_energy: float = float("nan")

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        n = len(self.positions)
        self.velocities = (np.zeros((n, 3)) if self.velocities is None
                           else np.asarray(self.velocities, dtype=float))
        self.forces = (np.zeros((n, 3)) if self.forces is None
                       else np.asarray(self.forces, dtype=float))
        if not (self.positions.shape == self.velocities.shape == self.forces.shape == (n, 3)):
            raise ValueError("positions, velocities and forces must all be (n_atoms, 3)")

    @classmethod
    def from_positions(cls, positions, box: SimBox, velocities=None) -> "State":
        return cls(np.asarray(positions, dtype=float), velocities, None, box)

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    def copy(self) -> "State":
        return State(self.positions.copy(), self.velocities.copy(), self.forces.copy(),
                     self.box, self.step, self.time, self.potential_energy)

    def wrapped(self) -> "State":
        out = self.copy()
        out.positions = wrap_positions(self.positions, self.box)
        return out


@dataclass
class EnergyReport:
    bonded: float = 0.0
    lj: float = 0.0
    coulomb: float = 0.0
    nn: float = 0.0
    kinetic: float = 0.0
    temperature: float = 0.0
    virial: float = 0.0  # sum over interactions of r_ij . F_ij, used for pressure

    @property
    def total_potential(self) -> float:
        return self.bonded + self.lj + self.coulomb + self.nn

    @property
    def total(self) -> float:
        return self.total_potential + self.kinetic

    FIELDS = ("bonded", "lj", "coulomb", "nn", "kinetic", "total_potential", "temperature")

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}


def kinetic_energy(velocities: np.ndarray, masses: np.ndarray) -> float:
    return 0.5 * float(np.sum(masses[:, None] * velocities * velocities))


def degrees_of_freedom(n_atoms: int) -> int:
    if n_atoms < 2:
        raise DegreesOfFreedomError(
            f"temperature undefined for {n_atoms} atom(s) once centre-of-mass motion is removed")
    return 3 * n_atoms - 3


def temperature_from_kinetic(ke: float, n_atoms: int) -> float:
    return 2.0 * ke / (degrees_of_freedom(n_atoms) * KB)


def kinetic_energy_and_temperature(state: State, topo: Topology) -> tuple[float, float]:
    """Kinetic energy (kJ/mol) and instantaneous temperature (K).

    Three centre-of-mass degrees of freedom are removed; there are no
    constraints, so Ndf = 3N - 3.
    """
    if not np.all(np.isfinite(state.velocities)):
        raise ValueError("non-finite velocities")
    ke = kinetic_energy(state.velocities, topo.masses)
    return ke, temperature_from_kinetic(ke, topo.n_atoms)


def remove_com_motion(velocities: np.ndarray, masses: np.ndarray) -> np.ndarray:
    p = (masses[:, None] * velocities).sum(axis=0)
    return velocities - p / masses.sum()


def maxwell_boltzmann(masses: np.ndarray, temperature: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Velocities drawn at ``temperature``, COM-free and rescaled to it exactly."""
    n = len(masses)
    v = rng.normal(size=(n, 3)) * np.sqrt(KB * temperature / masses)[:, None]
    v = remove_com_motion(v, masses)
    if temperature > 0 and n >= 2:
        current = temperature_from_kinetic(kinetic_energy(v, masses), n)
        if current > 0:
            v *= np.sqrt(temperature / current)
    else:
        v[:] = 0.0
    return v


def as_index_list(indices: Sequence[int]) -> np.ndarray:
    return np.asarray(sorted(set(int(i) for i in indices)), dtype=np.int64)
