"""Classical short-range interactions: bonded terms, Lennard-Jones and cutoff Coulomb.

Every kernel accumulates forces (negative gradients) into a caller-supplied
array and returns ``(energy, virial)`` where ``virial = sum r_ij . F_j`` over
the interaction's atoms, with positions taken relative to a reference atom.
Kernels run in the dtype of ``dtype`` (float32 by default in the pipeline,
float64 for every oracle); energies are always reduced in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (COULOMB_PREFACTOR, EnergyReport, SimBox, State, Topology,
                   kinetic_energy, minimum_image, temperature_from_kinetic)
from .errors import OverlapError

OVERLAP_DISTANCE = 1e-4  # nm
CUTOFF_SHIFTED, REACTION_FIELD = "cutoff_shifted", "reaction_field"


@dataclass
class LjParams:
    """Per-type sigma (nm) and epsilon (kJ/mol), Lorentz-Berthelot combined."""

    sigma: tuple
    epsilon: tuple

    def __post_init__(self):
        self.sigma = tuple(float(s) for s in np.atleast_1d(self.sigma))
        self.epsilon = tuple(float(e) for e in np.atleast_1d(self.epsilon))
        if len(self.sigma) != len(self.epsilon):
            raise ValueError("sigma and epsilon need one entry per type")
        if any(s <= 0 for s in self.sigma) or any(e < 0 for e in self.epsilon):
            raise ValueError("need sigma > 0 and epsilon >= 0")

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(self.sigma)
        e = np.asarray(self.epsilon)
        return 0.5 * (s[:, None] + s[None, :]), np.sqrt(e[:, None] * e[None, :])


@dataclass
class CoulombParams:
    scheme: str = CUTOFF_SHIFTED
    rc: float = 0.7
    epsilon_rf: float = 78.0
    prefactor: float = COULOMB_PREFACTOR

    def __post_init__(self):
        if self.scheme not in (CUTOFF_SHIFTED, REACTION_FIELD):
            raise ValueError(f"unknown Coulomb scheme {self.scheme!r}")
        if self.rc <= 0:
            raise ValueError("Coulomb cutoff must be positive")
        if self.scheme == REACTION_FIELD and self.epsilon_rf < 1:
            raise ValueError("reaction-field dielectric must be >= 1")

    @property
    def k_rf(self) -> float:
        if self.scheme != REACTION_FIELD:
            return 0.0
        e = self.epsilon_rf
        return (e - 1.0) / ((2.0 * e + 1.0) * self.rc ** 3)

    @property
    def c_rf(self) -> float:
        return 1.0 / self.rc + self.k_rf * self.rc ** 2


@dataclass
class ForceFieldParams:
    lj: LjParams
    coulomb: CoulombParams = field(default_factory=CoulombParams)
    rc: float = 0.7

    def with_cutoff(self, rc: float) -> "ForceFieldParams":
        return ForceFieldParams(self.lj, CoulombParams(self.coulomb.scheme, rc,
                                                       self.coulomb.epsilon_rf,
                                                       self.coulomb.prefactor), rc)


@dataclass
class TermAccounting:
    """Records exactly which terms a classical evaluation touched."""

    bonds: list = field(default_factory=list)
    angles: list = field(default_factory=list)
    dihedrals: list = field(default_factory=list)
    lj_pairs: list = field(default_factory=list)
    coulomb_pairs: list = field(default_factory=list)
    collinear_angles: int = 0


def _scatter(forces, index, vectors):
    n = len(forces)
    for axis in range(3):
        forces[:, axis] += np.bincount(index, weights=vectors[:, axis], minlength=n)


def _pair_geometry(positions, box, pairs, dtype):
    pos = np.asarray(positions, dtype=dtype)
    i, j = pairs[:, 0], pairs[:, 1]
    dr = minimum_image(pos[j] - pos[i], box).astype(dtype, copy=False)
    r2 = np.einsum("ij,ij->i", dr, dr)
    return i, j, dr, r2


def bond_terms(positions, box, index, params, forces, dtype=np.float64,
               accounting: TermAccounting | None = None):
    dtype = np.dtype(dtype).type
    if len(index) == 0:
        return 0.0, 0.0
    pos = np.asarray(positions, dtype=dtype)
    i, j = index[:, 0], index[:, 1]
    k = params[:, 0].astype(dtype)
    r0 = params[:, 1].astype(dtype)
    dr = minimum_image(pos[j] - pos[i], box).astype(dtype, copy=False)
    r = np.sqrt(np.einsum("ij,ij->i", dr, dr))
    if np.any(r < OVERLAP_DISTANCE):
        raise OverlapError("bonded atoms coincide")
    ext = r - r0
    energy = float(np.sum(0.5 * k * ext * ext, dtype=np.float64))
    fj = (-k * ext / r)[:, None] * dr
    _scatter(forces, j, fj)
    _scatter(forces, i, -fj)
    if accounting is not None:
        accounting.bonds.extend(map(tuple, index.tolist()))
    return energy, float(np.sum(fj * dr, dtype=np.float64))


def angle_terms(positions, box, index, params, forces, dtype=np.float64,
                accounting: TermAccounting | None = None):
    """Harmonic angle potential 1/2 k (theta - theta0)^2; atom j is the vertex."""
    dtype = np.dtype(dtype).type
    if len(index) == 0:
        return 0.0, 0.0
    pos = np.asarray(positions, dtype=dtype)
    i, j, k = index[:, 0], index[:, 1], index[:, 2]
    ka = params[:, 0].astype(dtype)
    t0 = params[:, 1].astype(dtype)
    a = minimum_image(pos[i] - pos[j], box).astype(dtype, copy=False)
    b = minimum_image(pos[k] - pos[j], box).astype(dtype, copy=False)
    la = np.sqrt(np.einsum("ij,ij->i", a, a))
    lb = np.sqrt(np.einsum("ij,ij->i", b, b))
    cos = np.clip(np.einsum("ij,ij->i", a, b) / (la * lb), -1.0, 1.0)
    theta = np.arccos(cos)
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    collinear = sin < 1e-9
    sin = np.where(collinear, 1e-9, sin)
    dE_dtheta = ka * (theta - t0)
    energy = float(np.sum(0.5 * ka * (theta - t0) ** 2, dtype=np.float64))
    # dtheta/dcos = -1/sin
    pref = (dE_dtheta / sin)[:, None]
    dcos_da = b / (la * lb)[:, None] - cos[:, None] * a / (la * la)[:, None]
    dcos_db = a / (la * lb)[:, None] - cos[:, None] * b / (lb * lb)[:, None]
    fi = pref * dcos_da
    fk = pref * dcos_db
    _scatter(forces, i, fi)
    _scatter(forces, k, fk)
    _scatter(forces, j, -(fi + fk))
    if accounting is not None:
        accounting.angles.extend(map(tuple, index.tolist()))
        accounting.collinear_angles += int(collinear.sum())
    return energy, float(np.sum(fi * a + fk * b, dtype=np.float64))


def dihedral_terms(positions, box, index, params, forces, dtype=np.float64,
                   accounting: TermAccounting | None = None):
    """Periodic proper dihedral k (1 + cos(n phi - phi_s))."""
    dtype = np.dtype(dtype).type
    if len(index) == 0:
        return 0.0, 0.0
    pos = np.asarray(positions, dtype=dtype)
    i, j, k, l = index.T
    kd = params[:, 0].astype(dtype)
    mult = params[:, 1].astype(dtype)
    phase = params[:, 2].astype(dtype)
    r_ij = minimum_image(pos[i] - pos[j], box).astype(dtype, copy=False)
    r_kj = minimum_image(pos[k] - pos[j], box).astype(dtype, copy=False)
    r_kl = minimum_image(pos[k] - pos[l], box).astype(dtype, copy=False)
    m = np.cross(r_ij, r_kj)
    nv = np.cross(r_kj, r_kl)
    m2 = np.einsum("ij,ij->i", m, m)
    n2 = np.einsum("ij,ij->i", nv, nv)
    kj2 = np.einsum("ij,ij->i", r_kj, r_kj)
    kj = np.sqrt(kj2)
    tiny = np.finfo(dtype).tiny
    m2 = np.maximum(m2, tiny)
    n2 = np.maximum(n2, tiny)
    phi = np.arctan2(kj * np.einsum("ij,ij->i", r_ij, nv), np.einsum("ij,ij->i", m, nv))
    arg = mult * phi - phase
    energy = float(np.sum(kd * (1.0 + np.cos(arg)), dtype=np.float64))
    ddphi = -kd * mult * np.sin(arg)
    f_i = (-ddphi * kj / m2)[:, None] * m
    f_l = (ddphi * kj / n2)[:, None] * nv
    p = (np.einsum("ij,ij->i", r_ij, r_kj) / kj2)[:, None]
    q = (np.einsum("ij,ij->i", r_kl, r_kj) / kj2)[:, None]
    svec = p * f_i - q * f_l
    f_j = f_i - svec
    f_k = f_l + svec
    # atom forces: i gets f_i, j gets -f_j, k gets -f_k, l gets f_l
    _scatter(forces, i, f_i)
    _scatter(forces, j, -f_j)
    _scatter(forces, k, -f_k)
    _scatter(forces, l, f_l)
    if accounting is not None:
        accounting.dihedrals.extend(map(tuple, index.tolist()))
    # positions relative to atom j: x_i - x_j = r_ij, x_k - x_j = r_kj, x_l - x_j = r_kj - r_kl
    virial = np.sum(f_i * r_ij - f_k * r_kj + f_l * (r_kj - r_kl), dtype=np.float64)
    return energy, float(virial)


def bonded_forces(state: State, topo: Topology, forces=None, dtype=np.float64,
                  accounting: TermAccounting | None = None) -> dict:
    """Bond, angle and dihedral energies; forces accumulated into ``forces``.

    ``forces`` defaults to ``state.forces``. Returns a dict with keys
    ``bond``, ``angle``, ``dihedral``, ``total`` and ``virial``.
    """
    if forces is None:
        forces = state.forces
    eb, vb = bond_terms(state.positions, state.box, topo.bond_index, topo.bond_params, forces,
                        dtype, accounting)
    ea, va = angle_terms(state.positions, state.box, topo.angle_index, topo.angle_params,
                         forces, dtype, accounting)
    ed, vd = dihedral_terms(state.positions, state.box, topo.dihedral_index,
                            topo.dihedral_params, forces, dtype, accounting)
    return {"bond": eb, "angle": ea, "dihedral": ed, "total": eb + ea + ed,
            "virial": vb + va + vd}


def lj_forces(positions, box: SimBox, pairs, types, lj: LjParams, rc: float, forces,
              dtype=np.float64, accounting: TermAccounting | None = None):
    """Potential-shifted Lennard-Jones over a half pair list.

    V(r) = 4 eps [(s/r)^12 - (s/r)^6] - V(rc) for r <= rc, zero beyond.
    Returns ``(energy, virial)``.
    """
    dtype = np.dtype(dtype).type
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return 0.0, 0.0
    i, j, dr, r2 = _pair_geometry(positions, box, pairs, dtype)
    inside = r2 <= dtype(rc) * dtype(rc)
    i, j, dr, r2 = i[inside], j[inside], dr[inside], r2[inside]
    if len(i) == 0:
        return 0.0, 0.0
    if np.any(r2 < OVERLAP_DISTANCE ** 2):
        bad = int(np.argmin(r2))
        raise OverlapError(f"atoms {i[bad]} and {j[bad]} are {np.sqrt(r2[bad]):.2e} nm apart")
    sig_t, eps_t = lj.tables()
    ti, tj = types[i], types[j]
    sig = sig_t[ti, tj].astype(dtype)
    eps = eps_t[ti, tj].astype(dtype)
    sr2 = sig * sig / r2
    sr6 = sr2 * sr2 * sr2
    sr12 = sr6 * sr6
    src6 = (sig / dtype(rc)) ** 6
    shift = 4.0 * eps * (src6 * src6 - src6)
    energy = float(np.sum(4.0 * eps * (sr12 - sr6) - shift, dtype=np.float64))
    fscal = 24.0 * eps * (2.0 * sr12 - sr6) / r2
    fj = fscal[:, None] * dr
    _scatter(forces, j, fj)
    _scatter(forces, i, -fj)
    if accounting is not None:
        accounting.lj_pairs.extend(map(tuple, np.stack([i, j], 1).tolist()))
    return energy, float(np.sum(fscal * r2, dtype=np.float64))


def coulomb_forces(positions, box: SimBox, pairs, charges, params: CoulombParams, forces,
                   dtype=np.float64, accounting: TermAccounting | None = None):
    """Short-range Coulomb with a potential shift or reaction field; V(rc) = 0."""
    dtype = np.dtype(dtype).type
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return 0.0, 0.0
    qq_all = charges[pairs[:, 0]] * charges[pairs[:, 1]]
    pairs = pairs[qq_all != 0.0]
    if len(pairs) == 0:
        return 0.0, 0.0
    i, j, dr, r2 = _pair_geometry(positions, box, pairs, dtype)
    inside = r2 <= dtype(params.rc) * dtype(params.rc)
    i, j, dr, r2 = i[inside], j[inside], dr[inside], r2[inside]
    if len(i) == 0:
        return 0.0, 0.0
    if np.any(r2 < OVERLAP_DISTANCE ** 2):
        bad = int(np.argmin(r2))
        raise OverlapError(f"atoms {i[bad]} and {j[bad]} are {np.sqrt(r2[bad]):.2e} nm apart")
    fqq = (params.prefactor * charges[i] * charges[j]).astype(dtype)
    r = np.sqrt(r2)
    k_rf, c_rf = dtype(params.k_rf), dtype(params.c_rf)
    energy = float(np.sum(fqq * (1.0 / r + k_rf * r2 - c_rf), dtype=np.float64))
    fscal = fqq * (1.0 / (r2 * r) - 2.0 * k_rf)
    fj = fscal[:, None] * dr
    _scatter(forces, j, fj)
    _scatter(forces, i, -fj)
    if accounting is not None:
        accounting.coulomb_pairs.extend(map(tuple, np.stack([i, j], 1).tolist()))
    return energy, float(np.sum(fscal * r2, dtype=np.float64))


def nonbonded_forces(positions, box, pairs, topo: Topology, params: ForceFieldParams, forces,
                     dtype=np.float64, accounting=None):
    elj, vlj = lj_forces(positions, box, pairs, topo.types, params.lj, params.rc, forces, dtype,
                         accounting)
    ecoul, vcoul = coulomb_forces(positions, box, pairs, topo.charges, params.coulomb, forces,
                                  dtype, accounting)
    return elj, ecoul, vlj + vcoul


def compute_classical(state: State, topo: Topology, nlist, params: ForceFieldParams,
                      dtype=np.float64, accounting: TermAccounting | None = None
                      ) -> EnergyReport:
    """Zero ``state.forces`` and fill them with bonded + LJ + Coulomb forces.

    ``nlist`` is a :class:`~hybridmd.neighbors.NeighborList` (or a bare
    half pair array) that must be current for ``state``.
    """
    pairs = nlist.half_pairs() if hasattr(nlist, "half_pairs") else np.asarray(nlist)
    state.forces[:] = 0.0
    forces = np.zeros((state.n_atoms, 3), dtype=np.float64)
    bonded = bonded_forces(state, topo, forces, dtype, accounting)
    elj, ecoul, vnb = nonbonded_forces(state.positions, state.box, pairs, topo, params, forces,
                                       dtype, accounting)
    state.forces[:] = forces
    ke = kinetic_energy(state.velocities, topo.masses)
    temp = temperature_from_kinetic(ke, topo.n_atoms) if topo.n_atoms >= 2 else 0.0
    return EnergyReport(bonded=bonded["total"], lj=elj, coulomb=ecoul, nn=0.0, kinetic=ke,
                        temperature=temp, virial=bonded["virial"] + vnb)
