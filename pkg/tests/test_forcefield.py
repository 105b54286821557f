"""Bonded and non-bonded kernels against closed forms, finite differences and brute force."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridmd.core import SimBox, State, Topology, minimum_image
from hybridmd.errors import OverlapError
from hybridmd.forcefield import (COULOMB_PREFACTOR, CoulombParams, ForceFieldParams, LjParams,
                                 TermAccounting, angle_terms, bond_terms, bonded_forces,
                                 compute_classical, coulomb_forces, lj_forces)
from hybridmd.neighbors import brute_force_pairs, build_neighbor_list
from hybridmd.nnpot.checks import check_forces

OPEN = SimBox((10.0, 10.0, 10.0), (False, False, False))
PAIR = np.array([[0, 1]])


def _dimer(r):
    return np.array([[1.0, 1.0, 1.0], [1.0 + r, 1.0, 1.0]])


def test_bond_at_rest_length():
    f = np.zeros((2, 3))
    e, _ = bond_terms(_dimer(0.1), OPEN, PAIR, np.array([[1000.0, 0.1]]), f)
    assert e == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(f, 0.0, atol=1e-12)


def test_bond_stretched_example():
    f = np.zeros((2, 3))
    e, _ = bond_terms(_dimer(0.12), OPEN, PAIR, np.array([[1000.0, 0.1]]), f)
    assert e == pytest.approx(0.2)
    np.testing.assert_allclose(f, [[20.0, 0, 0], [-20.0, 0, 0]], atol=1e-9)


def _lj_single(r, sigma=0.3, eps=1.0, rc=0.7):
    f = np.zeros((2, 3))
    e, _ = lj_forces(_dimer(r), OPEN, PAIR, np.zeros(2, int), LjParams(sigma, eps), rc, f)
    return e, f


def test_lj_at_sigma():
    e, f = _lj_single(0.3)
    x6 = (0.3 / 0.7) ** 6
    assert e == pytest.approx(-4.0 * (x6 * x6 - x6))
    assert e == pytest.approx(0.024632, abs=1e-6)
    assert f[1, 0] == pytest.approx(80.0)  # repulsive: pushes atom 1 along +x
    assert f[0, 0] == pytest.approx(-80.0)


def test_lj_minimum_and_beyond_cutoff():
    e, f = _lj_single(2 ** (1 / 6) * 0.3)
    x6 = (0.3 / 0.7) ** 6
    assert e + 4.0 * (x6 * x6 - x6) == pytest.approx(-1.0)
    np.testing.assert_allclose(f, 0.0, atol=1e-10)
    e, f = _lj_single(0.71)
    assert e == 0.0
    np.testing.assert_array_equal(f, 0.0)


def test_lj_overlap_is_an_error():
    with pytest.raises(OverlapError):
        _lj_single(5e-5)


def test_lorentz_berthelot_tables():
    sig, eps = LjParams((0.2, 0.4), (1.0, 4.0)).tables()
    assert sig[0, 1] == pytest.approx(0.3) and eps[0, 1] == pytest.approx(2.0)


def _coulomb_single(r, q=(1.0, -1.0), scheme="cutoff_shifted", rc=0.7):
    f = np.zeros((2, 3))
    e, _ = coulomb_forces(_dimer(r), OPEN, PAIR, np.array(q), CoulombParams(scheme, rc), f)
    return e, f


def test_coulomb_cutoff_shifted_example():
    e, _ = _coulomb_single(0.5)
    assert e == pytest.approx(COULOMB_PREFACTOR * -(1 / 0.5 - 1 / 0.7))
    assert e == pytest.approx(-79.39, abs=0.01)


@pytest.mark.parametrize("scheme", ["cutoff_shifted", "reaction_field"])
def test_coulomb_neutral_pair_and_cutoff(scheme):
    e, f = _coulomb_single(0.4, q=(0.0, 1.0), scheme=scheme)
    assert e == 0.0 and not f.any()
    assert _coulomb_single(0.7 - 1e-12, scheme=scheme)[0] == pytest.approx(0.0, abs=1e-6)


def test_reaction_field_constants():
    p = CoulombParams("reaction_field", 1.0, epsilon_rf=78.0)
    assert p.k_rf == pytest.approx(77 / 157)
    assert p.c_rf == pytest.approx(1 + 77 / 157)


# -- random configurations -----------------------------------------------------------------

def _chain_topology(n, rng):
    bonds = [(i, i + 1) for i in range(n - 1)]
    angles = [(i, i + 1, i + 2) for i in range(n - 2)]
    dihedrals = [(i, i + 1, i + 2, i + 3) for i in range(n - 3)]
    return Topology(
        n_atoms=n, types=rng.integers(0, 2, n), masses=np.full(n, 12.0),
        charges=rng.uniform(-0.5, 0.5, n),
        bond_index=bonds, bond_params=[(1000.0, 0.15)] * len(bonds),
        angle_index=angles, angle_params=[(300.0, 1.9)] * len(angles),
        dihedral_index=dihedrals, dihedral_params=[(5.0, 3, 0.3)] * len(dihedrals),
        exclusions=[[j for j in range(max(0, i - 3), min(n, i + 4)) if j != i] for i in range(n)])


def _chain_positions(n, rng):
    steps = rng.normal(size=(n, 3))
    steps *= 0.15 / np.linalg.norm(steps, axis=1, keepdims=True)
    return 1.0 + np.cumsum(steps, axis=0)


@given(st.integers(4, 10), st.integers(0, 2**31))
def test_bonded_forces_sum_to_zero_and_match_gradient(n, seed):
    rng = np.random.default_rng(seed)
    topo = _chain_topology(n, rng)
    pos = _chain_positions(n, rng)
    state = State.from_positions(pos, OPEN)
    forces = np.zeros((n, 3))
    terms = bonded_forces(state, topo, forces)
    np.testing.assert_allclose(forces.sum(0), 0.0, atol=1e-8 * max(1.0, np.abs(forces).max()))

    def energy(p):
        return bonded_forces(State.from_positions(p, OPEN), topo, np.zeros((n, 3)))["total"]
    assert energy(pos) == pytest.approx(terms["total"])
    if np.abs(forces).max() > 1e-3:
        assert check_forces(energy, pos, forces).relative_error <= 1e-4


def test_collinear_angle_is_finite_and_flagged():
    pos = np.array([[0.0, 0, 0], [0.15, 0, 0], [0.3, 0, 0]]) + 1.0
    f = np.zeros((3, 3))
    acct = TermAccounting()
    e, _ = angle_terms(pos, OPEN, np.array([[0, 1, 2]]), np.array([[300.0, 2.0]]), f,
                       accounting=acct)
    assert np.isfinite(e) and np.all(np.isfinite(f))
    assert acct.collinear_angles == 1


def _lattice_system(n_side=4, spacing=0.35, seed=0):
    rng = np.random.default_rng(seed)
    n = n_side ** 3
    grid = np.stack(np.meshgrid(*[np.arange(n_side)] * 3, indexing="ij"), -1).reshape(-1, 3)
    pos = (grid + 0.5) * spacing + rng.uniform(-0.03, 0.03, (n, 3))
    charges = rng.choice([-0.5, 0.5], n)
    topo = Topology(n_atoms=n, types=rng.integers(0, 2, n), masses=np.full(n, 20.0),
                    charges=charges)
    return topo, State.from_positions(pos, SimBox.cubic(n_side * spacing))


@pytest.mark.parametrize("scheme", ["cutoff_shifted", "reaction_field"])
def test_compute_classical_matches_brute_force(scheme):
    topo, state = _lattice_system()
    rc = 0.6
    params = ForceFieldParams(LjParams((0.3, 0.32), (0.8, 0.5)), CoulombParams(scheme, rc), rc)
    report = compute_classical(state, topo, build_neighbor_list(state, topo, rc, 0.1), params)

    sig_t, eps_t = params.lj.tables()
    e_lj = e_coul = 0.0
    forces = np.zeros((topo.n_atoms, 3))
    for i in range(topo.n_atoms):
        for j in range(i + 1, topo.n_atoms):
            dr = minimum_image(state.positions[j] - state.positions[i], state.box)
            r = np.linalg.norm(dr)
            if r > rc:
                continue
            s, e = sig_t[topo.types[i], topo.types[j]], eps_t[topo.types[i], topo.types[j]]
            v = lambda x: 4 * e * ((s / x) ** 12 - (s / x) ** 6)  # noqa: E731
            e_lj += v(r) - v(rc)
            fqq = COULOMB_PREFACTOR * topo.charges[i] * topo.charges[j]
            k, c = params.coulomb.k_rf, params.coulomb.c_rf
            e_coul += fqq * (1 / r + k * r * r - c)
            fs = 24 * e * (2 * (s / r) ** 12 - (s / r) ** 6) / r ** 2 + fqq * (1 / r ** 3 - 2 * k)
            forces[j] += fs * dr
            forces[i] -= fs * dr
    assert report.lj == pytest.approx(e_lj, rel=1e-12)
    assert report.coulomb == pytest.approx(e_coul, rel=1e-12)
    np.testing.assert_allclose(state.forces, forces, rtol=1e-10, atol=1e-8)
    np.testing.assert_allclose(state.forces.sum(0), 0.0, atol=1e-8)


def test_neutral_atoms_beyond_cutoff_have_no_energy():
    topo = Topology(n_atoms=2, types=[0, 0], masses=[1, 1], charges=[0, 0])
    state = State.from_positions(np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]]), SimBox.cubic(3.0))
    params = ForceFieldParams(LjParams(0.3, 1.0), CoulombParams(), 0.7)
    report = compute_classical(state, topo, build_neighbor_list(state, topo, 0.7, 0.1), params)
    assert report.bonded == report.lj == report.coulomb == 0.0
    assert not state.forces.any()


def test_float32_agrees_with_float64():
    topo, state = _lattice_system(seed=3)
    params = ForceFieldParams(LjParams((0.3, 0.32), (0.8, 0.5)), CoulombParams(), 0.6)
    pairs = brute_force_pairs(state.positions, state.box, 0.6)
    s32 = state.copy()
    r64 = compute_classical(state, topo, pairs, params, np.float64)
    r32 = compute_classical(s32, topo, pairs, params, np.float32)
    assert r32.total_potential == pytest.approx(r64.total_potential, rel=1e-4)
    scale = np.abs(state.forces).max()
    assert np.abs(s32.forces - state.forces).max() <= 1e-3 * scale
