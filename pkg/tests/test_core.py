"""Core data model: box geometry, temperature, .gro I/O and the synthetic generator."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hybridmd.core import (KB, SimBox, State, Topology, kinetic_energy_and_temperature,
                           maxwell_boltzmann, minimum_image, remove_com_motion, temperature_from_kinetic,
                           wrap_positions)
from hybridmd.errors import DegreesOfFreedomError, GroParseError, OverlapError
from hybridmd.gro import read_gro, write_gro
from hybridmd.synthetic import generate_synthetic_system

UNIT = SimBox.cubic(1.0)


def _topo(n, masses=None):
    return Topology(n_atoms=n, types=np.zeros(n, int),
                    masses=np.ones(n) if masses is None else masses, charges=np.zeros(n))


# -- minimum image -------------------------------------------------------------------

@pytest.mark.parametrize("dr,expected", [
    ((0.9, 0, 0), (-0.1, 0, 0)),
    ((0.3, 0.3, 0.3), (0.3, 0.3, 0.3)),
    ((-0.7, 0.55, 0), (0.3, -0.45, 0)),
])
def test_minimum_image_examples(dr, expected):
    np.testing.assert_allclose(minimum_image(np.array(dr, float), UNIT), expected, atol=1e-12)


def test_minimum_image_leaves_open_axes_alone():
    box = SimBox((1.0, 1.0, 1.0), (True, False, True))
    np.testing.assert_allclose(minimum_image(np.array([0.9, 0.9, 0.9]), box), [-0.1, 0.9, -0.1])


finite = st.floats(-10, 10, allow_nan=False)


@given(arrays(float, 3, elements=finite), st.floats(0.5, 4.0))
def test_minimum_image_is_shortest_of_all_27_shifts(dr, length):
    box = SimBox.cubic(length)
    folded = minimum_image(dr, box)
    assert np.all(np.abs(folded) <= length / 2 + 1e-9)
    shifts = np.stack(np.meshgrid(*[[-1, 0, 1]] * 3, indexing="ij"), -1).reshape(-1, 3)
    candidates = folded + shifts * length
    assert np.linalg.norm(folded) <= np.min(np.linalg.norm(candidates, axis=1)) + 1e-9
    # folding only ever adds whole box vectors
    k = (dr - folded) / length
    np.testing.assert_allclose(k, np.round(k), atol=1e-6)


@given(arrays(float, (5, 3), elements=finite), st.floats(0.5, 4.0))
def test_wrap_positions_into_primary_cell(pos, length):
    box = SimBox.cubic(length)
    wrapped = wrap_positions(pos, box)
    assert np.all(wrapped >= 0) and np.all(wrapped < length)
    np.testing.assert_allclose(minimum_image(wrapped - pos, box), 0.0, atol=1e-9)


def test_box_validation():
    with pytest.raises(ValueError):
        SimBox((1.0, 0.0, 1.0))
    assert SimBox.cubic(2.0).volume == pytest.approx(8.0)
    assert SimBox.cubic(2.0).scaled(1.5).lengths == (3.0, 3.0, 3.0)


# -- temperature ---------------------------------------------------------------------

def test_temperature_zero_velocities():
    state = State.from_positions(np.zeros((3, 3)), UNIT)
    assert kinetic_energy_and_temperature(state, _topo(3)) == (0.0, 0.0)


def test_temperature_two_atom_example():
    state = State(np.zeros((2, 3)), np.array([[1.0, 0, 0], [-1.0, 0, 0]]), None, UNIT)
    ke, t = kinetic_energy_and_temperature(state, _topo(2))
    assert ke == pytest.approx(1.0)
    assert t == pytest.approx(2.0 / (3 * KB))
    assert t == pytest.approx(80.18, abs=0.01)


def test_temperature_needs_two_atoms():
    with pytest.raises(DegreesOfFreedomError):
        kinetic_energy_and_temperature(State.from_positions(np.zeros((1, 3)), UNIT), _topo(1))


@given(st.integers(2, 60), st.floats(1.0, 1000.0), st.integers(0, 2**31))
def test_maxwell_boltzmann_hits_target_and_is_com_free(n, temperature, seed):
    rng = np.random.default_rng(seed)
    masses = rng.uniform(1, 40, n)
    v = maxwell_boltzmann(masses, temperature, rng)
    np.testing.assert_allclose((masses[:, None] * v).sum(0), 0.0, atol=1e-9 * masses.sum())
    ke = 0.5 * np.sum(masses[:, None] * v * v)
    assert temperature_from_kinetic(ke, n) == pytest.approx(temperature, rel=1e-9)


def test_remove_com_motion():
    v = remove_com_motion(np.ones((4, 3)), np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(v, 0.0, atol=1e-15)


# -- topology exclusions ---------------------------------------------------------------

def test_topology_excluded_combines_explicit_and_block():
    topo = Topology(n_atoms=5, types=[0] * 5, masses=[1] * 5, charges=[0] * 5,
                    exclusions=[[1], [0], [], [], []],
                    block_excluded=[False, False, True, True, True])
    pairs = np.array([[0, 1], [1, 0], [0, 2], [2, 3], [3, 4], [1, 4]])
    assert topo.excluded(pairs).tolist() == [True, True, False, True, True, False]
    clone = topo.copy()
    clone.block_excluded[:] = False
    assert topo.block_excluded[2]


# -- .gro ------------------------------------------------------------------------------

def _one_atom_gro():
    return ("one atom\n    1\n"
            "    1SOL     OW    1   1.234   0.000   5.678\n"
            "   6.00000   6.00000   6.00000\n")


def test_read_gro_single_atom():
    atoms, state = read_gro(_one_atom_gro())
    np.testing.assert_allclose(state.positions[0], [1.234, 0.0, 5.678])
    assert atoms.atom_names == ["OW"] and atoms.residue_names == ["SOL"]
    assert atoms.title == "one atom"
    np.testing.assert_array_equal(state.velocities, 0.0)


def test_gro_round_trip_within_rounding():
    rng = np.random.default_rng(3)
    box = SimBox((3.0, 4.0, 5.0))
    pos = rng.uniform(0, 1, (100, 3)) * box.array
    vel = rng.normal(size=(100, 3))
    text = write_gro(State(pos, vel, None, box), [f"C{i % 7}" for i in range(100)])
    atoms, state = read_gro(text)
    assert np.max(np.abs(minimum_image(state.positions - pos, box))) <= 5e-4
    assert np.max(np.abs(state.velocities - vel)) <= 5e-5
    assert state.box.lengths == box.lengths
    assert write_gro(state, atoms) == text


@pytest.mark.parametrize("text,line", [
    ("t\n    3\n    1SOL     OW    1   1.234   0.000   5.678\n"
     "    1SOL     OW    2   1.234   0.000   5.678\n   6.0   6.0   6.0\n", None),
    ("t\n  abc\n   6.0   6.0   6.0\n", 2),
    ("t\n    1\n    1SOL     OW    1   1.234   x.xxx   5.678\n   6.0 6.0 6.0\n", 3),
    ("t\n    1\n    1SOL     OW    1   1.234\n   6.0 6.0 6.0\n", 3),
    ("t\n    1\n    1SOL     OW    1   1.234   0.000   5.678\n   6.0 6.0\n", 4),
    ("t\n    1\n    1SOL     OW    1   1.234   0.000   5.678\n   6.0 6.0 6.0 0.1 0 0 0 0 0\n", 4),
    ("t\n", None),
])
def test_read_gro_errors_carry_line_numbers(text, line):
    with pytest.raises(GroParseError) as info:
        read_gro(text)
    if line is not None:
        assert info.value.line == line


# -- synthetic systems -------------------------------------------------------------------

def test_synthetic_is_deterministic():
    t1, s1 = generate_synthetic_system(582, seed=7)
    t2, s2 = generate_synthetic_system(582, seed=7)
    np.testing.assert_array_equal(s1.positions, s2.positions)
    np.testing.assert_array_equal(s1.velocities, s2.velocities)
    np.testing.assert_array_equal(t1.bond_index, t2.bond_index)
    np.testing.assert_array_equal(t1.charges, t2.charges)
    assert t1.groups == t2.groups


def test_synthetic_without_group_has_no_bonded_terms():
    topo, _ = generate_synthetic_system(200, fraction_grouped=0.0, seed=1)
    assert len(topo.bond_index) == len(topo.angle_index) == len(topo.dihedral_index) == 0
    assert topo.groups["protein"] == []


def test_synthetic_box_from_density():
    _, state = generate_synthetic_system(1231, density=33.4, seed=0)
    assert state.box.lengths[0] == pytest.approx((1231 / 33.4) ** (1 / 3))
    assert state.box.lengths[0] == pytest.approx(3.328, abs=1e-3)


def test_synthetic_too_dense_is_an_overlap_error():
    with pytest.raises(OverlapError):
        generate_synthetic_system(500, density=200.0, seed=0)


def test_synthetic_system_is_neutral_and_valid():
    topo, state = generate_synthetic_system(582, seed=3)
    topo.validate()
    assert abs(topo.charges.sum()) < 1e-9
    assert np.all(state.positions >= 0) and np.all(state.positions < state.box.array)
