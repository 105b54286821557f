"""Cell lists, Verlet lists, rebuild trigger and exclusions."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridmd.core import SimBox, State, Topology
from hybridmd.errors import GeometryError
from hybridmd.neighbors import (apply_exclusions, brute_force_pairs, build_neighbor_list,
                                needs_rebuild, pairs_within)


def _pair_set(pairs):
    return {tuple(sorted(p)) for p in np.asarray(pairs).tolist()}


def _dimer(distance, length=3.0):
    pos = np.array([[0.5, 0.5, 0.5], [0.5 + distance, 0.5, 0.5]])
    return State.from_positions(pos, SimBox.cubic(length))


@pytest.mark.parametrize("distance,count", [(0.65, 1), (0.85, 0)])
def test_dimer_examples(distance, count):
    assert build_neighbor_list(_dimer(distance), None, 0.7, 0.1).n_pairs == count


def test_random_system_matches_brute_force():
    rng = np.random.default_rng(0)
    box = SimBox.cubic(2.0)
    pos = rng.uniform(0, 2.0, (100, 3))
    nlist = build_neighbor_list(State.from_positions(pos, box), None, 0.7, 0.1)
    assert _pair_set(nlist.pairs) == _pair_set(brute_force_pairs(pos, box, 0.8))


def test_full_mode_holds_both_directions():
    rng = np.random.default_rng(1)
    state = State.from_positions(rng.uniform(0, 2.0, (60, 3)), SimBox.cubic(2.0))
    half = build_neighbor_list(state, None, 0.5, 0.1)
    full = build_neighbor_list(state, None, 0.5, 0.1, mode="full")
    assert full.n_pairs == 2 * half.n_pairs
    np.testing.assert_array_equal(full.half_pairs(), half.pairs[np.lexsort(half.pairs.T[::-1])])


def test_cutoff_too_large_for_box():
    with pytest.raises(GeometryError):
        build_neighbor_list(_dimer(0.5, length=1.5), None, 0.7, 0.1)


def test_open_boundaries_allow_long_cutoffs():
    box = SimBox((1.0, 1.0, 1.0), (False, False, False))
    pos = np.array([[0.0, 0, 0], [0.95, 0, 0]])
    assert _pair_set(pairs_within(pos, box, 1.0)) == {(0, 1)}


@given(st.integers(0, 120), st.floats(1.2, 3.0), st.floats(0.2, 0.6), st.integers(0, 2**31),
       st.sampled_from([(True, True, True), (True, False, True), (False, False, False)]))
def test_cell_list_equals_brute_force(n, length, cutoff, seed, periodic):
    rng = np.random.default_rng(seed)
    box = SimBox((length, length * 1.1, length * 0.9), periodic)
    pos = rng.uniform(0, 1, (n, 3)) * box.array
    assert _pair_set(pairs_within(pos, box, cutoff)) == _pair_set(brute_force_pairs(pos, box, cutoff))


@given(st.integers(2, 80), st.integers(0, 2**31))
def test_pair_set_is_translation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    box = SimBox.cubic(2.0)
    pos = rng.uniform(0, 2.0, (n, 3))
    shift = rng.uniform(-5, 5, 3)
    shifted = np.mod(pos + shift, 2.0)
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    if np.any(np.abs(d - 0.6) < 1e-9):
        return
    assert _pair_set(pairs_within(pos, box, 0.6)) == _pair_set(pairs_within(shifted, box, 0.6))


# -- rebuild trigger -------------------------------------------------------------------

def test_needs_rebuild_examples():
    rng = np.random.default_rng(2)
    state = State.from_positions(rng.uniform(0, 2.0, (20, 3)), SimBox.cubic(2.0))
    nlist = build_neighbor_list(state, None, 0.7, 0.1)
    assert not needs_rebuild(nlist, state)

    moved = state.copy()
    moved.positions[3, 0] += 0.06
    assert needs_rebuild(nlist, moved)



def test_needs_rebuild_boundary_is_strict():
    # dyadic coordinates and skin make the skin/2 displacement exact in binary
    grid = np.stack(np.meshgrid(*[np.arange(4) * 0.5] * 3, indexing="ij"), -1).reshape(-1, 3)
    state = State.from_positions(grid + 0.25, SimBox.cubic(2.0))
    nlist = build_neighbor_list(state, None, 0.625, 0.125)
    for axis in range(3):
        moved = state.copy()
        moved.positions[:, axis] += 0.0625
        assert not needs_rebuild(nlist, moved)
    moved.positions[0, 0] += 2.0 ** -20
    assert needs_rebuild(nlist, moved)


def test_needs_rebuild_on_box_change_and_wrap():
    state = _dimer(0.5)
    nlist = build_neighbor_list(state, None, 0.7, 0.1)
    scaled = State.from_positions(state.positions, SimBox.cubic(3.01))
    assert needs_rebuild(nlist, scaled)
    wrapped = state.copy()
    wrapped.positions[0, 0] += 3.0  # same point, different image
    assert not needs_rebuild(nlist, wrapped)


# -- exclusions -------------------------------------------------------------------------

def test_apply_exclusions_examples():
    pairs = np.array([[0, 1], [0, 2]])
    assert apply_exclusions(pairs, [[1], [0], []]).tolist() == [[0, 2]]
    assert apply_exclusions(pairs, [[], [], []]).tolist() == pairs.tolist()


def test_fully_excluded_group_removes_its_pairs():
    rng = np.random.default_rng(5)
    box = SimBox.cubic(1.5)
    pos = rng.uniform(0, 1.5, (20, 3))
    group = [2, 5, 7, 11, 13]
    pos[group] = pos[2] + rng.uniform(-0.1, 0.1, (5, 3))  # all ten in-group pairs within cutoff
    in_group = {(a, b) for a in group for b in group if a < b}
    brute = _pair_set(brute_force_pairs(pos, box, 0.7))
    assert in_group <= brute

    explicit = [[j for j in group if j != i] if i in group else [] for i in range(20)]
    mask = np.zeros(20, bool)
    mask[group] = True
    topo = Topology(n_atoms=20, types=[0] * 20, masses=[1] * 20, charges=[0] * 20,
                    block_excluded=mask)
    pairs = pairs_within(pos, box, 0.7)
    assert _pair_set(apply_exclusions(pairs, explicit)) == brute - in_group
    assert _pair_set(apply_exclusions(pairs, topo)) == brute - in_group


def test_neighbor_list_drops_topology_exclusions():
    topo = Topology(n_atoms=2, types=[0, 0], masses=[1, 1], charges=[0, 0],
                    exclusions=[[1], [0]])
    assert build_neighbor_list(_dimer(0.3), topo, 0.7, 0.1).n_pairs == 0
