"""Simulated domain decomposition: layouts, halos, routing and decomposed forces."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridmd.core import SimBox, State, minimum_image
from hybridmd.domain import (GHOST_POSITIONS, InMemoryTransport, choose_grid,
                             classical_forces_decomposed, decompose, exchange_ghost_positions,
                             nn_inference_decomposed, route_forces_back)
from hybridmd.errors import (DecompositionError, HaloTopologyError, ReceptiveFieldError,
                             RoutingError)
from hybridmd.forcefield import (CoulombParams, ForceFieldParams, LjParams, TermAccounting,
                                 compute_classical)
from hybridmd.neighbors import brute_force_pairs, build_neighbor_list
from hybridmd.nnpot import NnInput, NnModel, infer
from hybridmd.synthetic import generate_synthetic_system, lj_fluid


def _random_state(n, length, seed):
    rng = np.random.default_rng(seed)
    return State.from_positions(rng.uniform(0, length, (n, 3)), SimBox.cubic(length))


def _view_neighbors(view, atom_local, rc):
    d = np.linalg.norm(minimum_image(view.positions - view.positions[atom_local], view.box), axis=1)
    near = (d <= rc) & (np.arange(view.n_local) != atom_local)
    return sorted(view.global_index[near].tolist())


# -- layouts --------------------------------------------------------------------------------

def test_single_rank_owns_everything():
    state = _random_state(50, 2.0, 0)
    layout = decompose(state, None, 1, 0.7)
    assert layout.owned[0].tolist() == list(range(50))
    assert layout.n_ghosts == 0
    (view,) = exchange_ghost_positions(layout, state)
    np.testing.assert_array_equal(view.positions, state.positions)
    assert view.box.periodic == (True, True, True)


def test_atom_near_cut_is_ghosted_on_the_other_rank():
    pos = np.array([[1.45, 1.0, 1.0], [0.3, 0.3, 0.3], [2.5, 0.3, 0.3]])
    state = State.from_positions(pos, SimBox.cubic(3.0))
    layout = decompose(state, None, 2, 0.7)
    assert layout.owner.tolist() == [0, 0, 1]
    assert 0 in layout.ghosts[1].index.tolist()


def test_halo_covers_every_pair_near_boundaries():
    state = _random_state(500, 3.0, 1)
    rc = 0.7
    layout = decompose(state, None, 4, rc, (2, 2, 1))
    views = exchange_ghost_positions(layout, state)
    for i, j in brute_force_pairs(state.positions, state.box, rc).tolist():
        want = np.linalg.norm(minimum_image(state.positions[j] - state.positions[i], state.box))
        view = views[layout.owner[i]]
        li = int(np.nonzero(view.global_index[: view.n_owned] == i)[0][0])
        copies = np.nonzero(view.global_index == j)[0]
        d = np.linalg.norm(minimum_image(view.positions[copies] - view.positions[li], view.box),
                           axis=1)
        assert np.any(np.abs(d - want) < 1e-9), (i, j)


def test_symmetric_local_neighborhoods_equal_global():
    state = _random_state(300, 3.0, 2)
    rc = 0.6
    layout = decompose(state, None, 4, rc, (2, 2, 1))
    views = exchange_ghost_positions(layout, state)
    pairs = brute_force_pairs(state.positions, state.box, rc)
    global_nb = {i: [] for i in range(300)}
    for i, j in pairs.tolist():
        global_nb[i].append(j)
        global_nb[j].append(i)
    for view in views:
        for local in range(view.n_owned):
            g = int(view.global_index[local])
            assert _view_neighbors(view, local, rc) == sorted(global_nb[g])


def test_grid_and_size_errors():
    state = _random_state(50, 2.0, 3)
    with pytest.raises(DecompositionError):
        decompose(state, None, 2, 1.1)
    with pytest.raises(DecompositionError):
        decompose(state, None, 4, 0.5, (2, 1, 1))
    with pytest.raises(DecompositionError):
        decompose(state, None, 0, 0.5)
    with pytest.raises(DecompositionError):
        choose_grid(8, state.box, 1.1)
    assert choose_grid(4, SimBox.cubic(3.0), 0.7) == (4, 1, 1)
    assert choose_grid(4, SimBox.cubic(3.0), 0.8) == (2, 2, 1)
    assert choose_grid(8, SimBox.cubic(2.2), 0.9) == (2, 2, 2)


# -- routing ----------------------------------------------------------------------------------

def test_routing_without_ghosts_is_identity():
    state = _random_state(20, 2.0, 4)
    layout = decompose(state, None, 1, 0.5)
    views = exchange_ghost_positions(layout, state)
    f = np.random.default_rng(0).normal(size=(20, 3))
    np.testing.assert_array_equal(route_forces_back(layout, views, [f]), f)


def test_ghost_contributions_add_up_at_the_owner():
    pos = np.array([[1.45, 1.45, 1.0], [0.3, 0.3, 1.0], [2.5, 0.3, 1.0], [0.3, 2.5, 1.0],
                    [2.5, 2.5, 1.0]])
    state = State.from_positions(pos, SimBox.cubic(3.0))
    layout = decompose(state, None, 4, 0.3, (2, 2, 1))
    views = exchange_ghost_positions(layout, state)
    holders = [v for v in views if 0 in v.global_index[v.n_owned:].tolist()]
    assert len(holders) == 3
    force = np.array([3.0, -6.0, 9.0])
    local = []
    for view in views:
        f = np.zeros((view.n_local, 3))
        f[view.n_owned:][view.global_index[view.n_owned:] == 0] = force / 3
        local.append(f)
    transport = InMemoryTransport()
    out = route_forces_back(layout, views, local, transport)
    np.testing.assert_allclose(out[0], force)
    np.testing.assert_array_equal(out[1:], 0.0)
    assert transport.balanced()


def test_orphan_ghost_is_a_routing_error():
    state = _random_state(60, 2.0, 5)
    layout = decompose(state, None, 2, 0.5)
    views = exchange_ghost_positions(layout, state)
    views[0].source[views[0].n_owned] = 0  # claims rank 0 owns an atom it does not
    with pytest.raises(RoutingError):
        route_forces_back(layout, views, [np.zeros((v.n_local, 3)) for v in views])


# -- classical forces -----------------------------------------------------------------------------

def _lj_case():
    topo, state = lj_fluid(6, 21.0, 120.0, seed=1)
    rc = 0.9
    params = ForceFieldParams(LjParams(0.34, 0.996), CoulombParams("cutoff_shifted", rc), rc)
    return topo, state, params


def _reference(topo, state, params):
    ref = state.copy()
    report = compute_classical(ref, topo, build_neighbor_list(ref, topo, params.rc, 0.0), params)
    return ref.forces, report


def test_single_rank_matches_serial_kernels():
    topo, state, params = _lj_case()
    ref_f, ref_e = _reference(topo, state, params)
    forces, report = classical_forces_decomposed(decompose(state, topo, 1, params.rc), state,
                                                 topo, params)
    np.testing.assert_allclose(forces, ref_f, rtol=0, atol=1e-12 * np.abs(ref_f).max())
    assert report.lj == pytest.approx(ref_e.lj, rel=1e-13)


@pytest.mark.parametrize("n_ranks,grid", [(2, (2, 1, 1)), (4, (2, 2, 1)), (8, (2, 2, 2))])
@pytest.mark.parametrize("mode", ["symmetric", "asymmetric"])
def test_lj_fluid_decomposed_matches_single_domain(n_ranks, grid, mode):
    topo, state, params = _lj_case()
    if mode == "asymmetric" and n_ranks > 2:
        with pytest.raises(DecompositionError):
            classical_forces_decomposed(decompose(state, topo, n_ranks, params.rc, grid), state,
                                        topo, params, mode)
        return
    ref_f, ref_e = _reference(topo, state, params)
    transport = InMemoryTransport()
    forces, report = classical_forces_decomposed(decompose(state, topo, n_ranks, params.rc, grid),
                                                 state, topo, params, mode, transport)
    assert np.max(np.abs(forces - ref_f)) <= 1e-10 * np.max(np.abs(ref_f))
    assert report.lj == pytest.approx(ref_e.lj, rel=1e-12)
    np.testing.assert_allclose(forces.sum(0), 0.0, atol=1e-8)
    assert transport.balanced()


@pytest.mark.parametrize("mode", ["symmetric", "asymmetric"])
def test_each_boundary_pair_is_computed_exactly_once(mode):
    topo, state, params = _lj_case()
    serial = TermAccounting()
    compute_classical(state.copy(), topo, build_neighbor_list(state, topo, params.rc, 0.0),
                      params, accounting=serial)
    acc = TermAccounting()
    classical_forces_decomposed(decompose(state, topo, 2, params.rc), state, topo, params, mode,
                                accounting=acc)
    keys = [tuple(sorted(p)) for p in acc.lj_pairs]
    assert len(keys) == len(set(keys))
    assert set(keys) == {tuple(sorted(p)) for p in serial.lj_pairs}


def test_symmetric_halo_doubles_ghost_traffic():
    topo, state, params = _lj_case()
    layout = decompose(state, topo, 2, params.rc)
    sent = {}
    for mode in ("asymmetric", "symmetric"):
        transport = InMemoryTransport()
        exchange_ghost_positions(layout, state, mode, transport)
        sent[mode] = transport.total_bytes(GHOST_POSITIONS)
    assert sent["symmetric"] / sent["asymmetric"] == pytest.approx(2.0, rel=0.1)


def test_synthetic_bonded_system_on_eight_ranks():
    topo, state = generate_synthetic_system(1500, 25.0, 0.3, seed=6)
    rc = 0.7
    sp = ForceFieldParams(LjParams((0.3, 0.32), (0.6, 0.4)), CoulombParams("reaction_field", rc),
                          rc)
    if topo.n_types != 2:
        pytest.skip("synthetic type count changed")
    ref_f, ref_e = _reference(topo, state, sp)
    forces, report = classical_forces_decomposed(decompose(state, topo, 8, rc, (2, 2, 2)),
                                                 state, topo, sp)
    assert np.max(np.abs(forces - ref_f)) <= 1e-10 * np.max(np.abs(ref_f))
    np.testing.assert_allclose(forces.sum(0), 0.0, atol=1e-8)
    assert report.bonded == pytest.approx(ref_e.bonded, rel=1e-12)
    assert report.coulomb == pytest.approx(ref_e.coulomb, rel=1e-12)


# -- NN inference ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def nn_case():
    topo, state = generate_synthetic_system(1200, 10.0, 0.5, seed=8)
    model = NnModel.create("message_passing", topo.n_types, rc_model=0.6, hidden=16, depth=2,
                           seed=1)
    ref = infer(NnInput(state.positions, topo.types, state.box), model)
    return topo, state, model, ref


@pytest.mark.parametrize("strategy", ["gather_to_root", "halo_inference"])
def test_nn_single_rank_is_bitwise(nn_case, strategy):
    topo, state, model, ref = nn_case
    res = nn_inference_decomposed(decompose(state, topo, 1, 1.2), state, topo, model, strategy)
    np.testing.assert_array_equal(res.forces, ref.forces)
    assert res.energy == ref.energy


@pytest.mark.parametrize("strategy", ["gather_to_root", "halo_inference"])
def test_nn_four_ranks_match_single_domain(nn_case, strategy):
    topo, state, model, ref = nn_case
    transport = InMemoryTransport()
    res = nn_inference_decomposed(decompose(state, topo, 4, 1.2, (2, 2, 1)), state, topo, model,
                                  strategy, transport=transport)
    assert np.max(np.abs(res.forces - ref.forces)) <= 1e-10 * np.max(np.abs(ref.forces))
    assert res.energy == pytest.approx(ref.energy, rel=1e-12)
    assert transport.balanced()


def test_nn_narrow_halo_errors_and_negative_control(nn_case):
    topo, state, model, ref = nn_case
    layout = decompose(state, topo, 4, 0.6, (2, 2, 1))
    with pytest.raises(ReceptiveFieldError):
        nn_inference_decomposed(layout, state, topo, model, "halo_inference")
    res = nn_inference_decomposed(layout, state, topo, model, "halo_inference",
                                  check_receptive_field=False)
    assert np.max(np.abs(res.forces - ref.forces)) > 1e-3 * np.max(np.abs(ref.forces))
    with pytest.raises(HaloTopologyError):
        nn_inference_decomposed(decompose(state, topo, 2, 1.2), state, topo, model,
                                "halo_inference", mode="asymmetric")


def test_gather_on_group_subset(nn_case):
    topo, state, model, _ = nn_case
    group = np.array(topo.groups["protein"])
    ref = infer(NnInput(state.positions[group], topo.types[group], state.box), model)
    res = nn_inference_decomposed(decompose(state, topo, 4, 1.2, (2, 2, 1)), state, topo, model,
                                  "gather_to_root", group_atoms=group)
    np.testing.assert_allclose(res.forces[group], ref.forces, atol=1e-10)
    assert not np.delete(res.forces, group, axis=0).any()


@settings(max_examples=10)
@given(st.integers(0, 2**31), st.sampled_from([(2, (2, 1, 1)), (4, (2, 2, 1)), (8, (2, 2, 2))]))
def test_random_forces_route_with_zero_sum(seed, ranks):
    n_ranks, grid = ranks
    state = _random_state(120, 2.4, seed)
    layout = decompose(state, None, n_ranks, 0.5, grid)
    views = exchange_ghost_positions(layout, state)
    rng = np.random.default_rng(seed)
    local = []
    for view in views:
        # pair forces on each rank's owned-or-ghost pairs sum to zero locally
        f = np.zeros((view.n_local, 3))
        for _ in range(20):
            a, b = rng.integers(0, view.n_local, 2)
            v = rng.normal(size=3)
            f[a] += v
            f[b] -= v
        local.append(f)
    out = route_forces_back(layout, views, local)
    np.testing.assert_allclose(out.sum(0), 0.0, atol=1e-8)


@pytest.mark.parametrize("mode", ["symmetric", "asymmetric"])
def test_thin_slabs_between_one_and_two_halos(mode):
    topo, state = generate_synthetic_system(700, 25.0, 0.3, seed=9)
    rc = 0.7
    params = ForceFieldParams(LjParams((0.3, 0.32), (0.6, 0.4)),
                              CoulombParams("reaction_field", rc), rc)
    layout = decompose(state, topo, 4, rc)
    assert rc <= state.box.lengths[0] / 4 < 2 * rc
    ref_f, ref_e = _reference(topo, state, params)
    acc = TermAccounting()
    forces, report = classical_forces_decomposed(layout, state, topo, params, mode,
                                                 accounting=acc)
    assert np.max(np.abs(forces - ref_f)) <= 1e-10 * np.max(np.abs(ref_f))
    assert report.total_potential == pytest.approx(ref_e.total_potential, rel=1e-12)
    keys = [tuple(sorted(p)) for p in acc.coulomb_pairs]
    assert len(keys) == len(set(keys))
