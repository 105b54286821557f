"""Cell-list accelerated Verlet neighbor lists."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import SimBox, State, Topology, minimum_image
from .errors import GeometryError

HALF, FULL = "half", "full"


@dataclass
class CellGrid:
    """Atoms binned into cells at least ``cell_size`` wide along every axis."""

    cell_size: np.ndarray
    shape: tuple
    origin: np.ndarray
    cell_of: np.ndarray  # flat cell id per atom
    periodic: tuple

    @property
    def cells(self) -> dict:
        out = {}
        for atom, flat in enumerate(self.cell_of):
            key = tuple(int(c) for c in np.unravel_index(flat, self.shape))
            out.setdefault(key, []).append(atom)
        return out


def build_cell_grid(positions: np.ndarray, box: SimBox, min_cell: float) -> CellGrid:
    shape, origin, extent = [], np.zeros(3), np.zeros(3)
    for axis in range(3):
        if box.periodic[axis]:
            extent[axis] = box.lengths[axis]
        else:
            lo = positions[:, axis].min() if len(positions) else 0.0
            hi = positions[:, axis].max() if len(positions) else 0.0
            origin[axis] = lo
            extent[axis] = max(hi - lo, 1e-12) * (1.0 + 1e-12)
        shape.append(max(1, int(extent[axis] // min_cell)))
    shape = tuple(shape)
    cell_size = extent / np.array(shape)
    rel = positions - origin
    for axis in range(3):
        if box.periodic[axis]:
            rel[:, axis] = np.mod(rel[:, axis], box.lengths[axis])
    coords = np.floor(rel / cell_size).astype(np.int64)
    coords = np.clip(coords, 0, np.array(shape) - 1)
    flat = np.ravel_multi_index(coords.T, shape) if len(positions) else np.zeros(0, np.int64)
    return CellGrid(cell_size, shape, origin, flat, tuple(box.periodic))


def _neighbor_cells(grid: CellGrid) -> np.ndarray:
    """``(n_cells, 27)`` table of distinct neighbouring cell ids, ``-1`` padded."""
    shape = np.array(grid.shape)
    n_cells = int(np.prod(shape))
    coords = np.stack(np.unravel_index(np.arange(n_cells), grid.shape), axis=1)
    cols = []
    for offset in itertools.product((-1, 0, 1), repeat=3):
        nb = coords + np.array(offset)
        valid = np.ones(n_cells, dtype=bool)
        for axis in range(3):
            if grid.periodic[axis]:
                nb[:, axis] %= shape[axis]
            else:
                valid &= (nb[:, axis] >= 0) & (nb[:, axis] < shape[axis])
                nb[:, axis] = np.clip(nb[:, axis], 0, shape[axis] - 1)
        flat = np.ravel_multi_index(nb.T, grid.shape)
        cols.append(np.where(valid, flat, -1))
    table = np.sort(np.stack(cols, axis=1), axis=1)
    dup = np.zeros_like(table, dtype=bool)
    dup[:, 1:] = table[:, 1:] == table[:, :-1]
    table[dup] = -1
    return table


def pairs_within(positions: np.ndarray, box: SimBox, cutoff: float) -> np.ndarray:
    """All pairs ``(i, j)``, ``i < j``, with minimum-image distance <= ``cutoff``.

    Returned as an ``(m, 2)`` int64 array in lexicographic order.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    grid = build_cell_grid(positions, box, cutoff)
    n_cells = int(np.prod(grid.shape))
    order = np.argsort(grid.cell_of, kind="stable")
    counts = np.bincount(grid.cell_of, minlength=n_cells)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(n) - starts[grid.cell_of[order]]
    table = np.full((n_cells, max(1, counts.max())), -1, dtype=np.int64)
    table[grid.cell_of[order], rank] = order

    neighbors = _neighbor_cells(grid)
    occupied = counts > 0
    cut2 = cutoff * cutoff
    keys = []
    for col in range(neighbors.shape[1]):
        nb = neighbors[:, col]
        rows = np.nonzero(occupied & (nb >= 0))[0]
        if rows.size == 0:
            continue
        rows = rows[counts[nb[rows]] > 0]
        a = table[rows][:, :, None]
        b = table[nb[rows]][:, None, :]
        mask = (a >= 0) & (b >= 0) & (a < b)
        ii = np.broadcast_to(a, mask.shape)[mask]
        jj = np.broadcast_to(b, mask.shape)[mask]
        if ii.size == 0:
            continue
        dr = minimum_image(positions[jj] - positions[ii], box)
        close = np.einsum("ij,ij->i", dr, dr) <= cut2
        keys.append(ii[close] * n + jj[close])
    if not keys:
        return np.zeros((0, 2), dtype=np.int64)
    keys = np.unique(np.concatenate(keys))
    return np.stack([keys // n, keys % n], axis=1)


def brute_force_pairs(positions: np.ndarray, box: SimBox, cutoff: float) -> np.ndarray:
    """O(N^2) reference for :func:`pairs_within`."""
    n = len(positions)
    i, j = np.triu_indices(n, k=1)
    dr = minimum_image(positions[j] - positions[i], box)
    keep = np.einsum("ij,ij->i", dr, dr) <= cutoff * cutoff
    return np.stack([i[keep], j[keep]], axis=1).astype(np.int64)


def pair_keys(pairs: np.ndarray, n: int) -> np.ndarray:
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * n + hi


def apply_exclusions(pairs: np.ndarray, exclusions, n_atoms: int | None = None) -> np.ndarray:
    """Drop excluded pairs, preserving the order of the survivors.

    ``exclusions`` is either a per-atom list of excluded partners or a
    :class:`~hybridmd.core.Topology`.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if isinstance(exclusions, Topology):
        if pairs.size == 0:
            return pairs
        return pairs[~exclusions.excluded(pairs)]
    else:
        n = n_atoms if n_atoms is not None else len(exclusions)
        excluded = np.array(sorted(i * n + j for i, ex in enumerate(exclusions)
                                   for j in ex if j > i), dtype=np.int64)
    if excluded.size == 0 or pairs.size == 0:
        return pairs
    return pairs[~np.isin(pair_keys(pairs, n), excluded)]


@dataclass
class NeighborList:
    rc: float
    skin: float
    pairs: np.ndarray
    reference_positions: np.ndarray
    mode: str = HALF
    box_lengths: tuple = None

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def half_pairs(self) -> np.ndarray:
        if self.mode == HALF:
            return self.pairs
        return self.pairs[self.pairs[:, 0] < self.pairs[:, 1]]


def check_cutoff(box: SimBox, cutoff: float) -> None:
    limit = min(length for length, p in zip(box.lengths, box.periodic) if p) / 2 \
        if any(box.periodic) else np.inf
    if cutoff > limit + 1e-12:
        raise GeometryError(
            f"cutoff {cutoff:.4f} nm exceeds half the smallest periodic box length "
            f"({limit:.4f} nm); minimum image would be ambiguous")


def to_full(pairs: np.ndarray) -> np.ndarray:
    both = np.concatenate([pairs, pairs[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    return both[order]


def build_neighbor_list(state: State, topo: Topology | None, rc: float, skin: float = 0.1,
                        mode: str = HALF) -> NeighborList:
    """Verlet list at ``rc + skin`` with topology exclusions removed."""
    if mode not in (HALF, FULL):
        raise ValueError(f"mode must be 'half' or 'full', got {mode!r}")
    check_cutoff(state.box, rc + skin)
    pairs = pairs_within(state.positions, state.box, rc + skin)
    if topo is not None:
        pairs = apply_exclusions(pairs, topo)
    if mode == FULL:
        pairs = to_full(pairs)
    return NeighborList(rc, skin, pairs, state.positions.copy(), mode, state.box.lengths)


def needs_rebuild(nlist: NeighborList, state: State) -> bool:
    """True iff some atom moved more than half the skin since the build."""
    if len(nlist.reference_positions) != state.n_atoms:
        raise ValueError("neighbor list was built for a different atom count")
    if nlist.box_lengths is not None and tuple(nlist.box_lengths) != tuple(state.box.lengths):
        return True
    disp = minimum_image(state.positions - nlist.reference_positions, state.box)
    if len(disp) == 0:
        return False
    max_disp = np.sqrt(np.max(np.einsum("ij,ij->i", disp, disp)))
    return bool(max_disp > 0.5 * nlist.skin)
