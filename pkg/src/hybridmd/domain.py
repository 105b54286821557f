"""Spatial domain decomposition with ghost halos, simulated in-process.

Ranks are plain Python objects that communicate only through
:class:`InMemoryTransport`, which records every message in a ledger. Three
halo problems that arise when coupling a NN potential to a decomposed MD
engine are handled explicitly:

* the halo must be ``L * rc_model`` deep for an ``L``-hop model
  (:class:`~hybridmd.errors.ReceptiveFieldError` otherwise);
* half-shell ("asymmetric") halos give each boundary pair to one rank only,
  which is enough for pairwise forces but not for many-body models
  (:class:`~hybridmd.errors.HaloTopologyError`);
* gathering the whole group to one rank sidesteps both at the cost of
  communication that grows with the group size.

Axes with a single rank stay periodic inside local views and contribute no
ghosts, so a one-rank layout reproduces the single-domain computation bit for
bit.
"""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (EnergyReport, SimBox, State, Topology, kinetic_energy, minimum_image,
                   temperature_from_kinetic)
from .errors import (DecompositionError, HaloTopologyError, ReceptiveFieldError,
                     RoutingError)
from .forcefield import (ForceFieldParams, TermAccounting, angle_terms, bond_terms,
                         coulomb_forces, dihedral_terms, lj_forces)
from .neighbors import pairs_within
from .nnpot.inference import NnInput, infer
from .nnpot.model import NnModel
from .timing import NullClock, PhaseClock


class HaloMode(str, enum.Enum):
    ASYMMETRIC = "asymmetric"
    SYMMETRIC = "symmetric"


class Strategy(str, enum.Enum):
    GATHER_TO_ROOT = "gather_to_root"
    HALO_INFERENCE = "halo_inference"


GHOST_POSITIONS, GHOST_FORCES = "ghost_positions", "ghost_forces"
GATHER_GROUP, SCATTER_FORCES = "gather_group", "scatter_forces"
MESSAGE_KINDS = (GHOST_POSITIONS, GHOST_FORCES, GATHER_GROUP, SCATTER_FORCES)


# -- transport ----------------------------------------------------------------

@dataclass
class RankMessage:
    kind: str
    src: int
    dst: int
    payload: dict
    round: int = -1

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")

    @property
    def n_records(self) -> int:
        return len(self.payload["index"]) if "index" in self.payload else 0

    @property
    def nbytes(self) -> int:
        return int(sum(np.asarray(v).nbytes for v in self.payload.values()))


@dataclass
class LedgerRow:
    round: int
    kind: str
    src: int
    dst: int
    records: int
    bytes: int


class InMemoryTransport:
    """Barriered message exchange between simulated ranks with a byte ledger.

    Messages sent during a round are delivered at :meth:`deliver`, grouped by
    destination and ordered by source rank.
    """

    def __init__(self):
        self.round = -1
        self.ledger: list[LedgerRow] = []
        self._pending: list[RankMessage] = []
        self.sent_bytes: dict[int, int] = {}
        self.received_bytes: dict[int, int] = {}

    def begin_round(self) -> int:
        if self._pending:
            raise RuntimeError("previous round still has undelivered messages")
        self.round += 1
        self.sent_bytes[self.round] = 0
        self.received_bytes[self.round] = 0
        return self.round

    def send(self, message: RankMessage) -> None:
        message.round = self.round
        self._pending.append(message)
        self.sent_bytes[self.round] += message.nbytes
        self.ledger.append(LedgerRow(self.round, message.kind, message.src, message.dst,
                                     message.n_records, message.nbytes))

    def deliver(self) -> dict[int, list[RankMessage]]:
        inbox: dict[int, list[RankMessage]] = {}
        for msg in sorted(self._pending, key=lambda m: (m.dst, m.src)):
            inbox.setdefault(msg.dst, []).append(msg)
            self.received_bytes[self.round] += msg.nbytes
        self._pending = []
        return inbox

    def total_bytes(self, kind: str | None = None) -> int:
        return sum(row.bytes for row in self.ledger if kind is None or row.kind == kind)

    def balanced(self) -> bool:
        return all(self.sent_bytes[r] == self.received_bytes[r] for r in self.sent_bytes)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "kind", "src", "dst", "records", "bytes"])
            for row in self.ledger:
                writer.writerow([row.round, row.kind, row.src, row.dst, row.records, row.bytes])


# -- layout -------------------------------------------------------------------

@dataclass
class Ghosts:
    """Ghost copies held by one rank, sorted by (source rank, global index, shift)."""

    index: np.ndarray  # global atom index
    source: np.ndarray  # owning rank
    shift: np.ndarray  # (m, 3) integer image shift applied to the wrapped position
    upper: np.ndarray  # copy lies on the upper side of the region on every split axis

    def __len__(self) -> int:
        return len(self.index)

    def select(self, mask) -> "Ghosts":
        return Ghosts(self.index[mask], self.source[mask], self.shift[mask], self.upper[mask])


@dataclass
class DomainLayout:
    n_ranks: int
    grid: tuple
    box: SimBox
    halo_width: float
    lower: np.ndarray  # (n_ranks, 3) region lower corners
    upper: np.ndarray  # (n_ranks, 3) region upper corners
    owner: np.ndarray  # rank owning each atom
    owned: list  # per rank, sorted global indices
    ghosts: list  # per rank, Ghosts

    @property
    def split_axes(self) -> tuple:
        return tuple(axis for axis in range(3) if self.grid[axis] > 1)

    @property
    def local_box(self) -> SimBox:
        periodic = tuple(p and self.grid[a] == 1 for a, p in enumerate(self.box.periodic))
        return self.box.with_periodic(periodic)

    @property
    def n_ghosts(self) -> int:
        return int(sum(len(g) for g in self.ghosts))


def choose_grid(n_ranks: int, box: SimBox, halo_width: float) -> tuple:
    """Rank grid for ``n_ranks``: slabs along x if they fit, else the most cubic fit."""
    candidates = []
    for gx in range(1, n_ranks + 1):
        if n_ranks % gx:
            continue
        for gy in range(1, n_ranks // gx + 1):
            if (n_ranks // gx) % gy:
                continue
            grid = (gx, gy, n_ranks // gx // gy)
            if all(g == 1 or box.lengths[a] / g >= halo_width - 1e-12
                   for a, g in enumerate(grid)):
                candidates.append(grid)
    if not candidates:
        raise DecompositionError(
            f"no rank grid for {n_ranks} ranks keeps every region at least one halo "
            f"({halo_width:.3f} nm) wide in box {box.lengths}")
    if (n_ranks, 1, 1) in candidates:
        return (n_ranks, 1, 1)
    return min(candidates, key=lambda g: (max(g) - min(g), g[::-1]))


def _wrapped(positions, box):
    out = np.array(positions, dtype=float, copy=True)
    for axis in range(3):
        if box.periodic[axis]:
            out[:, axis] = np.mod(out[:, axis], box.lengths[axis])
            out[:, axis][out[:, axis] >= box.lengths[axis]] = 0.0
    return out


def decompose(state: State, topo: Topology | None, n_ranks: int, halo_width: float,
              grid=None) -> DomainLayout:
    """Partition atoms over a rank grid and collect each rank's halo.

    ``grid`` is a 3-tuple of ranks per axis, ``None`` for x slabs or
    ``"auto"`` for :func:`choose_grid`. Ghost candidates are every image
    ``r + s L`` (``s`` in {-1, 0, 1} on split periodic axes) whose Euclidean
    distance to the rank's region is at most ``halo_width``.
    """
    if n_ranks < 1:
        raise DecompositionError("need at least one rank")
    if halo_width <= 0:
        raise DecompositionError("halo width must be positive")
    box = state.box
    if grid is None:
        grid = (n_ranks, 1, 1)
    elif grid == "auto":
        grid = choose_grid(n_ranks, box, halo_width)
    grid = tuple(int(g) for g in grid)
    if len(grid) != 3 or int(np.prod(grid)) != n_ranks or min(grid) < 1:
        raise DecompositionError(f"grid {grid} does not hold {n_ranks} ranks")
    lengths = box.array
    width = lengths / np.array(grid)
    for axis in range(3):
        if grid[axis] > 1 and width[axis] < halo_width - 1e-12:
            raise DecompositionError(
                f"region width {width[axis]:.3f} nm along axis {'xyz'[axis]} is below "
                f"the halo width {halo_width:.3f} nm; use fewer ranks or another grid")

    pos = _wrapped(state.positions, box)
    cells = np.floor(pos / width).astype(np.int64)
    cells = np.clip(cells, 0, np.array(grid) - 1)
    owner = np.ravel_multi_index(cells.T, grid) if len(pos) else np.zeros(0, np.int64)
    coords = np.stack(np.unravel_index(np.arange(n_ranks), grid), axis=1)
    lower = coords * width
    upper = (coords + 1) * width
    split = [a for a in range(3) if grid[a] > 1]
    for axis in split:
        if not box.periodic[axis]:
            lower[coords[:, axis] == 0, axis] = -np.inf
            upper[coords[:, axis] == grid[axis] - 1, axis] = np.inf

    owned = [np.nonzero(owner == r)[0] for r in range(n_ranks)]
    shift_sets = [(-1, 0, 1) if (a in split and box.periodic[a]) else (0,) for a in range(3)]
    shifts = np.array(list(itertools.product(*shift_sets)), dtype=np.int64)
    ghosts = []
    for r in range(n_ranks):
        rows = []
        for s in shifts:
            img = pos + s * lengths
            d2 = np.zeros(len(pos))
            above = np.ones(len(pos), dtype=bool)
            for axis in split:
                below = np.maximum(lower[r, axis] - img[:, axis], 0.0)
                beyond = np.maximum(img[:, axis] - upper[r, axis], 0.0)
                d2 += below * below + beyond * beyond
                above &= img[:, axis] >= lower[r, axis]
            near = d2 <= halo_width * halo_width
            if not np.any(s):
                near &= owner != r
            sel = np.nonzero(near)[0]
            rows.append(np.column_stack([owner[sel], sel, np.tile(s, (len(sel), 1)),
                                         above[sel]]).astype(np.int64))
        arr = np.concatenate(rows) if rows else np.zeros((0, 6), np.int64)
        arr = arr[np.lexsort(arr.T[::-1])]
        if len(arr):
            ghosts.append(Ghosts(arr[:, 1], arr[:, 0], arr[:, 2:5], arr[:, 5].astype(bool)))
        else:
            ghosts.append(Ghosts(np.zeros(0, np.int64), np.zeros(0, np.int64),
                                 np.zeros((0, 3), np.int64), np.zeros(0, bool)))
    return DomainLayout(n_ranks, grid, box, float(halo_width), lower, upper, owner, owned,
                        ghosts)


def needs_redecompose(layout: DomainLayout, state: State, reference: State,
                      skin: float) -> bool:
    """True once any atom has moved more than ``skin / 2`` since ``reference``."""
    disp = minimum_image(state.positions - reference.positions, state.box)
    return bool(len(disp) and np.sqrt(np.max(np.einsum("ij,ij->i", disp, disp))) > 0.5 * skin)


# -- local views ----------------------------------------------------------------

@dataclass
class LocalView:
    """Owned atoms followed by ghost copies, positioned for one rank."""

    rank: int
    global_index: np.ndarray
    positions: np.ndarray
    n_owned: int
    source: np.ndarray
    shift: np.ndarray
    box: SimBox
    halo_width: float | None
    mode: HaloMode

    @property
    def n_local(self) -> int:
        return len(self.global_index)

    @property
    def owned_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_local, dtype=bool)
        mask[: self.n_owned] = True
        return mask


def _mode_ghosts(layout: DomainLayout, rank: int, mode: HaloMode) -> Ghosts:
    ghosts = layout.ghosts[rank]
    if HaloMode(mode) == HaloMode.SYMMETRIC:
        return ghosts
    if len(layout.split_axes) > 1:
        raise DecompositionError("asymmetric halos are implemented for slab (one split axis) "
                                 "decompositions only")
    return ghosts.select(ghosts.upper)


def _local_owned_positions(layout: DomainLayout, state: State, atoms) -> np.ndarray:
    pos = np.array(state.positions[atoms], dtype=float, copy=True)
    for axis in layout.split_axes:
        if layout.box.periodic[axis]:
            col = np.mod(pos[:, axis], layout.box.lengths[axis])
            col[col >= layout.box.lengths[axis]] = 0.0
            pos[:, axis] = col
    return pos


def exchange_ghost_positions(layout: DomainLayout, state: State,
                             mode: HaloMode = HaloMode.SYMMETRIC,
                             transport: InMemoryTransport | None = None) -> list[LocalView]:
    """One halo-exchange round; returns every rank's local view.

    Owned coordinates are wrapped on split periodic axes; ghosts arrive as
    the owner's coordinates plus their image shift.
    """
    mode = HaloMode(mode)
    transport = transport or InMemoryTransport()
    transport.begin_round()
    lengths = layout.box.array
    wanted = [_mode_ghosts(layout, r, mode) for r in range(layout.n_ranks)]
    owned_pos = [_local_owned_positions(layout, state, layout.owned[r])
                 for r in range(layout.n_ranks)]
    slot = np.zeros(len(layout.owner), dtype=np.int64)
    for r in range(layout.n_ranks):
        slot[layout.owned[r]] = np.arange(len(layout.owned[r]))
    for src in range(layout.n_ranks):
        for dst in range(layout.n_ranks):
            g = wanted[dst]
            sel = g.source == src
            if not np.any(sel):
                continue
            idx = g.index[sel]
            transport.send(RankMessage(GHOST_POSITIONS, src, dst, {
                "index": idx, "positions": owned_pos[src][slot[idx]],
                "shift": g.shift[sel].astype(np.int8)}))
    inbox = transport.deliver()
    views = []
    for r in range(layout.n_ranks):
        idx, pos, src, shift = [layout.owned[r]], [owned_pos[r]], \
            [np.full(len(layout.owned[r]), r)], [np.zeros((len(layout.owned[r]), 3), np.int64)]
        for msg in inbox.get(r, []):
            idx.append(msg.payload["index"])
            s = msg.payload["shift"].astype(np.int64)
            pos.append(msg.payload["positions"] + s * lengths)
            src.append(np.full(msg.n_records, msg.src))
            shift.append(s)
        halo = layout.halo_width if layout.split_axes else None
        views.append(LocalView(r, np.concatenate(idx).astype(np.int64), np.concatenate(pos),
                               len(layout.owned[r]), np.concatenate(src).astype(np.int64),
                               np.concatenate(shift), layout.local_box, halo, mode))
    return views


# -- routing ------------------------------------------------------------------------

def route_forces_back(layout: DomainLayout, views: list[LocalView], local_forces: list,
                      transport: InMemoryTransport | None = None) -> np.ndarray:
    """Sum local forces into a global array.

    Owned contributions are added first, then ghost contributions as they
    arrive, ordered by destination and source rank. A ghost whose claimed
    source does not own it cannot be routed.
    """
    transport = transport or InMemoryTransport()
    n = len(layout.owner)
    out = np.zeros((n, 3), dtype=np.float64)
    for view, f in zip(views, local_forces):
        out[view.global_index[: view.n_owned]] += f[: view.n_owned]
    transport.begin_round()
    for view, f in zip(views, local_forces):
        gidx = view.global_index[view.n_owned:]
        src = view.source[view.n_owned:]
        if len(gidx) and np.any(layout.owner[gidx] != src):
            bad = int(gidx[np.nonzero(layout.owner[gidx] != src)[0][0]])
            raise RoutingError(f"rank {view.rank} holds ghost of atom {bad} with unknown "
                               "provenance")
        gf = np.asarray(f[view.n_owned:], dtype=np.float64)
        for dst in np.unique(src):
            sel = src == dst
            transport.send(RankMessage(GHOST_FORCES, view.rank, int(dst),
                                       {"index": gidx[sel], "forces": gf[sel]}))
    for dst, messages in sorted(transport.deliver().items()):
        for msg in messages:
            np.add.at(out, msg.payload["index"], msg.payload["forces"])
    return out


# -- classical forces ------------------------------------------------------------------

def _local_lookup(view: LocalView) -> dict:
    table: dict[int, list[int]] = {}
    for local, g in enumerate(view.global_index.tolist()):
        table.setdefault(g, []).append(local)
    return table


def assign_bonded_terms(layout: DomainLayout, views: list[LocalView], topo: Topology) -> list:
    """Give each bonded term to the lowest rank that owns one of its atoms and
    holds every atom at the correct image. Returns per-rank dicts of local
    index arrays and parameters, keeping the topology's term order."""
    lookups = [_local_lookup(v) for v in views]
    per_rank = [{} for _ in views]
    for name, index, params in (("bond", topo.bond_index, topo.bond_params),
                                ("angle", topo.angle_index, topo.angle_params),
                                ("dihedral", topo.dihedral_index, topo.dihedral_params)):
        rows = [[] for _ in views]
        picks = [[] for _ in views]
        for t, term in enumerate(index.tolist()):
            placed = False
            for r in sorted(set(int(layout.owner[a]) for a in term)):
                view, lookup = views[r], lookups[r]
                anchor_atom = next(a for a in term if layout.owner[a] == r)
                anchor = lookup[anchor_atom][0]
                local = []
                for a in term:
                    copies = lookup.get(a)
                    if not copies:
                        break
                    vecs = view.positions[copies] - view.positions[anchor]
                    want = minimum_image(vecs[0], layout.box)
                    dist = np.einsum("ij,ij->i", vecs, vecs)
                    best = int(np.argmin(dist))
                    if abs(np.sqrt(dist[best]) - np.linalg.norm(want)) > 1e-9:
                        break
                    local.append(copies[best])
                if len(local) == len(term):
                    rows[r].append(local)
                    picks[r].append(t)
                    placed = True
                    break
            if not placed:
                raise DecompositionError(
                    f"{name} {term} spans more than the halo ({layout.halo_width:.3f} nm)")
        for r in range(len(views)):
            width = index.shape[1]
            per_rank[r][name] = (np.array(rows[r], dtype=np.int64).reshape(-1, width),
                                 params[np.array(picks[r], dtype=np.int64)])
    return per_rank


def _merge_accounting(target: TermAccounting, local: TermAccounting, gmap) -> None:
    for name in ("bonds", "angles", "dihedrals", "lj_pairs", "coulomb_pairs"):
        getattr(target, name).extend(tuple(int(gmap[a]) for a in term)
                                     for term in getattr(local, name))
    target.collinear_angles += local.collinear_angles


def _pair_rule(pairs, view: LocalView, mode: HaloMode):
    owned = view.owned_mask
    i, j = pairs[:, 0], pairs[:, 1]
    if mode == HaloMode.ASYMMETRIC:
        return owned[i] | owned[j]
    gi, gj = view.global_index[i], view.global_index[j]
    lower = np.where(gi < gj, i, j)
    return owned[lower]


def classical_forces_decomposed(layout: DomainLayout, state: State, topo: Topology,
                                params: ForceFieldParams,
                                mode: HaloMode = HaloMode.SYMMETRIC,
                                transport: InMemoryTransport | None = None,
                                dtype=np.float64,
                                accounting: TermAccounting | None = None
                                ) -> tuple[np.ndarray, EnergyReport]:
    """Bonded + LJ + Coulomb forces computed rank by rank and routed back.

    Asymmetric mode computes owned-owned and owned-ghost pairs (each boundary
    pair lives on exactly one rank); symmetric mode computes a pair on the
    rank owning its lower global index.
    """
    mode = HaloMode(mode)
    if layout.split_axes and layout.halo_width < params.rc - 1e-12:
        raise DecompositionError(f"halo {layout.halo_width:.3f} nm is below the classical "
                                 f"cutoff {params.rc:.3f} nm")
    transport = transport or InMemoryTransport()
    views = exchange_ghost_positions(layout, state, mode, transport)
    terms = assign_bonded_terms(layout, views, topo)
    n = topo.n_atoms
    local_forces = []
    totals = np.zeros(4)  # bonded, lj, coulomb, virial
    for view, tset in zip(views, terms):
        f = np.zeros((view.n_local, 3), dtype=np.float64)
        local_acc = TermAccounting() if accounting is not None else None
        eb, vb = bond_terms(view.positions, view.box, *tset["bond"], f, dtype, local_acc)
        ea, va = angle_terms(view.positions, view.box, *tset["angle"], f, dtype, local_acc)
        ed, vd = dihedral_terms(view.positions, view.box, *tset["dihedral"], f, dtype,
                                local_acc)
        pairs = pairs_within(view.positions, view.box, params.rc)
        if len(pairs):
            gpairs = view.global_index[pairs]
            keep = _pair_rule(pairs, view, mode)
            keep &= ~topo.excluded(gpairs)
            pairs = pairs[keep]
        types = topo.types[view.global_index]
        charges = topo.charges[view.global_index]
        elj, vlj = lj_forces(view.positions, view.box, pairs, types, params.lj, params.rc, f,
                             dtype, local_acc)
        ec, vc = coulomb_forces(view.positions, view.box, pairs, charges, params.coulomb, f,
                                dtype, local_acc)
        if local_acc is not None:
            _merge_accounting(accounting, local_acc, view.global_index)
        totals += (eb + ea + ed, elj, ec, vb + va + vd + vlj + vc)
        local_forces.append(f)
    forces = route_forces_back(layout, views, local_forces, transport)
    ke = kinetic_energy(state.velocities, topo.masses)
    temp = temperature_from_kinetic(ke, n) if n >= 2 else 0.0
    report = EnergyReport(bonded=float(totals[0]), lj=float(totals[1]), coulomb=float(totals[2]),
                          kinetic=ke, temperature=temp, virial=float(totals[3]))
    return forces, report


# -- NN inference ---------------------------------------------------------------------

@dataclass
class NnDecomposedResult:
    forces: np.ndarray  # global, NN contribution only
    energy: float
    flops: int = 0
    activation_bytes: int = 0
    per_rank_energy: list = field(default_factory=list)
    virial: float = 0.0


def _gather_to_root(layout, state, topo, model, atoms, transport, dtype, clock):
    with clock.phase("gather_scatter"):
        idx, pos = _gather(layout, state, atoms, transport)
    with clock.phase("nn"):
        out = infer(NnInput(pos, topo.types[idx], layout.box), model, dtype)
    with clock.phase("gather_scatter"):
        forces = _scatter_from_root(layout, idx, out.forces, transport)
    return NnDecomposedResult(forces, out.energy, out.flops, out.activation_bytes, [out.energy],
                              out.virial)


def _gather(layout, state, atoms, transport):
    n = len(layout.owner)
    in_group = np.zeros(n, dtype=bool)
    in_group[atoms] = True
    transport.begin_round()
    root_parts = []
    for r in range(layout.n_ranks):
        mine = layout.owned[r][in_group[layout.owned[r]]]
        pos = _local_owned_positions(layout, state, mine)
        if r == 0:
            root_parts.append((mine, pos))
        elif len(mine):
            transport.send(RankMessage(GATHER_GROUP, r, 0, {"index": mine, "positions": pos}))
    for msg in transport.deliver().get(0, []):
        root_parts.append((msg.payload["index"], msg.payload["positions"]))
    idx = np.concatenate([p[0] for p in root_parts]) if root_parts else np.zeros(0, np.int64)
    pos = np.concatenate([p[1] for p in root_parts]) if root_parts else np.zeros((0, 3))
    order = np.argsort(idx, kind="stable")
    return idx[order], pos[order]


def _scatter_from_root(layout, idx, root_forces, transport):
    transport.begin_round()
    forces = np.zeros((len(layout.owner), 3), dtype=np.float64)
    for r in range(layout.n_ranks):
        sel = layout.owner[idx] == r
        if r == 0:
            forces[idx[sel]] += root_forces[sel]
        elif np.any(sel):
            transport.send(RankMessage(SCATTER_FORCES, 0, r,
                                       {"index": idx[sel], "forces": root_forces[sel]}))
    for dst, messages in sorted(transport.deliver().items()):
        for msg in messages:
            forces[msg.payload["index"]] += msg.payload["forces"]
    return forces


def _halo_inference(layout, state, topo, model, atoms, mode, transport, dtype,
                    check_receptive_field, clock):
    with clock.phase("halo_exchange"):
        views = exchange_ghost_positions(layout, state, mode, transport)
    in_group = np.zeros(len(layout.owner), dtype=bool)
    in_group[atoms] = True
    local_forces, energies, flops, nbytes, virial = [], [], 0, 0, 0.0
    for view in views:
        keep = in_group[view.global_index]
        sub = np.nonzero(keep)[0]
        inp = NnInput(view.positions[sub], topo.types[view.global_index[sub]], view.box,
                      owned=view.owned_mask[sub], halo_width=view.halo_width)
        with clock.phase("nn"):
            out = infer(inp, model, dtype, check_receptive_field=check_receptive_field)
        f = np.zeros((view.n_local, 3))
        f[sub] = out.forces
        local_forces.append(f)
        energies.append(out.energy)
        virial += out.virial
        flops += out.flops
        nbytes = max(nbytes, out.activation_bytes)
    with clock.phase("halo_exchange"):
        forces = route_forces_back(layout, views, local_forces, transport)
    return NnDecomposedResult(forces, float(sum(energies)), flops, nbytes, energies, virial)


def nn_inference_decomposed(layout: DomainLayout, state: State, topo: Topology, model: NnModel,
                            strategy: Strategy = Strategy.GATHER_TO_ROOT, group_atoms=None,
                            mode: HaloMode = HaloMode.SYMMETRIC,
                            transport: InMemoryTransport | None = None, dtype=np.float64,
                            check_receptive_field: bool = True,
                            clock: PhaseClock | None = None) -> NnDecomposedResult:
    """NN forces on ``group_atoms`` (default: all atoms) under a decomposition.

    ``check_receptive_field=False`` skips the halo-depth check; it exists
    only to demonstrate what goes wrong without it.
    """
    strategy, mode = Strategy(strategy), HaloMode(mode)
    clock = clock or NullClock()
    transport = transport or InMemoryTransport()
    atoms = (np.arange(topo.n_atoms) if group_atoms is None
             else np.asarray(sorted(set(int(a) for a in group_atoms)), dtype=np.int64))
    if strategy == Strategy.GATHER_TO_ROOT:
        return _gather_to_root(layout, state, topo, model, atoms, transport, dtype, clock)
    if mode != HaloMode.SYMMETRIC:
        raise HaloTopologyError(
            "halo inference needs symmetric halos: with one-sided ghosts, atoms near the "
            "lower boundary miss part of their environment")
    if check_receptive_field and layout.split_axes:
        if layout.halo_width < model.receptive_field - 1e-12:
            raise ReceptiveFieldError(
                f"halo of {layout.halo_width:.3f} nm is narrower than the receptive field "
                f"{model.depth} x {model.rc_model:.3f} = {model.receptive_field:.3f} nm")
    return _halo_inference(layout, state, topo, model, atoms, mode, transport, dtype,
                           check_receptive_field, clock)


# -- halo sufficiency ------------------------------------------------------------------

def halo_is_sufficient(layout: DomainLayout, views: list[LocalView], state: State, rc: float,
                       depth: int, atoms=None) -> bool:
    """Graph check: every node within ``depth - 1`` hops of an owned atom has its
    complete ``rc`` neighbourhood in the local view (restricted to ``atoms``)."""
    n = len(layout.owner)
    in_set = np.ones(n, dtype=bool) if atoms is None else np.isin(np.arange(n), atoms)
    sub = np.nonzero(in_set)[0]
    gpairs = pairs_within(state.positions[sub], state.box, rc)
    global_degree = np.zeros(n, dtype=np.int64)
    if len(gpairs):
        np.add.at(global_degree, sub[gpairs.ravel()], 1)
    for view in views:
        keep = np.nonzero(in_set[view.global_index])[0]
        lpairs = pairs_within(view.positions[keep], view.box, rc)
        m = len(keep)
        degree = np.zeros(m, dtype=np.int64)
        adjacency = [[] for _ in range(m)]
        for a, b in lpairs.tolist():
            degree[a] += 1
            degree[b] += 1
            adjacency[a].append(b)
            adjacency[b].append(a)
        frontier = [k for k in range(m) if keep[k] < view.n_owned]
        seen = set(frontier)
        for _ in range(depth - 1):
            nxt = []
            for k in frontier:
                for nb in adjacency[k]:
                    if nb not in seen:
                        seen.add(nb)
                        nxt.append(nb)
            frontier = nxt
        gidx = view.global_index[keep]
        for k in seen:
            if degree[k] != global_degree[gidx[k]]:
                return False
    return True
