"""Hand an atom group over to the NN potential by editing the classical topology."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import Topology
from ..errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class NnGroupPlan:
    """Everything removed from the classical topology, so the edit is reversible."""

    group_name: str
    group_atoms: np.ndarray
    removed_bonds: list = field(default_factory=list)
    removed_angles: list = field(default_factory=list)
    removed_dihedrals: list = field(default_factory=list)
    newly_blocked: np.ndarray = None  # group atoms whose block exclusion this plan set
    prior_excluded: frozenset = frozenset()  # in-group (i, j) pairs excluded beforehand

    @property
    def added_exclusions(self) -> list:
        """In-group pairs ``(i, j)``, ``i < j``, that were not excluded before the plan.

        Enumerated on demand (quadratic in group size); the engine itself uses
        the per-atom block mask instead.
        """
        if self.newly_blocked is None:
            return []
        atoms = sorted(int(a) for a in self.group_atoms)
        return [(i, j) for i, j in itertools.combinations(atoms, 2)
                if (i, j) not in self.prior_excluded]

    @property
    def n_atoms(self) -> int:
        return len(self.group_atoms)

    @property
    def is_empty(self) -> bool:
        return len(self.group_atoms) == 0


def _inside(index, members):
    if index.size == 0:
        return np.zeros(0, dtype=bool)
    return np.all(members[index], axis=1)


def plan_group_preprocessing(topo: Topology, group_name: str) -> tuple[Topology, NnGroupPlan]:
    """Remove in-group bonded terms and exclude every in-group pair.

    In-group pairs are excluded through ``Topology.block_excluded`` rather than
    listed one by one, which would cost O(group size squared). Terms straddling
    the group boundary and cross-group pairs stay classical.
    """
    if group_name not in topo.groups:
        raise ConfigError(f"unknown atom group {group_name!r}; "
                          f"available: {sorted(topo.groups)}")
    atoms = np.asarray(topo.groups[group_name], dtype=np.int64)
    plan = NnGroupPlan(group_name, atoms)
    if topo.block_excluded.any():
        # a second group: its pairs with the first would wrongly be dropped
        raise ConfigError("only one atom group can be handed to the NN potential")
    out = topo.copy()
    if len(atoms) == 0:
        log.warning("atom group %r is empty; topology left unchanged", group_name)
        return out, plan

    members = np.zeros(topo.n_atoms, dtype=bool)
    members[atoms] = True
    for kind, index, params in (("bond", "bond_index", "bond_params"),
                                ("angle", "angle_index", "angle_params"),
                                ("dihedral", "dihedral_index", "dihedral_params")):
        idx, par = getattr(topo, index), getattr(topo, params)
        drop = _inside(idx, members)
        getattr(plan, f"removed_{kind}s").extend(
            [tuple(int(a) for a in row) + tuple(float(p) for p in prm)
             for row, prm in zip(idx[drop], par[drop])])
        setattr(out, index, idx[~drop].copy())
        setattr(out, params, par[~drop].copy())

    plan.prior_excluded = frozenset((i, j) for i in atoms.tolist()
                                    for j in topo.exclusions[i] if j > i and members[j])
    plan.newly_blocked = atoms.copy()
    out.block_excluded[atoms] = True
    return out, plan


def restore_topology(topo: Topology, plan: NnGroupPlan) -> Topology:
    """Undo :func:`plan_group_preprocessing` (term order is not preserved)."""
    out = topo.copy()
    if plan.removed_bonds:
        rows = np.array(plan.removed_bonds)
        out.bond_index = np.concatenate([out.bond_index, rows[:, :2].astype(np.int64)])
        out.bond_params = np.concatenate([out.bond_params, rows[:, 2:]])
    if plan.removed_angles:
        rows = np.array(plan.removed_angles)
        out.angle_index = np.concatenate([out.angle_index, rows[:, :3].astype(np.int64)])
        out.angle_params = np.concatenate([out.angle_params, rows[:, 3:]])
    if plan.removed_dihedrals:
        rows = np.array(plan.removed_dihedrals)
        out.dihedral_index = np.concatenate([out.dihedral_index, rows[:, :4].astype(np.int64)])
        out.dihedral_params = np.concatenate([out.dihedral_params, rows[:, 4:]])
    if plan.newly_blocked is not None:
        out.block_excluded[plan.newly_blocked] = False
    return out
