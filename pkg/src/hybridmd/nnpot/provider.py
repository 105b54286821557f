"""Coupling layer: evaluate the NN potential on a group and scatter forces back."""

from __future__ import annotations

import numpy as np

from ..core import State
from .groups import NnGroupPlan
from .inference import NnInput, NnOutput, infer
from .model import NnModel


def group_input(state: State, topo, plan: NnGroupPlan) -> NnInput:
    atoms = plan.group_atoms
    return NnInput(state.positions[atoms], topo.types[atoms], state.box)


def nn_force_provider(state: State, topo, plan: NnGroupPlan, model: NnModel,
                      forces: np.ndarray | None = None, dtype=np.float64
                      ) -> tuple[float, NnOutput | None]:
    """Add NN forces on the group atoms to ``forces`` (default ``state.forces``).

    Returns ``(nn_energy, output)``; ``output`` is ``None`` for an empty group.
    Cross-group interactions are left to the classical kernels.
    """
    if forces is None:
        forces = state.forces
    if plan.is_empty:
        return 0.0, None
    out = infer(group_input(state, topo, plan), model, dtype)
    forces[plan.group_atoms] += out.forces
    return out.energy, out
