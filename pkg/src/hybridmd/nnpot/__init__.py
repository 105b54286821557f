"""Neural-network force providers: group preprocessing, toy potentials and training."""

from .groups import NnGroupPlan, plan_group_preprocessing, restore_topology
from .inference import (NnInput, NnOutput, descriptor, embed_fit_energy, evaluate, infer,
                        message_passing_energy, radial_basis, switch)
from .model import EMBED_FIT, MESSAGE_PASSING, NnModel
from .provider import nn_force_provider
from .training import dimer_samples, fit_toy_model

__all__ = [
    "EMBED_FIT", "MESSAGE_PASSING", "NnGroupPlan", "NnInput", "NnModel", "NnOutput",
    "descriptor", "dimer_samples", "embed_fit_energy", "evaluate", "fit_toy_model", "infer",
    "message_passing_energy", "nn_force_provider", "plan_group_preprocessing", "radial_basis",
    "restore_topology", "switch",
]
