"""Fitting toy models to reference energies and forces.

Loss = sum_s (E_s - E_ref)^2 + w * sum_s |F_s - F_ref|^2.

The force term needs d/dtheta of a force, i.e. a mixed second derivative.
Rather than a second reverse pass, it is taken as a central difference of
the energy parameter-gradient along the force residual:

    d/dtheta sum |F - F_ref|^2 = -2 d/de [dE/dtheta (r + e * res)] at e = 0

with ``res = F - F_ref``. The step is tiny relative to atom spacings, so the
truncation error is far below the optimizer's own noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import SimBox
from ..errors import TrainingError
from .inference import NnInput, backward, evaluate, forward
from .model import NnModel

ADAM, GD = "adam", "gd"


@dataclass
class Sample:
    positions: np.ndarray
    types: np.ndarray
    box: SimBox
    energy: float
    forces: np.ndarray | None = None

    def as_input(self, positions=None) -> NnInput:
        return NnInput(self.positions if positions is None else positions, self.types, self.box)


def _as_sample(item) -> Sample:
    if isinstance(item, Sample):
        return item
    config, energy, forces = item
    if isinstance(config, NnInput):
        return Sample(config.positions, config.types, config.box, float(energy), forces)
    positions, types, box = config
    return Sample(np.asarray(positions, float), np.asarray(types), box, float(energy),
                  None if forces is None else np.asarray(forces, float))


class _Batch:
    """Samples laid side by side in one open box so a single pass covers them all.

    Periodic samples cannot be merged and are evaluated one by one.
    """

    def __init__(self, samples, rc_model):
        self.samples = samples
        merge = [s for s in samples if not any(s.box.periodic)]
        self.single = [s for s in samples if any(s.box.periodic)]
        self.merged = None
        if merge:
            blocks, offset, owner = [], 0.0, []
            for k, s in enumerate(merge):
                lo = s.positions.min(axis=0)
                shifted = s.positions - lo + np.array([offset, 0.0, 0.0])
                blocks.append(shifted)
                owner.append(np.full(len(s.positions), k))
                offset += np.ptp(s.positions[:, 0]) + 2.0 * rc_model + 1.0
            pos = np.concatenate(blocks)
            extent = np.ptp(pos, axis=0) + 1.0
            self.box = SimBox(tuple(extent), (False, False, False))
            self.positions = pos
            self.types = np.concatenate([s.types for s in merge])
            self.owner = np.concatenate(owner)
            self.energies = np.array([s.energy for s in merge])
            self.forces = [s.forces for s in merge]
            self.has_forces = all(f is not None for f in self.forces)
            self.merged = merge

    def input(self, positions=None):
        return NnInput(self.positions if positions is None else positions, self.types, self.box)


def _accumulate(grads, new, scale=1.0):
    for k in grads:
        grads[k] += scale * new[k]


def loss_and_grad(model: NnModel, samples, force_weight: float = 0.0, fd_step: float = 1e-6,
                  batch: _Batch | None = None):
    """Total loss and its gradient with respect to every parameter."""
    if batch is None:
        batch = _Batch(samples, model.rc_model)
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    if batch.merged:
        fw = forward(model, batch.input())
        pred = np.bincount(batch.owner, weights=fw.e_atom, minlength=len(batch.merged))
        de = pred - batch.energies
        total += float(np.sum(de * de))
        _, _, g = backward(fw, 2.0 * de[batch.owner], param_grads=True)
        _accumulate(grads, g)
        if force_weight and batch.has_forces:
            forces, _, _ = backward(fw, np.ones(len(batch.positions)))
            res = forces - np.concatenate(batch.forces)
            total += force_weight * float(np.sum(res * res))
            _accumulate(grads, _force_term(model, batch.input, batch.positions, res, fd_step),
                        force_weight)
    for s in batch.single:
        out = evaluate(model, s.as_input(), param_grads=True)
        de = out.energy - s.energy
        total += de * de
        _accumulate(grads, out.param_grads, 2.0 * de)
        if force_weight and s.forces is not None:
            res = out.forces - s.forces
            total += force_weight * float(np.sum(res * res))
            _accumulate(grads, _force_term(model, s.as_input, s.positions, res, fd_step),
                        force_weight)
    return total, grads


def _force_term(model, make_input, positions, res, fd_step):
    """Gradient of sum |F - F_ref|^2 (unweighted) by differencing dE/dtheta along res."""
    ones = np.ones(len(positions))
    _, _, plus = backward(forward(model, make_input(positions + fd_step * res)), ones, True)
    _, _, minus = backward(forward(model, make_input(positions - fd_step * res)), ones, True)
    return {k: -(plus[k] - minus[k]) / fd_step for k in plus}


def fit_toy_model(model: NnModel, reference, epochs: int = 200, lr: float = 1e-2,
                  force_weight: float = 0.0, optimizer: str = ADAM,
                  ) -> tuple[NnModel, list]:
    """Full-batch training; returns ``(fitted model, loss per epoch)``.

    The loss list holds the loss *before* each epoch's update. Training is
    deterministic: no sampling, and the initial weights come from the model.
    """
    samples = [_as_sample(item) for item in reference]
    if not samples:
        raise TrainingError("need at least one reference sample")
    if optimizer not in (ADAM, GD):
        raise TrainingError(f"unknown optimizer {optimizer!r}")
    fitted = model.copy()
    losses = []
    m = {k: np.zeros_like(v) for k, v in fitted.params.items()}
    v = {k: np.zeros_like(v) for k, v in fitted.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    batch = _Batch(samples, fitted.rc_model)
    for epoch in range(1, epochs + 1):
        loss, grads = loss_and_grad(fitted, samples, force_weight, batch=batch)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        losses.append(loss)
        for k, g in grads.items():
            if optimizer == GD:
                fitted.params[k] -= lr * g
                continue
            m[k] = beta1 * m[k] + (1 - beta1) * g
            v[k] = beta2 * v[k] + (1 - beta2) * g * g
            m_hat = m[k] / (1 - beta1 ** epoch)
            v_hat = v[k] / (1 - beta2 ** epoch)
            fitted.params[k] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return fitted, losses


def dimer_samples(distances, energy_fn, types=(0, 0), force_fn=None, box_length=10.0):
    """Reference samples for a two-atom system along the x axis.

    ``energy_fn(r)`` gives the target energy; ``force_fn(r)``, if given, the
    radial force on the second atom (positive = repulsive).
    """
    box = SimBox((box_length,) * 3, (False, False, False))
    samples = []
    for r in np.asarray(distances, dtype=float):
        pos = np.array([[1.0, 1.0, 1.0], [1.0 + r, 1.0, 1.0]])
        forces = None
        if force_fn is not None:
            f = float(force_fn(r))
            forces = np.array([[-f, 0.0, 0.0], [f, 0.0, 0.0]])
        samples.append(Sample(pos, np.asarray(types), box, float(energy_fn(r)), forces))
    return samples
