"""Integrators, Berendsen coupling and steepest-descent minimization.

A *force function* here is any callable ``force_fn(state) -> (forces, energy)``
returning an ``(n, 3)`` force array and the potential energy in kJ/mol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import BAR_PER_KJ_MOL_NM3, State
from .errors import IntegrationError, LineSearchStall

ForceFn = Callable[[State], tuple]

LEAPFROG, VELOCITY_VERLET, STEEP = "leapfrog", "velocity_verlet", "steep"


@dataclass
class Thermostat:
    T0: float = 300.0
    tau: float = 0.1  # ps


@dataclass
class Barostat:
    P0: float = 1.0  # bar
    tau: float = 2.0  # ps
    compressibility: float = 4.5e-5  # bar^-1


@dataclass
class IntegratorConfig:
    dt_fs: float = 1.0
    scheme: str = LEAPFROG
    thermostat: Optional[Thermostat] = None
    barostat: Optional[Barostat] = None

    def __post_init__(self):
        if self.dt_fs <= 0:
            raise ValueError("time step must be positive")
        if self.scheme not in (LEAPFROG, VELOCITY_VERLET, STEEP):
            raise ValueError(f"unknown integrator {self.scheme!r}")
        if self.thermostat is not None and self.thermostat.tau < self.dt:
            raise ValueError("thermostat tau must be >= the time step")

    @property
    def dt(self) -> float:
        """Time step in ps."""
        return self.dt_fs * 1e-3


@dataclass
class EmConfig:
    initial_step: float = 0.01  # nm
    max_steps: int = 5000
    force_tolerance: float = 10.0  # kJ mol^-1 nm^-1
    grow: float = 1.2
    shrink: float = 0.2
    min_step: float = 1e-9

    def __post_init__(self):
        if self.initial_step <= 0:
            raise ValueError("initial step must be positive")
        if not self.grow > 1.0 > self.shrink > 0.0:
            raise ValueError("need grow > 1 > shrink > 0")


def _check_forces(forces):
    bad = ~np.all(np.isfinite(forces), axis=1)
    if bad.any():
        atom = int(np.nonzero(bad)[0][0])
        raise IntegrationError(f"non-finite force on atom {atom}: {forces[atom].tolist()}")


def leapfrog_step(state: State, forces: np.ndarray, dt: float, masses: np.ndarray) -> State:
    """One leapfrog step; ``state.velocities`` holds v(t - dt/2).

    v(t + dt/2) = v(t - dt/2) + dt F(t)/m ;  r(t + dt) = r(t) + dt v(t + dt/2)
    """
    _check_forces(forces)
    out = state.copy()
    out.velocities = state.velocities + dt * forces / masses[:, None]
    out.positions = state.positions + dt * out.velocities
    out.forces = np.array(forces, dtype=float, copy=True)
    out.step = state.step + 1
    out.time = state.time + dt
    return out


def half_step_velocities(velocities, forces, dt, masses, direction=-1.0):
    """Shift synchronized velocities by half a step (backward by default)."""
    return velocities + direction * 0.5 * dt * forces / masses[:, None]


def velocity_verlet_step(state: State, force_fn: ForceFn, dt: float,
                         masses: np.ndarray) -> State:
    """Kick-drift-kick; ``state.forces`` must be current for ``state.positions``."""
    _check_forces(state.forces)
    out = state.copy()
    inv_m = 1.0 / masses[:, None]
    v_half = state.velocities + 0.5 * dt * state.forces * inv_m
    out.positions = state.positions + dt * v_half
    forces, energy = force_fn(out)
    _check_forces(forces)
    out.forces = np.array(forces, dtype=float, copy=True)
    out.velocities = v_half + 0.5 * dt * out.forces * inv_m
    out.potential_energy = float(energy)
    out.step = state.step + 1
    out.time = state.time + dt
    return out


def berendsen_lambda(T_now: float, T0: float, tau: float, dt: float) -> float:
    if T_now <= 0:
        raise ValueError("Berendsen thermostat needs a positive current temperature")
    lam = np.sqrt(1.0 + (dt / tau) * (T0 / T_now - 1.0))
    return float(np.clip(lam, 0.8, 1.25))


def berendsen_thermostat(velocities: np.ndarray, T_now: float, T0: float, tau: float,
                         dt: float) -> np.ndarray:
    """Uniformly rescale velocities toward ``T0``; the factor is clamped to [0.8, 1.25]."""
    return velocities * berendsen_lambda(T_now, T0, tau, dt)


def pressure(kinetic: float, virial: float, volume: float) -> float:
    """Instantaneous pressure in bar from kinetic energy and pair virial sum(r_ij . F_j)."""
    return (2.0 * kinetic + virial) / (3.0 * volume) * BAR_PER_KJ_MOL_NM3


def berendsen_mu(P_now: float, P0: float, tau: float, dt: float, compressibility: float) -> float:
    mu = (1.0 - (dt / tau) * compressibility * (P0 - P_now)) ** (1.0 / 3.0)
    return float(np.clip(mu, 0.98, 1.02))


def berendsen_barostat(state: State, P_now: float, P0: float, tau: float, dt: float,
                       compressibility: float) -> tuple[State, float]:
    """Isotropically scale box and coordinates; returns ``(state', mu)``.

    Any neighbor list built for ``state`` is stale afterwards whenever
    ``mu != 1`` (``needs_rebuild`` detects the box change).
    """
    mu = berendsen_mu(P_now, P0, tau, dt, compressibility)
    if mu == 1.0:
        return state.copy(), mu
    out = state.copy()
    out.positions = state.positions * mu
    out.box = state.box.scaled(mu)
    return out, mu


@dataclass
class EmTrace:
    energies: list = field(default_factory=list)  # accepted energies, starting point first
    max_forces: list = field(default_factory=list)
    steps: list = field(default_factory=list)  # step size h at each trial
    accepted: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    @property
    def n_accepted(self) -> int:
        return int(sum(self.accepted))


def _max_force(forces):
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", forces, forces)))) if len(forces) else 0.0


def steepest_descent_minimize(state: State, force_fn: ForceFn,
                              cfg: EmConfig | None = None) -> tuple[State, EmTrace]:
    """Adaptive-step steepest descent.

    Trial move r' = r + h F / max|F_i|. Accepted moves grow h by ``grow``;
    rejected ones shrink it by ``shrink``. Stops once max|F_i| is within
    tolerance or after ``max_steps`` trials.
    """
    cfg = cfg or EmConfig()
    current = state.copy()
    forces, energy = force_fn(current)
    if not np.isfinite(energy):
        raise IntegrationError("initial energy is not finite")
    current.forces = np.array(forces, dtype=float)
    current.potential_energy = float(energy)
    trace = EmTrace()
    trace.energies.append(float(energy))
    fmax = _max_force(current.forces)
    trace.max_forces.append(fmax)
    h = cfg.initial_step
    while trace.iterations < cfg.max_steps:
        if fmax <= cfg.force_tolerance:
            trace.converged = True
            break
        trace.iterations += 1
        trial = current.copy()
        trial.positions = current.positions + h * current.forces / fmax
        t_forces, t_energy = force_fn(trial)
        trace.steps.append(h)
        if np.isfinite(t_energy) and t_energy < current.potential_energy:
            trial.forces = np.array(t_forces, dtype=float)
            trial.potential_energy = float(t_energy)
            trial.step = current.step + 1
            current = trial
            fmax = _max_force(current.forces)
            trace.energies.append(float(t_energy))
            trace.max_forces.append(fmax)
            trace.accepted.append(True)
            h *= cfg.grow
        else:
            trace.accepted.append(False)
            h *= cfg.shrink
            if h < cfg.min_step:
                raise LineSearchStall(
                    f"step size fell below {cfg.min_step:g} nm after {trace.iterations} "
                    f"iterations (max force {fmax:.3g})", state=current, trace=trace)
    else:
        trace.converged = fmax <= cfg.force_tolerance
    return current, trace
