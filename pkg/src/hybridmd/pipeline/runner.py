"""Stage orchestration: EM, then NVT and NPT equilibration, then production MD.

The NN potential is switched on (by default) only for the MD stage. Group
preprocessing happens once, right before the first NN-enabled stage, so the
classical and NN runs of the same seed share every state up to that point.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import (EnergyReport, State, Topology, kinetic_energy, temperature_from_kinetic)
from ..domain import InMemoryTransport, decompose, nn_inference_decomposed
from ..dynamics import (EmConfig, berendsen_barostat, berendsen_lambda, leapfrog_step, pressure,
                        steepest_descent_minimize, velocity_verlet_step)
from ..errors import (IntegrationError, LineSearchStall, OverlapError, SimulationBlowUp)
from ..forcefield import CoulombParams, ForceFieldParams, LjParams, compute_classical
from ..gro import read_gro, write_gro_topology
from ..neighbors import build_neighbor_list, needs_rebuild
from ..nnpot import NnInput, NnModel, infer, plan_group_preprocessing
from ..nnpot.groups import NnGroupPlan
from ..synthetic import generate_synthetic_system
from ..timing import PhaseClock
from .config import RunConfig

log = logging.getLogger(__name__)

PHASES = ("neighbor", "classical", "nn", "halo_exchange", "gather_scatter", "integration", "io")
LOG_FIELDS = ("stage", "step", "time", "bonded", "lj", "coulomb", "nn", "kinetic",
              "total_potential", "total", "temperature", "pressure", "box")


def ns_per_day(simulated_ps: float, wall_seconds: float) -> float:
    """Throughput: nanoseconds of simulated time per day of wall time."""
    if simulated_ps == 0:
        return 0.0
    if wall_seconds <= 0:
        raise ValueError("wall time must be positive")
    return (simulated_ps / 1000.0) / wall_seconds * 86400.0


@dataclass
class RunMetrics:
    stage_wall: dict = field(default_factory=dict)  # seconds
    stage_ps: dict = field(default_factory=dict)  # simulated time
    stage_steps: dict = field(default_factory=dict)
    phases: dict = field(default_factory=dict)  # stage -> {phase: seconds}
    nn_flops: int = 0
    nn_activation_bytes: int = 0  # peak over calls
    nn_calls: int = 0
    message_bytes: int = 0
    neighbor_builds: int = 0
    em_iterations: int = 0
    em_converged: bool = False
    em_stalled: bool = False

    def ns_per_day(self, stage: str = "md") -> float:
        wall = self.stage_wall.get(stage, 0.0)
        ps = self.stage_ps.get(stage, 0.0)
        return ns_per_day(ps, wall) if wall > 0 else 0.0

    def phase_totals(self, stage: str | None = None) -> dict:
        stages = [stage] if stage else list(self.phases)
        out = {p: 0.0 for p in PHASES}
        for s in stages:
            for p, t in self.phases.get(s, {}).items():
                out[p] += t
        return out


# -- forces -------------------------------------------------------------------

@dataclass
class NnSetup:
    plan: NnGroupPlan
    model: NnModel
    strategy: str = "gather_to_root"
    n_ranks: int = 1
    halo_mode: str = "symmetric"
    halo_width: float = 0.0


class ForceEngine:
    """Classical forces from a Verlet list plus, optionally, NN forces on a group."""

    def __init__(self, topo: Topology, ff: ForceFieldParams, skin: float = 0.1,
                 dtype=np.float32, clock: PhaseClock | None = None,
                 metrics: RunMetrics | None = None):
        self.topo = topo
        self.ff = ff
        self.skin = skin
        self.dtype = dtype
        self.clock = clock or PhaseClock()
        self.metrics = metrics or RunMetrics()
        self.nlist = None
        self.nn: NnSetup | None = None
        self._group_list = None
        self.transport = InMemoryTransport()

    def set_cutoff(self, rc: float) -> None:
        if rc != self.ff.rc:
            self.ff = self.ff.with_cutoff(rc)
            self.nlist = None

    def set_topology(self, topo: Topology) -> None:
        self.topo = topo
        self.nlist = None

    def enable_nn(self, setup: NnSetup) -> None:
        self.nn = setup
        self._group_list = None

    def _classical_list(self, state):
        if self.nlist is None or needs_rebuild(self.nlist, state):
            with self.clock.phase("neighbor"):
                self.nlist = build_neighbor_list(state, self.topo, self.ff.rc, self.skin)
            self.metrics.neighbor_builds += 1
        return self.nlist

    def _group_edges(self, state):
        atoms = self.nn.plan.group_atoms
        sub = State.from_positions(state.positions[atoms], state.box)
        rebuilt = False
        if self._group_list is None or needs_rebuild(self._group_list, sub):
            with self.clock.phase("neighbor"):
                self._group_list = build_neighbor_list(sub, None, self.nn.model.rc_model,
                                                       self.skin, mode="full")
            rebuilt = True
        return self._group_list.pairs, rebuilt

    def _nn_forces(self, state, forces):
        setup = self.nn
        atoms = setup.plan.group_atoms
        edges, _ = self._group_edges(state)
        if setup.n_ranks == 1:
            with self.clock.phase("nn"):
                out = infer(NnInput(state.positions[atoms], self.topo.types[atoms], state.box,
                                    edges=edges), setup.model, self.dtype)
            forces[atoms] += out.forces
            energy, virial, flops, nbytes = out.energy, out.virial, out.flops, \
                out.activation_bytes
        else:
            # ownership follows the atoms, so the layout is rebuilt for every evaluation
            with self.clock.phase("halo_exchange"):
                layout = decompose(state, self.topo, setup.n_ranks, setup.halo_width,
                                   grid="auto")
            res = nn_inference_decomposed(layout, state, self.topo, setup.model,
                                          setup.strategy, atoms, setup.halo_mode,
                                          self.transport, self.dtype, clock=self.clock)
            forces += res.forces
            energy, virial, flops, nbytes = res.energy, res.virial, res.flops, \
                res.activation_bytes
            self.metrics.message_bytes = self.transport.total_bytes()
        self.metrics.nn_flops += flops
        self.metrics.nn_activation_bytes = max(self.metrics.nn_activation_bytes, nbytes)
        self.metrics.nn_calls += 1
        return energy, virial

    def compute(self, state: State) -> EnergyReport:
        """Fill ``state.forces`` and return the energy report at ``state``."""
        nlist = self._classical_list(state)
        with self.clock.phase("classical"):
            report = compute_classical(state, self.topo, nlist, self.ff, self.dtype)
        if self.nn is not None and not self.nn.plan.is_empty:
            forces = state.forces
            report.nn, nn_virial = self._nn_forces(state, forces)
            report.virial += nn_virial
        self.last_report = report
        return report

    def force_fn(self, state: State):
        report = self.compute(state)
        return state.forces.copy(), report.total_potential


# -- stages ---------------------------------------------------------------------

@dataclass
class PipelineResult:
    state: State
    metrics: RunMetrics
    trajectory: list  # (stage, step, time, positions, box lengths)
    energy_log: list  # dict rows, LOG_FIELDS
    topology: Topology
    stage_states: dict  # state at the end of each stage
    plan: NnGroupPlan | None = None


class _Recorder:
    def __init__(self, output_dir, topo, clock):
        self.rows, self.frames = [], []
        self.topo, self.clock = topo, clock
        self.output_dir = Path(output_dir) if output_dir else None
        self._traj = None
        if self.output_dir:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self._traj = (self.output_dir / "trajectory.gro").open("w")

    def row(self, stage, state, report, press):
        with self.clock.phase("io"):
            self.rows.append({
                "stage": stage, "step": state.step, "time": state.time,
                "bonded": report.bonded, "lj": report.lj, "coulomb": report.coulomb,
                "nn": report.nn, "kinetic": report.kinetic,
                "total_potential": report.total_potential, "total": report.total,
                "temperature": report.temperature, "pressure": press,
                "box": state.box.lengths[0]})

    def frame(self, stage, state):
        with self.clock.phase("io"):
            self.frames.append((stage, state.step, state.time, state.positions.copy(),
                                state.box.lengths))
            if self._traj:
                self._traj.write(write_gro_topology(
                    state, self.topo, title=f"{stage} step={state.step} t={state.time:.4f}"))

    def close(self):
        if self._traj:
            self._traj.close()
        if self.output_dir:
            write_energy_csv(self.rows, self.output_dir / "energy.csv")


def write_energy_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v)
                             for k, v in row.items()})


def _blowup_guard(stage, step, fn, *args):
    try:
        report = fn(*args)
    except (OverlapError, IntegrationError) as exc:
        raise SimulationBlowUp(stage, step, str(exc)) from exc
    if not np.isfinite(report.total_potential):
        raise SimulationBlowUp(stage, step)
    return report


def run_em(state, engine: ForceEngine, cfg: RunConfig, metrics: RunMetrics) -> State:
    em = cfg.em
    engine.set_cutoff(em.rcutoff)

    def force_fn(s):
        report = _blowup_guard("em", s.step, engine.compute, s)
        return s.forces.copy(), report.total_potential

    try:
        out, trace = steepest_descent_minimize(
            state, force_fn, EmConfig(em.initial_step, em.max_steps, em.force_tolerance))
        metrics.em_iterations = trace.iterations
        metrics.em_converged = trace.converged
    except LineSearchStall as stall:
        log.warning("energy minimization stalled (%s); continuing from the best state", stall)
        out = stall.state
        metrics.em_iterations = stall.trace.iterations
        metrics.em_stalled = True
    out.velocities = state.velocities.copy()
    return out


def run_dynamics(stage: str, state: State, engine: ForceEngine, cfg: RunConfig,
                 recorder: _Recorder, thermostat: bool, barostat: bool) -> State:
    block = cfg.stage(stage)
    engine.set_cutoff(block.rcutoff)
    masses = engine.topo.masses
    n = engine.topo.n_atoms
    dt = block.dt * 1e-3
    clock = engine.clock
    state = state.copy()
    state.step, state.time = 0, 0.0
    report = _blowup_guard(stage, 0, engine.compute, state)
    leapfrog = block.integrator == "leapfrog"
    if leapfrog:
        # velocities become v(t - dt/2)
        state.velocities = state.velocities - 0.5 * dt * state.forces / masses[:, None]

    def synced(s):
        if leapfrog:
            return s.velocities + 0.5 * dt * s.forces / masses[:, None]
        return s.velocities

    for step in range(block.steps + 1):
        with clock.phase("integration"):
            ke = kinetic_energy(synced(state), masses)
            temp = temperature_from_kinetic(ke, n)
            report.kinetic, report.temperature = ke, temp
            press = pressure(ke, report.virial, state.box.volume)
        if (block.nstlog and step % block.nstlog == 0) or step == block.steps:
            recorder.row(stage, state, report, press)
        if block.nstxout and step % block.nstxout == 0:
            recorder.frame(stage, state)
        if step == block.steps:
            break
        if leapfrog:
            with clock.phase("integration"):
                try:
                    new = leapfrog_step(state, state.forces, dt, masses)
                except IntegrationError as exc:
                    raise SimulationBlowUp(stage, step, str(exc)) from exc
        else:
            try:
                new = velocity_verlet_step(state, engine.force_fn, dt, masses)
            except (OverlapError, IntegrationError) as exc:
                raise SimulationBlowUp(stage, step + 1, str(exc)) from exc
            report = engine.last_report
        with clock.phase("integration"):
            if thermostat and temp > 0:
                lam = berendsen_lambda(temp, block.temperature, block.tau_t, dt)
                new.velocities = new.velocities * lam
            if barostat:
                new, _ = berendsen_barostat(new, press, block.pressure, block.tau_p, dt,
                                            block.compressibility)
        if leapfrog or barostat:
            report = _blowup_guard(stage, step + 1, engine.compute, new)
        elif not np.isfinite(report.total_potential):
            raise SimulationBlowUp(stage, step + 1)
        state = new
    if leapfrog:
        state.velocities = synced(state)
    return state


# -- pipeline -------------------------------------------------------------------

def force_field_from_config(cfg: RunConfig, rc: float | None = None) -> ForceFieldParams:
    ff = cfg.forcefield
    rc = rc if rc is not None else cfg.md.rcutoff
    return ForceFieldParams(LjParams(ff.sigma, ff.epsilon),
                            CoulombParams(ff.coulomb, rc, ff.epsilon_rf), rc)


def build_system(cfg: RunConfig) -> tuple[Topology, State]:
    s = cfg.system
    topo, state = generate_synthetic_system(s.n_atoms, s.density, s.fraction_grouped,
                                            seed=cfg.general.seed, temperature=s.temperature)
    if s.gro:
        _, loaded = read_gro(Path(s.gro).read_text())
        if loaded.n_atoms != topo.n_atoms:
            from ..errors import ConfigError
            raise ConfigError(f"[system] gro: file has {loaded.n_atoms} atoms, expected "
                              f"{topo.n_atoms}")
        state = loaded
    return topo, state


def build_model(cfg: RunConfig, n_types: int) -> NnModel:
    if cfg.nn.model:
        return NnModel.load(cfg.nn.model)
    return NnModel.create(cfg.nn.family, n_types, rc_model=cfg.nn.rc_model,
                          hidden=cfg.nn.hidden, depth=cfg.nn_depth, seed=cfg.nn.model_seed)


def run_pipeline(cfg: RunConfig, system: tuple | None = None, output_dir=None,
                 model: NnModel | None = None, stages=("em", "nvt", "npt", "md")
                 ) -> PipelineResult:
    """Run the configured stages in order and collect metrics and outputs."""
    topo, state = system if system is not None else build_system(cfg)
    dtype = np.float64 if cfg.general.precision == "fp64" else np.float32
    metrics = RunMetrics()
    engine = ForceEngine(topo, force_field_from_config(cfg, cfg.em.rcutoff),
                         cfg.general.neighbor_skin, dtype, metrics=metrics)
    recorder = _Recorder(output_dir, topo, engine.clock)
    nn_stages = cfg.nn_stages
    for early in ("em", "nvt", "npt"):
        if early in nn_stages:
            log.warning("NN potential enabled in the %s stage; by default it only runs in md",
                        early)
    plan = None
    stage_states = {}
    try:
        for stage in ("em", "nvt", "npt", "md"):
            if stage not in stages:
                continue
            if stage in nn_stages and plan is None:
                new_topo, plan = plan_group_preprocessing(topo, cfg.nn.group)
                nn_model = model or build_model(cfg, topo.n_types)
                engine.set_topology(new_topo)
                engine.enable_nn(NnSetup(plan, nn_model, cfg.nn.strategy, cfg.nn.n_ranks,
                                         cfg.nn.halo_mode, cfg.effective_halo_width))
                recorder.topo = new_topo
            engine.clock = PhaseClock()
            recorder.clock = engine.clock
            start = time.perf_counter()
            if stage == "em":
                state = run_em(state, engine, cfg, metrics)
                metrics.stage_ps[stage] = 0.0
                metrics.stage_steps[stage] = metrics.em_iterations
            else:
                block = cfg.stage(stage)
                state = run_dynamics(stage, state, engine, cfg, recorder,
                                     thermostat=True, barostat=(stage == "npt"))
                metrics.stage_ps[stage] = block.steps * block.dt * 1e-3
                metrics.stage_steps[stage] = block.steps
            metrics.stage_wall[stage] = time.perf_counter() - start
            metrics.phases[stage] = {p: engine.clock.totals.get(p, 0.0) for p in PHASES}
            stage_states[stage] = state.copy()
    finally:
        recorder.close()
    return PipelineResult(state, metrics, recorder.frames, recorder.rows, engine.topo,
                          stage_states, plan)
