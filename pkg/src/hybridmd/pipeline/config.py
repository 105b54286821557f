"""Run configuration: ``key = value`` lines under ``[section]`` headers, ``;`` comments.

Defaults follow the production-scale protocol (EM, then 50k-step NVT and NPT
at 2 fs with a 1.2 nm cutoff, then 10k MD steps at 1 fs with 0.7 nm). The
``desk`` preset shortens the equilibration and MD runs so a full pipeline
finishes in minutes; explicit keys always win over either preset.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from ..errors import ConfigError

PRODUCTION, DESK = "production", "desk"
PRESET_STEPS = {DESK: {"nvt": 2000, "npt": 2000, "md": 1000},
                PRODUCTION: {"nvt": 50000, "npt": 50000, "md": 10000}}
STAGES = ("em", "nvt", "npt", "md")


@dataclass
class GeneralConfig:
    seed: int = 0
    precision: str = "fp32"
    workers: int = 1
    neighbor_skin: float = 0.1


@dataclass
class SystemConfig:
    n_atoms: int = 582
    density: float = 25.0
    fraction_grouped: float = 0.25
    temperature: float = 300.0
    gro: str = ""


@dataclass
class ForceFieldConfig:
    coulomb: str = "reaction_field"
    epsilon_rf: float = 78.0
    sigma: tuple = (0.32, 0.30)
    epsilon: tuple = (0.40, 0.65)


@dataclass
class EmStageConfig:
    max_steps: int = 5000
    initial_step: float = 0.01
    force_tolerance: float = 10.0
    rcutoff: float = 1.2


@dataclass
class DynamicsStageConfig:
    integrator: str = "leapfrog"
    dt: float = 2.0  # fs
    steps: int = 50000
    rcutoff: float = 1.2
    temperature: float = 300.0
    tau_t: float = 0.1
    pressure: float = 1.0
    tau_p: float = 2.0
    compressibility: float = 4.5e-5
    nstlog: int = 100
    nstxout: int = 0


def _nvt():
    return DynamicsStageConfig()


def _npt():
    return DynamicsStageConfig()


def _md():
    return DynamicsStageConfig(dt=1.0, steps=10000, rcutoff=0.7, nstxout=500)


@dataclass
class NnConfig:
    stages: tuple = ("md",)
    group: str = "protein"
    model: str = ""
    family: str = "message_passing"
    depth: int = 3
    rc_model: float = 0.6
    hidden: int = 32
    model_seed: int = 0
    strategy: str = "gather_to_root"
    n_ranks: int = 1
    halo_mode: str = "symmetric"
    halo_width: float = 0.0  # 0 means: the model's receptive field


@dataclass
class RunConfig:
    general: GeneralConfig = field(default_factory=GeneralConfig)
    system: SystemConfig = field(default_factory=SystemConfig)
    forcefield: ForceFieldConfig = field(default_factory=ForceFieldConfig)
    em: EmStageConfig = field(default_factory=EmStageConfig)
    nvt: DynamicsStageConfig = field(default_factory=_nvt)
    npt: DynamicsStageConfig = field(default_factory=_npt)
    md: DynamicsStageConfig = field(default_factory=_md)
    nn: NnConfig = field(default_factory=NnConfig)

    SECTIONS = ("general", "system", "forcefield", "em", "nvt", "npt", "md", "nn")

    def stage(self, name: str):
        return getattr(self, name)

    @property
    def nn_stages(self) -> tuple:
        return tuple(s for s in self.nn.stages if s != "none")

    @property
    def nn_depth(self) -> int:
        """Model depth; embed_fit models always have depth 1 (``depth`` is ignored)."""
        return 1 if self.nn.family == "embed_fit" else self.nn.depth

    @property
    def effective_halo_width(self) -> float:
        if self.nn.halo_width > 0:
            return self.nn.halo_width
        return self.nn_depth * self.nn.rc_model

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


CHOICES = {
    ("general", "precision"): ("fp32", "fp64"),
    ("forcefield", "coulomb"): ("cutoff_shifted", "reaction_field"),
    ("nn", "family"): ("embed_fit", "message_passing"),
    ("nn", "strategy"): ("gather_to_root", "halo_inference"),
    ("nn", "halo_mode"): ("asymmetric", "symmetric"),
}
for _stage in ("nvt", "npt", "md"):
    CHOICES[(_stage, "integrator")] = ("leapfrog", "velocity_verlet")


def _convert(section, key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("yes", "no", "true", "false"):
                raise ValueError
            value = text.lower() in ("yes", "true")
        elif isinstance(default, int):
            value = int(text)
        elif isinstance(default, float):
            value = float(text)
        elif isinstance(default, tuple):
            items = [t.strip() for t in text.replace(",", " ").split()]
            value = tuple(type(default[0])(t) if default else t for t in items)
        else:
            value = text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {text!r} as "
                          f"{type(default).__name__}") from None
    allowed = CHOICES.get((section, key))
    if allowed and value not in allowed:
        raise ConfigError(f"[{section}] {key}: {value!r} is not one of {', '.join(allowed)}")
    return value


def parse_config(text: str, preset: str = PRODUCTION) -> RunConfig:
    """Parse a config file; unknown sections or keys are errors."""
    if preset not in PRESET_STEPS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = RunConfig()
    for stage, steps in PRESET_STEPS[preset].items():
        cfg.stage(stage).steps = steps
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in RunConfig.SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        block = getattr(cfg, section)
        names = {f.name for f in fields(block)}
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        setattr(block, key, _convert(section, key, value, getattr(block, key)))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    for stage in ("nvt", "npt", "md"):
        block = cfg.stage(stage)
        if block.dt <= 0:
            raise ConfigError(f"[{stage}] dt must be positive")
        if block.steps < 0:
            raise ConfigError(f"[{stage}] steps must be >= 0")
        if block.rcutoff <= 0:
            raise ConfigError(f"[{stage}] rcutoff must be positive")
        if block.tau_t < block.dt * 1e-3:
            raise ConfigError(f"[{stage}] tau_t must be >= dt")
    if cfg.em.rcutoff <= 0:
        raise ConfigError("[em] rcutoff must be positive")
    if len(cfg.forcefield.sigma) != len(cfg.forcefield.epsilon):
        raise ConfigError("[forcefield] sigma and epsilon need the same number of entries")
    for stage in cfg.nn.stages:
        if stage not in STAGES + ("none",):
            raise ConfigError(f"[nn] stages: unknown stage {stage!r}")
    if cfg.nn.n_ranks < 1:
        raise ConfigError("[nn] n_ranks must be >= 1")
    if cfg.nn.depth < 1:
        raise ConfigError("[nn] depth must be >= 1")
    if cfg.nn.strategy == "halo_inference":
        depth = cfg.nn_depth
        need = depth * cfg.nn.rc_model
        if cfg.nn.halo_width and cfg.nn.halo_width < need - 1e-12:
            raise ConfigError(f"[nn] halo_width = {cfg.nn.halo_width} is below the receptive "
                              f"field {depth} x {cfg.nn.rc_model} = {need:.3f} nm")
        if cfg.nn.halo_mode != "symmetric":
            raise ConfigError("[nn] halo_mode must be symmetric for halo_inference")
    for stage in cfg.nn_stages:
        if cfg.nn.rc_model > cfg.stage(stage).rcutoff + 1e-12:
            raise ConfigError(f"[nn] rc_model {cfg.nn.rc_model} exceeds the [{stage}] cutoff")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Canonical text with every key spelled out; parsing it gives ``cfg`` back."""
    lines = ["; hybridmd run configuration"]
    for section in RunConfig.SECTIONS:
        lines.append(f"[{section}]")
        block = getattr(cfg, section)
        for f in fields(block):
            lines.append(f"{f.name} = {_format(getattr(block, f.name))}")
        lines.append("")
    return "\n".join(lines)
