"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto the
documented process exit codes (1 config, 2 runtime blow-up, 3 constraint).
"""


class HybridMDError(Exception):
    exit_code = 3


class ConfigError(HybridMDError):
    exit_code = 1


class GroParseError(HybridMDError):
    exit_code = 1

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GeometryError(HybridMDError):
    """Cutoff or box geometry violates minimum-image validity."""


class DegreesOfFreedomError(HybridMDError):
    pass


class OverlapError(HybridMDError):
    """Two atoms closer than the overlap threshold; treated as a blow-up."""

    exit_code = 2


class IntegrationError(HybridMDError):
    exit_code = 2


class LineSearchStall(HybridMDError):
    exit_code = 2

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace


class SimulationBlowUp(HybridMDError):
    exit_code = 2

    def __init__(self, stage, step, message="non-finite energy"):
        super().__init__(f"stage {stage!r}, step {step}: {message}")
        self.stage = stage
        self.step = step


class ModelError(HybridMDError):
    pass


class TrainingError(HybridMDError):
    exit_code = 2


class ReceptiveFieldError(HybridMDError):
    """Halo narrower than the model's receptive field."""


class DecompositionError(HybridMDError):
    pass


class HaloTopologyError(HybridMDError):
    """Halo mode cannot provide the atom environment an operation needs."""


class RoutingError(HybridMDError):
    pass
