"""Exception types shared across the package."""


class NskError(Exception):
    """Base class for all solver-side failures."""


class VacuumError(NskError):
    """Density reached zero (or below) somewhere in the slab."""


class DegenerateThresholdError(NskError):
    """The density gradient vanishes inside the slab, so no finite
    capillarity coefficient stabilizes the profile and the threshold
    eigenproblem loses its positive-definite denominator."""


class EigensolverError(NskError):
    """A generalized eigensolve or the growth-rate fixed point failed to
    converge."""


class SimulationError(NskError):
    """Time stepping failed (blow-up, projection stall, bad restart)."""


class CflError(SimulationError):
    """Fixed-step run violated a stability limit (post-step blow-up)."""


class ConfigError(NskError):
    """Experiment specification could not be parsed or validated."""
