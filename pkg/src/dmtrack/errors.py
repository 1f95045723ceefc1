"""Exception types shared across the dmtrack package."""


class DmtrackError(Exception):
    """Base class for package-specific failures."""


class ConfigError(DmtrackError):
    """Invalid configuration: bad graph, noise schedule, or experiment file."""


class SolverFailure(DmtrackError):
    """An iterative solver exhausted its iteration budget or produced non-finite state."""


class InfeasibleProblemError(DmtrackError):
    """The coupling constraint cannot be satisfied within the local box sets."""


class InadmissibleDecayError(DmtrackError):
    """The noise decay coefficient q lies outside the admissible interval for this stepsize."""
