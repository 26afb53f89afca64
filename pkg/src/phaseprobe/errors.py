"""Exception hierarchy.

``InputError`` subclasses signal malformed input files or configs (CLI exit
code 2); ``AnalysisError`` subclasses signal that a well-formed input could
not be analysed (exit code 1).
"""


class PhaseProbeError(Exception):
    pass


class InputError(PhaseProbeError, ValueError):
    pass


class AnalysisError(PhaseProbeError, ValueError):
    pass


class ParseError(InputError):
    pass


class RangeValidationError(InputError):
    pass


class ConfigError(InputError):
    pass


class CalibrationError(AnalysisError):
    pass


class NoFringeError(AnalysisError):
    """No spectral peak qualified as a lattice fringe."""
