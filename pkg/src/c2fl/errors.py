"""Exception types and the process exit codes they map to."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class SimulatorError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class ConfigError(SimulatorError):
    """Invalid configuration value, inconsistent shape, or bad argument."""

    exit_code = EXIT_CONFIG


class FormatError(SimulatorError):
    """Malformed or inconsistent external file (embeddings, datasets, metrics)."""

    exit_code = EXIT_IO


class NumericError(SimulatorError):
    """Non-finite value detected where the protocol requires finite numbers."""

    exit_code = EXIT_NUMERIC


class DegenerateInputError(SimulatorError):
    """Input without enough structure for the requested computation
    (zero-norm feature, zero-variance representation)."""

    exit_code = EXIT_NUMERIC
