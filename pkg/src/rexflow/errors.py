"""Exception hierarchy shared by every stage of the pipeline."""


class RexflowError(Exception):
    """Base class for all errors raised by rexflow."""


class DataError(RexflowError, ValueError):
    """Malformed or inconsistent input data (CSV rows, vector files, spans)."""


class ConfigError(RexflowError, ValueError):
    """Invalid run configuration or unsupported option combination."""


class TrainingError(RexflowError, RuntimeError):
    """Training could not complete (e.g. the loss became non-finite)."""
