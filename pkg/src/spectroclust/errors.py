"""Exception hierarchy.

Each class carries the process exit code the CLI maps it to.
"""


class SpectroclustError(Exception):
    exit_code = 4


class ConfigError(SpectroclustError, ValueError):
    """Invalid configuration or parameter combination."""

    exit_code = 2


class DataError(SpectroclustError, ValueError):
    """Input data is malformed or violates a precondition."""

    exit_code = 3


class IngestionError(DataError):
    """A container or record file could not be parsed."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class EmptyGridError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class ZeroVarianceError(DegenerateDataError):
    pass


class NumericalError(SpectroclustError, RuntimeError):
    exit_code = 4


class InfeasibleError(NumericalError):
    """Clustering cannot be performed (e.g. fewer points than clusters)."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
