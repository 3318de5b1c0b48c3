"""Exception hierarchy.

Every error carries a short ``category`` string which the CLI prints as the
first token of its one-line error message.
"""


class CellSimError(Exception):
    category = "error"


class ConfigError(CellSimError, ValueError):
    category = "config"


class ParameterError(CellSimError, ValueError):
    category = "parameter"


class ShapeError(CellSimError, ValueError):
    category = "shape"


class FormatError(CellSimError, ValueError):
    category = "format"


class DataError(CellSimError):
    category = "data"


class BackendError(CellSimError, RuntimeError):
    category = "backend"
