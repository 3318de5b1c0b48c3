"""Synthetic clustered-cell microscopy data, latent style transfer, mixing and count evaluation."""

from .errors import (
    BackendError,
    CellSimError,
    ConfigError,
    DataError,
    FormatError,
    ParameterError,
    ShapeError,
)

__version__ = "0.1.0"
