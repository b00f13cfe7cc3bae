"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: ConfigError -> 2, DataError -> 3,
CheckpointError -> 4, StoreFormatError -> 5.
"""


class T3TimeError(Exception):
    """Base class for all package errors."""


class DimensionError(T3TimeError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(T3TimeError, ValueError):
    """Invalid configuration value or unparseable config input."""


class ContractError(T3TimeError, RuntimeError):
    """An operation was called outside its documented contract."""


class DataError(T3TimeError, ValueError):
    """Dataset problem: unparseable cell, bad ordering, insufficient rows."""


class InsufficientDataError(DataError):
    """Too few time steps to build a single (lookback, horizon) window."""


class CheckpointError(T3TimeError, ValueError):
    """Checkpoint file does not match the expected format or config."""


class StoreFormatError(T3TimeError, ValueError):
    """Embedding store file is malformed; `offset` is the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
