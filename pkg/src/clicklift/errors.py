"""Exception taxonomy shared across the package."""


class ClickLiftError(Exception):
    """Base class for all package errors."""


class ConfigError(ClickLiftError):
    """A configuration value violates its contract (bad matrix, size <= 0, ...)."""


class InputError(ClickLiftError):
    """A runtime input is malformed (NaN coordinates, length mismatch, empty set)."""


class FormatError(ClickLiftError):
    """An on-disk payload is malformed. Carries the file path and byte offset."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        detail = message
        if path is not None:
            detail += f" [file: {path}]"
        if offset is not None:
            detail += f" [byte offset: {offset}]"
        super().__init__(detail)


class MaskContractError(ClickLiftError):
    """A mask provider returned a mask that does not contain its prompt pixel."""


class SceneSpecError(ConfigError):
    """A synthetic scene description is inconsistent (overlapping boxes, bad density)."""
