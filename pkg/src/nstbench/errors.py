"""Exception hierarchy shared by every module in the package."""


class NSTError(Exception):
    """Base class for all engine errors."""


class SizeError(NSTError):
    pass


class ShapeError(NSTError):
    pass


class GeometryError(NSTError):
    pass


class NumericError(NSTError):
    pass


class ContractError(NSTError):
    pass


class ConfigError(NSTError):
    pass


class TapeMismatchError(NSTError):
    pass


class FileIOError(NSTError, OSError):
    """Unreadable or unwritable file."""


class FormatError(NSTError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
