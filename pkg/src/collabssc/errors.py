class FormatError(ValueError):
    """A binary file or buffer failed to parse.

    ``offset`` is the byte position where decoding stopped.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class SceneGenerationError(RuntimeError):
    """A scene config cannot be realized (e.g. agents do not fit)."""


class DeliveryError(RuntimeError):
    """The channel had no snapshot old enough to serve the requested delay."""
