"""Exception hierarchy shared across pulsenet."""


class PulsenetError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(PulsenetError, ValueError):
    pass


class ArgumentError(PulsenetError, ValueError):
    pass


class ContractError(PulsenetError, ValueError):
    """A function argument violates a documented contract (e.g. non-binary spikes)."""


class TapeStateError(PulsenetError, RuntimeError):
    pass


class SpecError(PulsenetError, ValueError):
    """Layer pipeline does not chain, or a config file is malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(PulsenetError, ValueError):
    """On-disk container is corrupt or of an unknown version."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ExportError(PulsenetError, ValueError):
    pass


class UnsupportedTopologyError(PulsenetError, ValueError):
    pass


class UnsupportedNodeError(PulsenetError, ValueError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)


class DiscretizationError(PulsenetError, ValueError):
    pass


class NumericError(PulsenetError, FloatingPointError):
    pass
