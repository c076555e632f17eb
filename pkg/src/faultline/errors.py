"""Domain errors. The CLI maps every :class:`FaultlineError` to exit code 1."""


class FaultlineError(Exception):
    pass


class KernelDefectError(FaultlineError):
    """A fault-free run crashed or failed its own verification."""


class NoTargetError(FaultlineError):
    """No rank executes any instance of the requested opcode class."""


class PreconditionError(FaultlineError):
    """A fault spec lies outside the profiled injection space."""


class SpaceTooLargeError(FaultlineError):
    """An exhaustive sweep would exceed the configured site cap."""
