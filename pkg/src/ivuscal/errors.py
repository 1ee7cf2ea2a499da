"""Exception types shared across the package."""


class IvusCalError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(IvusCalError):
    """Point configuration cannot determine a rigid transform."""


class InvalidSpec(IvusCalError, ValueError):
    """A phantom, acquisition or optimizer specification violates its invariants."""


class NoVisibleLandmarks(IvusCalError):
    """A simulated acquisition produced no observations."""


class EmptyInput(IvusCalError, ValueError):
    pass


class ParseError(IvusCalError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DuplicateId(ParseError):
    pass


class NonRigidPose(ParseError):
    pass


class VersionMismatch(ParseError):
    pass


class InconsistentData(IvusCalError):
    """Observations refer to landmarks or frames that do not exist."""


class UnknownLandmark(InconsistentData):
    pass


class UnknownFrame(InconsistentData):
    pass


class IoError(IvusCalError, OSError):
    pass
