"""Exception hierarchy shared by every module."""


class LineRegError(Exception):
    """Base class for all errors raised by linereg."""


class ZeroDirection(LineRegError, ValueError):
    pass


class NonLineInput(LineRegError, ValueError):
    pass


class DegenerateSegment(LineRegError, ValueError):
    pass


class TooFewLines(LineRegError, ValueError):
    pass


class DegenerateRow(LineRegError, ValueError):
    pass


class KTooLarge(LineRegError, ValueError):
    pass


class DegenerateDirections(LineRegError, ValueError):
    """All direction pairs are parallel, rotation about the common axis is unobservable."""


class RankDeficient(LineRegError, ValueError):
    """Translation system has a null space (parallel lines)."""


class NoValidHypothesis(LineRegError, RuntimeError):
    pass


class NumericalFailure(LineRegError, ArithmeticError):
    """Base for numerical failures (CLI exit code 3)."""


class NumericalUnderflow(NumericalFailure):
    pass


class NonFiniteGradient(NumericalFailure):
    pass


class ParseError(LineRegError, ValueError):
    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where += f"{path}"
        if lineno is not None:
            where += f":{lineno}"
        super().__init__(f"{where}: {message}" if where else message)


class MissingCheckpoint(LineRegError, FileNotFoundError):
    pass


class ConfigError(LineRegError, ValueError):
    pass


class CheckpointMismatch(LineRegError, ValueError):
    """Checkpoint tensors disagree with the configured network shapes."""
