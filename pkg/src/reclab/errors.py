"""Exception types shared across the package."""


class RecLabError(Exception):
    """Base class for all package-specific errors."""


class ParseError(RecLabError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class InvariantError(RecLabError):
    pass


class ConfigError(RecLabError):
    pass


class NonFiniteLoss(RecLabError):
    pass


class EmptyTrainSplit(RecLabError):
    pass


class NoScorableRecords(RecLabError):
    pass


class VersionMismatch(RecLabError):
    pass


class CorruptFile(RecLabError):
    pass


class ZeroMass(RecLabError):
    pass


class DegenerateArm(RecLabError):
    pass


class RankDeficient(RecLabError):
    pass


class PropensityOutOfRange(RecLabError):
    pass


class EmptyGroup(RecLabError):
    pass


class CoverageViolation(RecLabError):
    pass


class ScaleMismatch(RecLabError):
    pass
