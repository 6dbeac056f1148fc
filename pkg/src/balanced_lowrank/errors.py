"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the front-end can report
a single machine-parsable error line without a lookup table.
"""


class BalancedLowRankError(Exception):
    exit_code = 3


class InvalidInput(BalancedLowRankError, ValueError):
    pass


class NearSingular(BalancedLowRankError):
    def __init__(self, message, eigenvalue):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class RankDeficient(BalancedLowRankError):
    pass


class InfeasiblePoint(BalancedLowRankError):
    pass


class InfeasibleDimensions(BalancedLowRankError, ValueError):
    pass


class CapacityExhausted(BalancedLowRankError):
    pass


class DegenerateBaseline(BalancedLowRankError, ZeroDivisionError):
    pass


class TaskAborted(BalancedLowRankError):
    """A module error raised while training one task, tagged with where it happened."""

    def __init__(self, task, layer, step, cause):
        super().__init__(
            f"task {task} layer {layer} step {step}: {type(cause).__name__}: {cause}"
        )
        self.task = task
        self.layer = layer
        self.step = step
        self.cause = cause


class ConfigError(BalancedLowRankError):
    exit_code = 2


class ParseError(BalancedLowRankError):
    exit_code = 4

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
