"""Exception types. Each maps onto a CLI exit code."""


class RuleEmbedError(Exception):
    exit_code = 4


class ConfigError(RuleEmbedError, ValueError):
    exit_code = 1


class DataError(RuleEmbedError, ValueError):
    exit_code = 2


class PreconditionError(DataError):
    """A stage was asked to resume but an upstream artifact is missing."""


class DivergenceError(RuleEmbedError, ArithmeticError):
    exit_code = 3


class InvariantError(RuleEmbedError, AssertionError):
    exit_code = 4


class BudgetError(RuleEmbedError, ValueError):
    """A graph pattern is larger than the configured matching budget."""

    exit_code = 1
