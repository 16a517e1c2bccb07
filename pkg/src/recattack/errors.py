"""Exception types shared across the toolkit."""


class ParseError(ValueError):
    """A record in an input stream could not be parsed."""

    def __init__(self, line_no, line, reason):
        super().__init__(f"line {line_no}: {reason}: {line!r}")
        self.line_no = line_no


class BudgetError(ValueError):
    """An injection exceeds the attacker's fake-user budget."""


class TrainingDivergence(RuntimeError):
    """A training loss or gradient became non-finite."""


class UnsupportedMode(RuntimeError):
    """Operation not available for this model variant."""


class ConstraintInfeasible(RuntimeError):
    """An action constraint cannot be satisfied (e.g. one community only)."""


class UndefinedMetric(ValueError):
    """Metric undefined for this input (e.g. empty relevant set)."""
