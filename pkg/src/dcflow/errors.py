"""Exception types raised by dcflow.

Every error that callers are expected to handle derives from
:class:`DcflowError`, so ``except DcflowError`` catches anything the
library raises on bad input or an unattainable computation. Plain
``ValueError``/``TypeError`` are reserved for programming mistakes
(wrong argument types, impossible enum values).
"""

from __future__ import annotations


class DcflowError(Exception):
    """Base class for all dcflow errors."""


class InvalidDistributionError(DcflowError):
    """A distribution specification violates its family's constraints.

    ``violations`` lists every problem found, not just the first one.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ScenarioError(DcflowError):
    """A scenario document failed validation.

    ``problems`` contains one message per defect, each prefixed with a
    JSON-path-like location such as ``workflow.children[1].slot``.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DivergenceError(DcflowError):
    """A requested moment does not converge for this distribution."""


class HorizonError(DcflowError):
    """The numeric grid horizon is unusable (non-finite or absurdly large)."""


class GridOverflowError(DcflowError):
    """A numeric operation would exceed the grid point budget."""


class InstabilityError(DcflowError):
    """A queueing station is saturated: arrival rate >= service rate."""


class InfeasibleRatesError(DcflowError):
    """No rate split satisfies the stability constraints of every branch."""


class AllocationError(DcflowError):
    """No feasible assignment of servers to slots exists."""


class CombinatorialLimitError(DcflowError):
    """Exhaustive search was refused because the instance is too large."""
