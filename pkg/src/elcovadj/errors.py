"""Exception hierarchy shared by every module.

Each class carries a ``category`` used by the command-line front end to
pick an exit code.
"""


class ElCovAdjError(Exception):
    category = "numeric"


class InputError(ElCovAdjError, ValueError):
    """Malformed data: missing columns, unparsable cells, bad labels."""

    category = "input"


class SchemaError(InputError):
    pass


class ParseError(InputError):
    pass


class DomainError(InputError):
    pass


class SpecError(ElCovAdjError, ValueError):
    """Invalid constraint recipe or configuration."""

    category = "spec"


class NumericError(ElCovAdjError, ArithmeticError):
    category = "numeric"


class FeasibilityError(NumericError):
    """Zero lies outside the convex hull of the constraint vectors."""


class ContractError(ElCovAdjError, RuntimeError):
    """An operation was called on a result that does not satisfy its precondition."""

    category = "numeric"
