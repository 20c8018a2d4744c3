"""Exception hierarchy shared by every module.

The CLI maps :class:`ContractError` to exit code 2 and
:class:`NumericError` to exit code 3.
"""


class ContractError(ValueError):
    """A precondition or shape contract was violated."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or could not be completed."""


class SolverError(NumericError):
    """The LP solver hit its iteration cap or failed."""


class FormatError(ContractError):
    """A file on disk does not match its declared binary or JSON format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StaleCacheError(ContractError):
    """A logit cache does not match the dataset or teacher it is loaded for."""


class DegeneratePlaneError(ContractError):
    """Two class logits are parallel inside a region, so they share no boundary there."""
