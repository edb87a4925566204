"""Exception hierarchy shared by all modules."""


class MephdError(Exception):
    """Base class for every error raised by the package."""


class DomainError(MephdError, ValueError):
    """An argument lies outside the domain where a function is defined."""


class UnknownModel(MephdError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownDivergence(MephdError, ValueError):
    pass


class ParseError(MephdError, ValueError):
    """A data file could not be parsed.

    Attributes
    ----------
    row, column : int or None
        1-based location of the offending cell in the file.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class DimensionMismatch(MephdError, ValueError):
    pass


class NotConverged(MephdError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    ``reason`` is ``"dual-unbounded"`` when the iterates diverge in a way that
    certifies an empty feasible set, ``"max-iter"`` when the iteration budget
    ran out and ``"line-search"`` when no acceptable step could be found.
    """

    def __init__(self, message, iterations=0, grad_norm=float("nan"), last_t=None,
                 reason="max-iter"):
        self.iterations = iterations
        self.grad_norm = grad_norm
        self.last_t = last_t
        self.reason = reason
        super().__init__(message)


class SingularHessian(MephdError, ArithmeticError):
    pass


class SingularMatrix(MephdError, ArithmeticError):
    pass


class NoInteriorPoint(MephdError, RuntimeError):
    pass


class NoFeasibleTheta(MephdError, RuntimeError):
    pass


class DegreesOfFreedomError(MephdError, ValueError):
    pass
