"""Exception types shared across the package.

Every error the library raises deliberately is one of these, so callers
(and the command line front end) can map failures to exit codes without
string matching.
"""


class ContractViolationError(ValueError):
    """An argument violated a documented precondition (wrong sign, empty
    mask, mismatched dimension, ...)."""


class InfeasibleGaugeError(ValueError):
    """The point lies outside the cone generated by the atoms, so its
    gauge is +inf and no conic decomposition exists."""


class UnboundedConjugateError(ArithmeticError):
    """The penalty conjugate is +inf at the requested argument (linear
    penalty queried beyond its slope)."""


class UnboundedStepError(ArithmeticError):
    """The scalar step subproblem has no finite minimizer; the overall
    objective is unbounded below along the selected ray."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
        self.result = None  # attached by the solver driver when available


class DivergenceError(RuntimeError):
    """Iterates overflowed or left the trusted numeric range."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
        self.result = None  # attached by the solver driver when available


class CertificateCorruptionError(RuntimeError):
    """A quantity that certifies optimality (the duality gap) came out
    negative beyond tolerance; screening aborts rather than prune."""


class FileFormatError(ValueError):
    """An input file does not match its documented byte/text layout.

    ``offset`` points at the first offending byte (or line) when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class ReferenceMismatchError(ValueError):
    """A residual/certificate computation was handed a reference solution
    produced for a different problem (fingerprints disagree)."""
