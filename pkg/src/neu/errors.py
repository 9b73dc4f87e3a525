"""Exception types shared across the package."""


class NeuError(Exception):
    """Base class for all package errors."""


class DomainError(NeuError, ValueError):
    """An argument is outside the operation's domain (bad shape, sign, or value)."""


class PreconditionError(DomainError):
    """A documented precondition on the inputs does not hold."""


class InvertibilityError(NeuError):
    """A map cannot be inverted for the given parameters."""


class ConvergenceError(NeuError):
    """An iterative solver did not converge within its budget."""


class ConfigError(NeuError, ValueError):
    """Invalid or inconsistent configuration."""


class EvaluationError(NeuError):
    """A learning algorithm could not produce a finite optimal evaluation."""


class ConstructionError(NeuError):
    """A constructive routine (path finding, chain building) failed; carries diagnostics."""
