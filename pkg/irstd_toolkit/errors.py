"""Exception types shared across the toolkit.

Each error derives from the builtin that callers would naturally catch, so
``except ValueError`` still sees invalid arguments and ``except OSError``
still sees corpus loading failures.
"""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class NumericError(ArithmeticError):
    """A numerical routine failed (SVD did not converge, non-finite state)."""


class StateError(RuntimeError):
    """An object was used out of order, e.g. backward before forward."""


class CorpusLoadError(OSError):
    """An image, mask or manifest could not be loaded."""

    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class GenerationError(RuntimeError):
    """The synthetic scene generator could not satisfy its configuration."""


class QualityGuardError(RuntimeError):
    """A benchmark's accelerated output disagreed with its baseline."""
