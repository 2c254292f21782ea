"""Exception types shared across the package.

``ValueError`` is used directly for invalid arguments; the classes here
cover failure modes that need their own CLI exit codes.
"""

from __future__ import annotations


class NumericalError(RuntimeError):
    """A numerical routine failed to meet its accuracy contract."""


class DivergedError(RuntimeError):
    """Iterative training/optimization blew up.

    Carries the step index at which divergence was detected.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class InvalidStateError(RuntimeError):
    """An object was used outside its valid lifecycle (stale cache, missing manifest, ...)."""
