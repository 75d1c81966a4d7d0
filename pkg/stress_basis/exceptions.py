"""Exceptions raised by the stress-basis modules"""


class MeshError(ValueError):
    """A mesh, mesh file or feature line is malformed or cannot represent the request."""


class NumericalError(RuntimeError):
    """A factorization, eigensolve or ODE solve failed.

    `residual` carries the last residual or condition measure when one is known.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
