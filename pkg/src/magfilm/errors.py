"""Exception types shared across the package."""


class MagfilmError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(MagfilmError):
    """A parameter violates its documented precondition."""


class NonEllipticError(MagfilmError):
    """Extended coefficient field lost ellipticity (det <= 0 somewhere)."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConvergenceError(MagfilmError):
    """An iterative solve failed to reach the requested residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class RasterizationError(MagfilmError):
    """A deformed cell could not be rasterized (inverted hexahedron)."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class InadmissibleRecoveryError(MagfilmError):
    """A recovery construction produced a non-orientation-preserving state."""


class ConfigError(MagfilmError):
    """A run configuration is malformed or violates parameter constraints."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
