"""Exception hierarchy shared by every module."""


class RsrwkvError(Exception):
    """Base class for all library errors."""


class ShapeError(RsrwkvError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class EmptyInputError(ShapeError):
    """A sequence operation received zero tokens."""


class ConfigError(RsrwkvError, ValueError):
    """Invalid hyperparameter or layer configuration."""


class NonFiniteError(RsrwkvError, FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs."""


class UsageError(RsrwkvError, RuntimeError):
    """An API was called in an unsupported way (e.g. non-scalar loss)."""


class DegenerateReportError(RsrwkvError, ValueError):
    """An analysis report has nothing to normalize against."""


class FormatError(RsrwkvError, ValueError):
    """Malformed file (RTN1, PPM, checkpoint manifest)."""
