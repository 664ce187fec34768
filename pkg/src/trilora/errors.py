"""Exception hierarchy shared by every module in the package."""


class TriLoRAError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TriLoRAError, ValueError):
    """Operand shapes do not compose."""


class ParameterError(TriLoRAError, ValueError):
    """A scalar parameter (rank, std, eps, ...) is out of range."""


class NumericalError(TriLoRAError, ArithmeticError):
    """An iterative routine failed to converge."""

    def __init__(self, message, sweeps):
        super().__init__(message)
        self.sweeps = sweeps


class TrainingError(TriLoRAError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class FormatError(TriLoRAError, ValueError):
    """An adapter file could not be decoded. Subclasses name the failure."""

    name = "format error"


class BadMagicError(FormatError):
    name = "bad magic"


class UnsupportedVersionError(FormatError):
    name = "unsupported version"


class TruncatedHeaderError(FormatError):
    name = "truncated header"


class TruncatedPayloadError(FormatError):
    name = "truncated payload"

    def __init__(self, message, expected, actual):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class TrailingBytesError(FormatError):
    name = "trailing bytes"


class ManifestError(FormatError):
    name = "invalid manifest"


class OverlappingOffsetsError(FormatError):
    name = "overlapping offsets"


class ShapeRoleMismatchError(FormatError):
    name = "shape-role mismatch"


class NonFiniteTensorError(FormatError):
    name = "non-finite tensor"


class AdapterIOError(TriLoRAError, OSError):
    """Reading or writing an adapter file failed at the OS level."""

    def __init__(self, message, path):
        super().__init__(message)
        self.path = str(path)
