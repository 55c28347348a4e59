"""Exception hierarchy shared by all kernelsynth modules."""


class KernelSynthError(Exception):
    """Base class for every error raised by this package."""


class NonRealResult(KernelSynthError):
    """Inverse transform of a spectrum that is not conjugate-symmetric."""


class SizeMismatch(KernelSynthError, ValueError):
    pass


class DfovMismatch(KernelSynthError, ValueError):
    pass


class ShapeMismatch(KernelSynthError, ValueError):
    pass


class DivisionBlowup(KernelSynthError, ArithmeticError):
    """Unregularized MTF ratio with a vanishing denominator."""


class SingularSystem(KernelSynthError, ArithmeticError):
    """Spectral solve with zero regularization and a vanishing filter."""


class TapeMismatch(KernelSynthError, ValueError):
    pass


class EmptyDataset(KernelSynthError, ValueError):
    pass


class TrainingDiverged(KernelSynthError, ArithmeticError):
    pass


class NoPeak(KernelSynthError, ValueError):
    """Wire image has no point response above the noise floor."""


class RoiOutOfBounds(KernelSynthError, ValueError):
    pass


class BandOutOfRange(KernelSynthError, ValueError):
    pass


class FormatError(KernelSynthError, ValueError):
    """Malformed file in one of the package's on-disk formats."""
