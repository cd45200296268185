"""Exception types raised across the engine."""


class KFRError(ValueError):
    """Base class for all engine errors."""


class DegenerateLandmarks(KFRError):
    pass


class LengthMismatch(KFRError):
    pass


class DimensionMismatch(KFRError):
    pass


class ShapeMismatch(KFRError):
    pass


class MissingWeight(KeyError, KFRError):
    pass


class ZeroMatrix(KFRError):
    pass


class EmptyStore(KFRError):
    pass


class PyramidMismatch(KFRError):
    pass


class ScaleCountMismatch(KFRError):
    pass


class NonFiniteInput(KFRError):
    pass


class TooSmall(KFRError):
    pass


class ParseError(KFRError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingFile(KFRError, FileNotFoundError):
    pass
