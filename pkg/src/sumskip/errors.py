"""Exception types shared across the package."""


class SumskipError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SumskipError):
    """Operand shapes are invalid or do not compose."""


class ModelFormatError(SumskipError):
    """A model manifest/blob pair violates the storage contract."""


class MissingTensorError(ModelFormatError):
    """A layer references a tensor name that is not declared."""


class TensorShapeError(ModelFormatError):
    """A declared tensor does not have the shape its layer requires."""


class BlobLengthError(ModelFormatError):
    """Weight blob length disagrees with the manifest's declared sizes."""


class NonFiniteWeightError(ModelFormatError):
    """A loaded weight is NaN or infinite."""


class IdxFormatError(SumskipError):
    """An IDX image/label file is malformed."""


class PredictorMisuseError(SumskipError):
    """A confidence predicate was called outside its preconditions."""


class ConfigError(SumskipError):
    """A pruning or search configuration is invalid."""


class TrainingDivergedError(SumskipError):
    """Training produced a non-finite loss."""
