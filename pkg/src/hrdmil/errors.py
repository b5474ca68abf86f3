"""Exception types. Each carries a short kebab-case ``category`` used by the CLI."""


class HrdMilError(Exception):
    category = "error"


class FeatureFileError(HrdMilError):
    category = "feature-file"


class BadMagicError(FeatureFileError):
    category = "bad-magic"


class TruncatedFileError(FeatureFileError):
    category = "truncated-file"


class UnsupportedVersionError(FeatureFileError):
    category = "unsupported-version"


class InvalidMatrixError(HrdMilError):
    category = "invalid-matrix"


class ManifestError(HrdMilError):
    category = "manifest"


class MissingFileError(ManifestError):
    category = "missing-file"


class DuplicatePatientError(ManifestError):
    category = "duplicate-patient"


class DimMismatchError(HrdMilError):
    category = "dim-mismatch"


class NonFiniteTargetError(ManifestError):
    category = "non-finite-target"


class UnknownPatientError(HrdMilError):
    category = "unknown-patient"


class CsvFormatError(HrdMilError):
    category = "csv-format"


class RaggedRowError(CsvFormatError):
    category = "ragged-row"


class NonNumericFieldError(CsvFormatError):
    category = "non-numeric-field"


class TooFewPointsError(HrdMilError):
    category = "too-few-points"


class NonFiniteInputError(HrdMilError):
    category = "non-finite-input"


class TooFewSlotsError(HrdMilError):
    """Bagsize is smaller than the number of clusters that must be represented."""

    category = "too-few-slots"


class UseAllSignal(HrdMilError):
    """Raised when the requested bagsize exceeds the bag; callers fall back to the full bag."""

    category = "use-all"


class MissingCoordsError(HrdMilError):
    category = "missing-coords"


class ConfigError(HrdMilError):
    category = "config"


class TrainingDivergedError(HrdMilError):
    category = "training-diverged"


class MetricError(HrdMilError):
    category = "metric"


class SingleClassError(MetricError):
    category = "single-class"


class AllExcludedError(MetricError):
    category = "all-excluded"


class LengthMismatchError(MetricError):
    category = "length-mismatch"


class ZeroVarianceError(MetricError):
    category = "zero-variance"


class MissingCellError(MetricError):
    category = "missing-cell"
