"""Exception hierarchy. Each family maps to a CLI exit code."""


class RefQAError(Exception):
    exit_code = 2
    kind = "error"


class UsageError(RefQAError):
    exit_code = 1
    kind = "usage"


class DataError(RefQAError, ValueError):
    exit_code = 2
    kind = "data"


class DimensionError(DataError):
    kind = "dimension"


class FeatureStoreError(DataError):
    kind = "feature_store"


class BadMagicError(FeatureStoreError):
    kind = "bad_magic"


class TruncatedFileError(FeatureStoreError):
    kind = "truncated"


class StoreDimMismatchError(FeatureStoreError):
    kind = "dim_mismatch"


class ManifestError(DataError):
    kind = "manifest"


class ModelFormatError(DataError):
    kind = "model_format"


class VersionMismatchError(ModelFormatError):
    kind = "version_mismatch"


class ShapeMismatchError(ModelFormatError):
    kind = "shape_mismatch"


class ConfigMismatchError(ModelFormatError):
    kind = "config_mismatch"

    def __init__(self, fields):
        self.fields = list(fields)
        super().__init__("config mismatch in fields: " + ", ".join(self.fields))


class DegenerateInputError(DataError):
    """Raised when a correlation is undefined (constant input)."""

    kind = "degenerate_input"


class NumericError(RefQAError, ArithmeticError):
    exit_code = 3
    kind = "numeric"
