"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SettleDamageError(Exception):
    exit_code = 1


class UsageError(SettleDamageError):
    exit_code = 2


class ConfigError(SettleDamageError):
    exit_code = 2


class DimensionError(SettleDamageError, ValueError):
    exit_code = 2


class NumericalError(SettleDamageError):
    exit_code = 3


class SingularDesignError(NumericalError):
    """Design matrix is rank deficient."""


class NonInvertibleError(NumericalError):
    """Regression cannot be inverted for economic loss (zero coefficient)."""


class InsufficientDataError(UsageError):
    pass


class DataIOError(SettleDamageError, OSError):
    exit_code = 4


class ManifestError(SettleDamageError):
    """Manifest validation failure; ``code`` names the failure class."""

    exit_code = 2

    MISSING_FILE = "missing-file"
    SCHEMA = "schema"
    DUPLICATE_ID = "duplicate-id"
    SPLIT_OVERLAP = "split-overlap"
    MISSING_ASSET = "missing-asset"

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
