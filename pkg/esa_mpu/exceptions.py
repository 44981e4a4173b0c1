from django.core.exceptions import ImproperlyConfigured


class EsaMpuError(Exception):
    ...


class InvalidInputError(EsaMpuError, ValueError):
    """Non-finite scores, nonpositive bound arguments and the like."""


class InvalidLabelError(EsaMpuError, ValueError):
    ...


class ShapeError(EsaMpuError, ValueError):
    ...


class DivergenceError(EsaMpuError, ArithmeticError):
    layer: int | None

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class InvalidBatchError(EsaMpuError, ValueError):
    ...


class ConfigError(EsaMpuError, ImproperlyConfigured):
    ...


class ConfigFileError(ConfigError):
    path: str
    line_no: int | None

    def __init__(self, path: str, message: str, line_no: int | None = None):
        self.path = path
        self.line_no = line_no
        self.message = message
        super().__init__(str(self))

    def __str__(self):
        if self.line_no is not None:
            return f"{self.path}, line {self.line_no}: {self.message}"
        return f"{self.path}: {self.message}"


class UnsupportedLossError(ConfigError):
    ...


class IdxFormatError(EsaMpuError, ValueError):
    ...


class DatasetConsistencyError(EsaMpuError, ValueError):
    ...


class TruncatedFileError(EsaMpuError, OSError):
    ...


class CapacityError(ConfigError):
    """Not enough examples in the source to honour the requested split."""


class InvalidPerturbationError(ConfigError):
    ...


class InvalidShiftError(ConfigError):
    ...


class DomainError(EsaMpuError, ValueError):
    ...
