"""Exception hierarchy shared by the whole package.

Validation problems (bad hyperparameters, malformed configs, misuse of an
API contract) and runtime/data problems (broken files, numerical blowups,
incompatible artifacts) are kept on separate branches so the CLI can map
them to distinct exit codes.
"""


class LtmlError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LtmlError):
    """A precondition on user-supplied values failed; fixable by the caller."""


class ParameterError(ValidationError):
    """A hyperparameter is outside its legal range."""


class ConfigError(ValidationError):
    """A configuration file or flag combination is invalid."""


class DimensionError(ValidationError):
    """Array shapes do not compose for the requested operation."""


class ContractError(ValidationError):
    """An API contract was violated (e.g. backward from a non-scalar)."""


class LabelError(ValidationError):
    """A label matrix contains values outside {0, 1}."""


class RuntimeFailure(LtmlError):
    """Runtime/data-level failure; maps to exit code 3 in the CLI."""


class DegenerateEmbeddingError(RuntimeFailure):
    """An embedding vector has (near-)zero norm and cannot be normalized."""

    def __init__(self, index, what="vector"):
        self.index = index
        super().__init__(f"zero-norm {what} at index {index}")


class FrequencyError(RuntimeFailure):
    """A class has no training instances where at least one is required."""


class NumericsError(RuntimeFailure):
    """A forward pass produced non-finite values."""


class DataFormatError(RuntimeFailure):
    """A dataset, embeddings, or checkpoint file is malformed."""


class CompatibilityError(RuntimeFailure):
    """Two artifacts (e.g. checkpoint and dataset) do not fit together."""
