"""Exception types shared across the package."""


class EslmError(Exception):
    """Base class for all package errors."""


class ConfigError(EslmError):
    """Invalid or unknown configuration value. Message names the offending field."""


class FeatureOutOfVocabError(EslmError):
    """A feature id falls outside the embedding vocabulary."""


class UnknownIdError(EslmError):
    """A user or item id does not exist in the world."""


class ShapeError(EslmError):
    """Tensor shapes disagree. Message names the tensors."""


class SpaceMismatchError(EslmError):
    """A batch was drawn from a different sample space than the loss expects."""


class DatasetContractError(EslmError):
    """A dataset violates its construction contract (e.g. a pay_a=0 row in D_p)."""


class NumericOverflowError(EslmError):
    """A non-finite activation appeared. Message names the layer."""


class EmptyBatchError(EslmError):
    """An operation that needs at least one sample received none."""


class UndefinedAUCError(EslmError):
    """AUC is undefined: the labels contain a single class."""


class SnapshotError(EslmError):
    """A model snapshot is unreadable or incompatible with the requested use."""


class ComparabilityError(EslmError):
    """Runs being compared do not share a world configuration."""


class StageError(EslmError):
    """A pipeline stage failed. Carries the stage name and the original cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
