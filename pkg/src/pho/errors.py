"""Exception types shared across the package."""


class PhoError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(PhoError):
    """Operands disagree on the feature dimension n."""


class EmptyModality(PhoError):
    """An operation needs at least one sample of each modality."""


class DegenerateInput(PhoError):
    """A closed-form solve has a vanishing denominator (alpha = 0 with zero mean)."""


class NoValidClasses(PhoError):
    """No class has samples in both modalities."""


class LabelOutOfRange(PhoError):
    """A class label falls outside the classifier's logit range."""


class EmptyFrameList(PhoError):
    """Pooling requires at least one frame."""


class ParseError(PhoError):
    """A feature file failed to parse; message names the line."""


class UnknownModality(PhoError):
    """A modality tag is not one of the recognized codes."""


class InvalidSpec(PhoError):
    """A synthetic-data specification violates its invariants."""


class NonFiniteLoss(PhoError):
    """Training produced a NaN/Inf loss; carries the offending batch index."""

    def __init__(self, message: str, batch_index: int):
        super().__init__(message)
        self.batch_index = batch_index


class QueryClassAbsent(PhoError):
    """A query's class never appears in the gallery."""


class ConfigError(PhoError):
    """A run configuration is malformed or inconsistent."""
