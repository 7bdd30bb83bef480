from typing import Optional

__all__ = [
    "ConfigurationError",
    "ContractViolation",
    "IdxMagicError",
    "IdxTruncatedError",
    "CountMismatchError",
    "EventParseError",
    "CifarFormatError",
    "CheckpointError",
    "CheckpointMagicError",
    "CheckpointVersionError",
    "CheckpointDigestError",
    "CheckpointTruncatedError",
    "ArchitectureMismatchError",
    "NonFiniteError",
]


class ConfigurationError(ValueError):
    """Invalid run configuration or incompatible layer shapes."""


class ContractViolation(ValueError):
    """A backward-pass operation was called outside its preconditions."""


# data


class IdxMagicError(ValueError):
    pass


class IdxTruncatedError(ValueError):
    pass


class CountMismatchError(ValueError):
    pass


class CifarFormatError(ValueError):
    pass


class EventParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# checkpoints


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class ArchitectureMismatchError(ValueError):
    pass


class NonFiniteError(ValueError):
    """Raised when a loss or gradient stops being finite.

    Carries whatever location information was available so the offending
    layer/step/neuron can be inspected.
    """

    def __init__(
        self,
        message: str,
        layer: Optional[int] = None,
        step: Optional[int] = None,
        neuron: Optional[int] = None,
    ):
        where = ", ".join(
            f"{k}={v}"
            for k, v in (("layer", layer), ("step", step), ("neuron", neuron))
            if v is not None
        )
        super().__init__(f"{message} ({where})" if where else message)
        self.layer = layer
        self.step = step
        self.neuron = neuron
