"""Exception types shared across the package."""


class RepAdaptError(Exception):
    """Base class for package errors."""


class ShapeError(RepAdaptError, ValueError):
    """Operands have incompatible or empty shapes."""


class ConfigError(RepAdaptError, ValueError):
    """A configuration value is missing, unknown, or out of its valid range."""


class InputError(RepAdaptError, ValueError):
    """A runtime input (token sequence, batch, split) violates its contract."""


class CapacityError(InputError):
    """A sequence exceeds the encoder's positional capacity."""


class DegenerateInputError(RepAdaptError, ValueError):
    """An input is structurally degenerate (empty pooling set, fully blocked
    attention row)."""


class NumericDomainError(RepAdaptError, ValueError):
    """A numeric input is outside the operation's domain (e.g. zero-norm
    vector past the epsilon guard)."""


class ContractError(RepAdaptError, ValueError):
    """A caller broke an API contract (e.g. base-mode inference without
    representation probabilities)."""


class OracleError(RepAdaptError, RuntimeError):
    """The finite-difference oracle could not produce an estimate."""


class GradientCheckError(RepAdaptError, AssertionError):
    """Reverse-mode gradients disagree with the finite-difference oracle."""


class CheckpointError(RepAdaptError, RuntimeError):
    """Base class for checkpoint read/write failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version does not match the reader."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint payload is truncated or corrupted."""
