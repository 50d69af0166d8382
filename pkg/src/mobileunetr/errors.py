"""Exception hierarchy shared across the package."""


class MobileUNETRError(Exception):
    """Base class for all package errors."""


class DimensionError(MobileUNETRError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class PatchSizeError(DimensionError):
    """Spatial size not divisible by the patch size."""


class DecoderWiringError(DimensionError):
    """Skip tensor does not line up with the upsampled decoder input."""


class DegenerateBatchError(MobileUNETRError, ValueError):
    """Batch statistics requested over a single element."""


class NonFiniteError(MobileUNETRError, FloatingPointError):
    """An operation produced NaN or Inf."""


class ConfigError(MobileUNETRError, ValueError):
    """Invalid model configuration. ``problems`` lists every violation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class CheckpointFormatError(MobileUNETRError, ValueError):
    """Checkpoint bytes are malformed (bad magic, header, or truncated blob)."""


class ConfigMismatchError(MobileUNETRError, ValueError):
    """Checkpoint config disagrees with the expected config."""

    def __init__(self, field, stored, expected):
        self.field = field
        super().__init__(f"config mismatch on {field!r}: checkpoint has {stored!r}, expected {expected!r}")


class ShapeMismatchError(MobileUNETRError, ValueError):
    """Named parameter has a different shape than the model expects."""


class UnsupportedFormatError(MobileUNETRError, ValueError):
    """Image file is valid PNM but outside the supported subset."""


class ImageFormatError(MobileUNETRError, ValueError):
    """Image file header or payload is malformed."""


class TrainingDivergedError(MobileUNETRError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, batch, lr, detail=""):
        self.epoch, self.batch, self.lr = epoch, batch, lr
        msg = f"non-finite loss at epoch {epoch}, batch {batch}, lr {lr:.3e}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
