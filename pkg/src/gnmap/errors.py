"""Exception types shared across the package."""


class GNMapError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GNMapError):
    """Invalid configuration or command-line arguments."""


class GeometryError(GNMapError):
    """Raster/tile geometry violates a precondition (sizes, divisibility, extent)."""


class ShapeError(GNMapError):
    """Tensor or array shapes do not agree."""


class CheckpointError(GNMapError):
    """Checkpoint file is corrupt, truncated, or from an incompatible version."""


class TrainingDiverged(GNMapError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step}")


class NonFiniteGradient(GNMapError):
    """A parameter gradient contained NaN or Inf at an optimizer step."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")
