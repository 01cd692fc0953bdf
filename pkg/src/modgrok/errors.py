class ModGrokError(Exception):
    """Base class for errors raised by modgrok."""


class InputDomainError(ModGrokError, ValueError):
    """A residue or input vector is outside its domain."""


class ConfigError(ModGrokError, ValueError):
    """Invalid task, split, optimizer or experiment configuration."""


class ShapeError(ModGrokError, ValueError):
    """Array dimensions do not match the network."""


class NumericalError(ModGrokError, FloatingPointError):
    """A non-finite value appeared during training."""

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch
