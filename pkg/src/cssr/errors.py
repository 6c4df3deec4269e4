"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or image dimensions incompatible with an operation."""


class ConfigurationError(ValueError):
    """Invalid network, training or degradation configuration."""


class EstimationError(RuntimeError):
    """Homography estimation failed (degenerate data or no consensus)."""


class NumericError(ArithmeticError):
    """Non-finite loss or failed gradient check."""


class ImageIOError(OSError):
    """Unreadable, corrupt or unsupported image/checkpoint file."""
