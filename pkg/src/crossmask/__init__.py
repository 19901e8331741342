"""Self-supervised skeleton pretraining with hyperbolic cross masking."""

__version__ = "0.1.0"

from .engine import Tensor, backward, finite_diff_check

__all__ = ["Tensor", "backward", "finite_diff_check", "__version__"]
