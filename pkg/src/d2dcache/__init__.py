"""Trust-aware D2D caching: analytic metrics, optimizers and a Monte-Carlo check."""

from d2dcache.model import (
    CachingStrategy,
    GroupProfile,
    Metrics,
    SystemParams,
    offload_gain,
    success_prob,
)

__all__ = ["CachingStrategy", "GroupProfile", "Metrics", "SystemParams", "offload_gain", "success_prob"]
__version__ = "0.1.0"
