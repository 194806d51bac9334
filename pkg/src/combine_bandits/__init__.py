"""Referee-arbitrated contextual and transition-aware bandits."""

from .combine import VARIANTS, CombineAgent, Params, VariantConfig
from .core import PolicyChoice

__all__ = ["VARIANTS", "CombineAgent", "Params", "PolicyChoice", "VariantConfig"]
