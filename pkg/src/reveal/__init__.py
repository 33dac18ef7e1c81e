"""Group-aware contrastive alignment of retinal and risk-factor features."""

__version__ = "0.1.0"
