"""Weakly supervised contrastive pre-training for multiple-instance learning."""

__version__ = "0.1.0"
