"""Contrastive graph pre-training with resampled unlabeled positives."""

__version__ = "0.1.0"
