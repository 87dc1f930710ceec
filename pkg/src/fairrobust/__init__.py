"""Classwise robustness of adversarially trained classifiers: closed forms, oracles and fair robust training."""

__version__ = "0.1.0"
