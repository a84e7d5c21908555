"""Contrastive dual-encoder training with an explicit cross-modal
information-bottleneck regularizer, plus the oracles that verify it."""

__version__ = "0.1.0"
