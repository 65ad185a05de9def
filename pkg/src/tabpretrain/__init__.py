"""Contrastive self-supervised pre-training for tabular data.

Subpackages cover the numerical MLP/Adam engine, the CSV preprocessing
pipeline, feature-corruption view generation, contrastive losses, the
training loops, semi-supervised baselines, and the benchmark statistics
harness.
"""

from tabpretrain import baselines, corruption, data, losses, nn, stats, training

__all__ = ["nn", "data", "corruption", "losses", "training", "baselines", "stats"]
