"""Abundance-aware aggregation of sequence-embedding sets into sample embeddings."""

from .aggregate import (STRATEGIES, Aggregator, Sample, SequenceRecord, average_pool,
                        normalize_abundance, repetition_expand, set_transformer_pool,
                        weighted_average_pool, weighted_set_transformer_pool)
from .setattn import SetTransformerConfig

__version__ = "0.1.0"

__all__ = [
    "STRATEGIES", "Aggregator", "Sample", "SequenceRecord", "SetTransformerConfig",
    "average_pool", "normalize_abundance", "repetition_expand", "set_transformer_pool",
    "weighted_average_pool", "weighted_set_transformer_pool",
]
