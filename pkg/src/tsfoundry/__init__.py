"""Desk-scale time-series representation learning pipeline.

Synthetic corpus generation, a three-branch tokenizer feeding a
configurable transformer encoder, contrastive pre-training, frozen-encoder
feature extraction (layer selection, aggregation, self-ensembling, fusion)
and classical downstream classifiers.
"""

__version__ = "0.1.0"
