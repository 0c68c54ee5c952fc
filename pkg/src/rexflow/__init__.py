"""Relation extraction experiments: corpora, pre-processing variants, a numpy CRCNN,
training, evaluation and fold-wise significance testing."""

__version__ = "0.1.0"
