"""Metric-type identification for multi-level header numerical tables."""
from .dataset_io import (CorpusStats, SynthSpec, Vocabulary, build_vocabularies, corpus_stats, generate_synthetic,
                         load_corpus, save_corpus)
from .evaluation import EvalReport, Prediction, build_report
from .table_model import Location, LocationClass, MetricTarget, TableInstance, flatten_levels, validate

__all__ = [
    "CorpusStats", "SynthSpec", "Vocabulary", "build_vocabularies", "corpus_stats", "generate_synthetic",
    "load_corpus", "save_corpus", "EvalReport", "Prediction", "build_report", "Location", "LocationClass",
    "MetricTarget", "TableInstance", "flatten_levels", "validate",
]

__version__ = "0.1.0"
