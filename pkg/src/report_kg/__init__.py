"""Ontology-grounded report graphs with graph-attention encoders.

Turns free-text reports into knowledge graphs over a multilingual concept
ontology, encodes them with stacked graph-attention layers for multi-label
classification, and can distill the report representation into an
image-feature branch for image-only inference.
"""

__version__ = "0.1.0"

from .ontology import Ontology, load_ontology
from .extract import Report, extract_concepts, split_sentences
from .embeddings import EmbeddingTable
from .graph import AblationConfig, ReportGraph, build_graph
from .estimators import GraphReportClassifier, VkdImageClassifier

__all__ = [
    "Ontology",
    "load_ontology",
    "Report",
    "extract_concepts",
    "split_sentences",
    "EmbeddingTable",
    "AblationConfig",
    "ReportGraph",
    "build_graph",
    "GraphReportClassifier",
    "VkdImageClassifier",
]
