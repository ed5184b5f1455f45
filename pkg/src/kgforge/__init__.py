"""kgforge: ontology-guided triplet extraction with ground-truth-free evaluation.

The library mirrors the pipeline stages: ``corpus`` (segmentation and
chunking), ``ontology`` (manual loading and automatic induction),
``gateway`` (live/mock/record/replay providers), ``extraction`` (prompting
and strict parsing), ``verification`` (regex-then-judge grounding), and
``metrics`` (micro-averaged conformance and hallucination rates). ``cli``
orchestrates them; run ``kgforge --help``.
"""

from .corpus import Chunk, Document, Sentence, chunk_document, load_document, segment_sentences
from .extraction import KnowledgeGraph, Triplet, extract_document
from .gateway import MockGateway, ProviderRequest, ProviderResponse
from .metrics import EvaluationReport, compute_report, render_table
from .ontology import Ontology, canonicalize_label, induce_ontology, load_manual_ontology, merge
from .verification import VerifyMode, normalize_for_match, regex_grounded, verify_graph, verify_triplet

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "Document",
    "EvaluationReport",
    "KnowledgeGraph",
    "MockGateway",
    "Ontology",
    "ProviderRequest",
    "ProviderResponse",
    "Sentence",
    "Triplet",
    "VerifyMode",
    "canonicalize_label",
    "chunk_document",
    "compute_report",
    "extract_document",
    "induce_ontology",
    "load_document",
    "load_manual_ontology",
    "merge",
    "normalize_for_match",
    "regex_grounded",
    "render_table",
    "segment_sentences",
    "verify_graph",
    "verify_triplet",
    "__version__",
]
