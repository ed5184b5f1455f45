import sys
from pathlib import Path

# Make sibling test helpers (oracle, fixture builders) importable.
sys.path.insert(0, str(Path(__file__).parent))

from kgforge.corpus import Chunk, Document, segment_sentences  # noqa: E402
from kgforge.extraction import KnowledgeGraph, Triplet  # noqa: E402
from kgforge.ontology import Concept, Ontology, Provenance, Relation  # noqa: E402

FIXTURES = Path(__file__).parent.parent / "fixtures"


def chunk_from_text(text: str, chunk_id: str = "doc:c0000", index: int = 0) -> Chunk:
    sentences = tuple(segment_sentences(text))
    return Chunk(id=chunk_id, index=index, sentences=sentences, text="\n".join(s.text for s in sentences))


def document_from_text(text: str, doc_id: str = "doc") -> Document:
    return Document(id=doc_id, source_path=f"{doc_id}.txt", raw_text=text, sentences=tuple(segment_sentences(text)))


def ontology_from_labels(relations, concepts=(), provenance=Provenance.MANUAL, source=None, version=0) -> Ontology:
    return Ontology(
        concepts=tuple(Concept(c) for c in sorted(concepts)),
        relations=tuple(Relation(r) for r in sorted(relations)),
        provenance=provenance,
        source_document_id=source,
        version=version,
    )


def graph_from_triplets(triplets, document_id="doc", ontology_version=0, fingerprint="") -> KnowledgeGraph:
    return KnowledgeGraph(
        triplets=tuple(triplets),
        document_id=document_id,
        ontology_version=ontology_version,
        config_fingerprint=fingerprint,
    )


def triplet(subject, predicate, obj, chunk_id="doc:c0000", raw=None) -> Triplet:
    return Triplet(subject=subject, predicate=predicate, object=obj, chunk_id=chunk_id, raw_predicate=raw or predicate)
