"""Ontology handling: canonical labels, manual loading, automatic induction.

An ontology pairs a concept set with a canonical relation set. It either
comes from a hand-written file or is induced per document: starting empty,
each chunk is shown to the provider together with the ontology so far, new
proposals are merged in, and the grown ontology rides along to the next
chunk. Merging only ever adds, so intermediate ontologies grow monotonically.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable

from .corpus import Chunk, Document, chunk_document
from .gateway import TEXT_CLOSE, TEXT_OPEN, Gateway, ProviderRequest, RequestTag
from .jsonutil import extract_first_json_object

logger = logging.getLogger(__name__)

# Re-prompts allowed after a malformed induction response.
MALFORMED_RETRIES = 2
# An induced ontology this large usually means the induction prompt is broken.
RELATION_COUNT_WARN = 200


class OntologyFormatError(ValueError):
    """An ontology file or proposal payload violates the schema."""


class Provenance(str, Enum):
    MANUAL = "manual"
    INDUCED = "induced"


def canonicalize_label(raw: str) -> str:
    """Normalize a concept or relation label to snake_case canonical form.

    Lowercases, maps whitespace and hyphens to single underscores, drops any
    other non-word characters, collapses underscore runs, and trims edge
    underscores. Idempotent.

    Raises:
        ValueError: the input is empty, or nothing survives normalization.
    """
    if not raw or not raw.strip():
        raise ValueError("label is empty")
    label = raw.strip().lower()
    label = re.sub(r"[\s\-]+", "_", label)
    label = re.sub(r"[^\w]", "", label)
    label = re.sub(r"_+", "_", label).strip("_")
    if not label:
        raise ValueError(f"label {raw!r} is empty after canonicalization")
    return label


def _require_canonical(label: str) -> str:
    if canonicalize_label(label) != label:
        raise ValueError(f"label {label!r} is not in canonical form")
    return label


@dataclass(frozen=True)
class Concept:
    canonical_label: str
    description: str | None = None
    aliases: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        _require_canonical(self.canonical_label)


@dataclass(frozen=True)
class Relation:
    canonical_label: str
    description: str | None = None
    example_usage: str | None = None

    def __post_init__(self) -> None:
        _require_canonical(self.canonical_label)


@dataclass(frozen=True)
class Ontology:
    """Immutable ontology snapshot; ``merge`` returns a new value."""

    concepts: tuple[Concept, ...]
    relations: tuple[Relation, ...]
    provenance: Provenance
    source_document_id: str | None = None
    version: int = 0

    def __post_init__(self) -> None:
        for items in (self.concepts, self.relations):
            labels = [i.canonical_label for i in items]
            if len(labels) != len(set(labels)):
                raise ValueError("duplicate canonical labels in ontology")
        if self.provenance is Provenance.INDUCED and not self.source_document_id:
            raise ValueError("induced ontology must record its source document")

    @property
    def relation_labels(self) -> frozenset[str]:
        return frozenset(r.canonical_label for r in self.relations)

    @property
    def concept_labels(self) -> frozenset[str]:
        return frozenset(c.canonical_label for c in self.concepts)


@dataclass(frozen=True)
class OntologyProposal:
    """Additions suggested for one chunk; labels arrive already canonical."""

    proposed_concepts: tuple[Concept, ...]
    proposed_relations: tuple[Relation, ...]
    source_chunk_id: str


EMPTY_PROPOSAL_FIELDS = {"concepts": [], "relations": []}


def empty_induced_ontology(document_id: str) -> Ontology:
    return Ontology((), (), Provenance.INDUCED, document_id, version=0)


def merge(base: Ontology, proposal: OntologyProposal) -> Ontology:
    """Fold a proposal into an ontology; never shrinks, existing entries win.

    A proposal entry whose label already exists only fills in metadata the
    base entry lacks (description, example usage, aliases). The version is
    bumped exactly when something was added or filled.
    """
    concepts = {c.canonical_label: c for c in base.concepts}
    relations = {r.canonical_label: r for r in base.relations}
    changed = False

    for pc in proposal.proposed_concepts:
        current = concepts.get(pc.canonical_label)
        if current is None:
            concepts[pc.canonical_label] = pc
            changed = True
            continue
        updated = current
        if current.description is None and pc.description is not None:
            updated = replace(updated, description=pc.description)
        if pc.aliases - current.aliases:
            updated = replace(updated, aliases=current.aliases | pc.aliases)
        if updated != current:
            concepts[pc.canonical_label] = updated
            changed = True

    for pr in proposal.proposed_relations:
        current = relations.get(pr.canonical_label)
        if current is None:
            relations[pr.canonical_label] = pr
            changed = True
            continue
        updated = current
        if current.description is None and pr.description is not None:
            updated = replace(updated, description=pr.description)
        if current.example_usage is None and pr.example_usage is not None:
            updated = replace(updated, example_usage=pr.example_usage)
        if updated != current:
            relations[pr.canonical_label] = updated
            changed = True

    return Ontology(
        concepts=tuple(sorted(concepts.values(), key=lambda c: c.canonical_label)),
        relations=tuple(sorted(relations.values(), key=lambda r: r.canonical_label)),
        provenance=base.provenance,
        source_document_id=base.source_document_id,
        version=base.version + 1 if changed else base.version,
    )


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------

def ontology_to_json(ont: Ontology) -> str:
    """Bit-stable serialization: sorted keys, sorted labels, trailing newline."""
    payload = {
        "provenance": ont.provenance.value,
        "source_document_id": ont.source_document_id,
        "version": ont.version,
        "concepts": [
            {"label": c.canonical_label, "description": c.description, "aliases": sorted(c.aliases)}
            for c in sorted(ont.concepts, key=lambda c: c.canonical_label)
        ],
        "relations": [
            {"label": r.canonical_label, "description": r.description, "example_usage": r.example_usage}
            for r in sorted(ont.relations, key=lambda r: r.canonical_label)
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def save_ontology(ont: Ontology, path: str | Path) -> None:
    Path(path).write_text(ontology_to_json(ont), encoding="utf-8")


def _entry_fields(entry, what: str) -> tuple[str, str | None]:
    """Accept either a bare label string or an object with a label field."""
    if isinstance(entry, str):
        return entry, None
    if isinstance(entry, dict) and isinstance(entry.get("label"), str):
        description = entry.get("description")
        if description is not None and not isinstance(description, str):
            raise OntologyFormatError(f"{what} description must be a string")
        return entry["label"], description
    raise OntologyFormatError(f"malformed {what} entry: {entry!r}")


def _parse_ontology_payload(payload: dict, path: str) -> tuple[list[Concept], list[Relation]]:
    if not isinstance(payload, dict):
        raise OntologyFormatError(f"{path}: top level must be an object")
    concepts: dict[str, Concept] = {}
    relations: dict[str, Relation] = {}
    for entry in payload.get("concepts", []):
        label_raw, description = _entry_fields(entry, "concept")
        aliases = entry.get("aliases", []) if isinstance(entry, dict) else []
        if not isinstance(aliases, list) or any(not isinstance(a, str) for a in aliases):
            raise OntologyFormatError(f"{path}: concept aliases must be a list of strings")
        label = canonicalize_label(label_raw)
        if label in concepts:
            raise OntologyFormatError(f"{path}: duplicate concept label {label!r} after canonicalization")
        concepts[label] = Concept(label, description, frozenset(a.strip() for a in aliases if a.strip()))
    for entry in payload.get("relations", []):
        label_raw, description = _entry_fields(entry, "relation")
        example = entry.get("example_usage") if isinstance(entry, dict) else None
        if example is not None and not isinstance(example, str):
            raise OntologyFormatError(f"{path}: relation example_usage must be a string")
        label = canonicalize_label(label_raw)
        if label in relations:
            raise OntologyFormatError(f"{path}: duplicate relation label {label!r} after canonicalization")
        relations[label] = Relation(label, description, example)
    return list(concepts.values()), list(relations.values())


def load_ontology(path: str | Path) -> Ontology:
    """Read an ontology file, restoring provenance and version when present."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise OntologyFormatError(f"{path}: not valid JSON: {exc}") from exc
    concepts, relations = _parse_ontology_payload(payload, str(path))
    provenance = Provenance(payload.get("provenance", "manual"))
    return Ontology(
        concepts=tuple(sorted(concepts, key=lambda c: c.canonical_label)),
        relations=tuple(sorted(relations, key=lambda r: r.canonical_label)),
        provenance=provenance,
        source_document_id=payload.get("source_document_id"),
        version=int(payload.get("version", 0)),
    )


def load_manual_ontology(path: str | Path) -> Ontology:
    """Load a hand-written ontology; it must define at least one relation."""
    ont = load_ontology(path)
    if not ont.relations:
        raise OntologyFormatError(f"{path}: manual ontology defines no relations")
    return replace(ont, provenance=Provenance.MANUAL, version=0, source_document_id=None)


# --------------------------------------------------------------------------
# Automatic induction
# --------------------------------------------------------------------------

def build_induction_prompt(current: Ontology, chunk: Chunk) -> ProviderRequest:
    labels = "\n".join(f"- {r.canonical_label}" for r in current.relations) or "(none yet)"
    concept_labels = "\n".join(f"- {c.canonical_label}" for c in current.concepts) or "(none yet)"
    user = (
        "You are growing a schema for facts found in a corporate report.\n"
        "\n"
        f"Relations already in the schema:\n{labels}\n"
        f"Concepts already in the schema:\n{concept_labels}\n"
        "\n"
        f"Text (chunk {chunk.index}):\n{TEXT_OPEN}\n{chunk.text}\n{TEXT_CLOSE}\n"
        "\n"
        "Propose ONLY the additional entity types and relation labels required to "
        "describe the information in this text; do not repeat existing entries. "
        'Reply with a JSON object of the form {"concepts": [{"label": ..., '
        '"description": ...}], "relations": [{"label": ..., "description": ...}]} '
        "and nothing else. Use empty lists when nothing new is needed."
    )
    return ProviderRequest(role_messages=(("user", user),), request_tag=RequestTag.INDUCTION)


def parse_proposal(response_text: str, current: Ontology, chunk_id: str) -> OntologyProposal:
    """Parse a structured induction response; duplicates of current entries drop out.

    Raises:
        OntologyFormatError: no JSON object with list-valued ``concepts`` and
            ``relations`` fields could be located.
    """
    payload = extract_first_json_object(response_text)
    if payload is None:
        raise OntologyFormatError("no JSON object found in induction response")
    payload = {**EMPTY_PROPOSAL_FIELDS, **payload}
    if not isinstance(payload["concepts"], list) or not isinstance(payload["relations"], list):
        raise OntologyFormatError("induction response fields must be lists")
    concepts: dict[str, Concept] = {}
    relations: dict[str, Relation] = {}
    for entry in payload["concepts"]:
        label_raw, description = _entry_fields(entry, "concept")
        try:
            label = canonicalize_label(label_raw)
        except ValueError:
            logger.warning("dropping uncanonicalizable concept label %r from %s", label_raw, chunk_id)
            continue
        if label not in current.concept_labels:
            concepts.setdefault(label, Concept(label, description))
    for entry in payload["relations"]:
        label_raw, description = _entry_fields(entry, "relation")
        try:
            label = canonicalize_label(label_raw)
        except ValueError:
            logger.warning("dropping uncanonicalizable relation label %r from %s", label_raw, chunk_id)
            continue
        if label not in current.relation_labels:
            relations.setdefault(label, Relation(label, description))
    return OntologyProposal(tuple(concepts.values()), tuple(relations.values()), chunk_id)


_FORMAT_REMINDER = (
    "Your previous reply could not be parsed. Respond with ONLY a JSON object "
    'with the two keys "concepts" and "relations", each a list.'
)


def induce_step(current: Ontology, chunk: Chunk, gateway: Gateway) -> OntologyProposal:
    """Ask the provider for schema additions covering one chunk.

    A malformed response is re-prompted with a format reminder up to
    MALFORMED_RETRIES times; after that the step degrades to an empty
    proposal with a logged warning. Provider errors propagate.
    """
    request = build_induction_prompt(current, chunk)
    for attempt in range(1 + MALFORMED_RETRIES):
        response = gateway.send(request)
        try:
            return parse_proposal(response.text, current, chunk.id)
        except OntologyFormatError as exc:
            logger.warning("induction parse failure on %s (attempt %d): %s", chunk.id, attempt + 1, exc)
            request = ProviderRequest(
                role_messages=request.role_messages + (("user", _FORMAT_REMINDER),),
                request_tag=RequestTag.INDUCTION,
            )
    logger.warning("induction on %s gave no parseable proposal; continuing with none", chunk.id)
    return OntologyProposal((), (), chunk.id)


def induce_ontology(
    doc: Document,
    gateway: Gateway,
    chunk_size: int = 5,
    overlap: int = 0,
    observer: Callable[[Ontology], None] | None = None,
) -> Ontology:
    """Build a document-specific ontology by folding proposals chunk by chunk.

    Starts from the empty ontology and runs strictly sequentially: every step
    sees the merged result of all earlier steps. ``observer`` receives each
    intermediate ontology (useful for growth monitoring).
    """
    if not doc.sentences:
        raise ValueError(f"document {doc.id} has no sentences")
    ontology = empty_induced_ontology(doc.id)
    warned_size = False
    for chunk in chunk_document(doc, chunk_size=chunk_size, overlap=overlap):
        ontology = merge(ontology, induce_step(ontology, chunk, gateway))
        if not warned_size and len(ontology.relations) > RELATION_COUNT_WARN:
            logger.warning(
                "induced ontology for %s exceeds %d relations; the induction prompt may be over-proposing",
                doc.id,
                RELATION_COUNT_WARN,
            )
            warned_size = True
        if observer is not None:
            observer(ontology)
    return ontology
