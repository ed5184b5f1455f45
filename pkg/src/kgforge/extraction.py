"""Triplet extraction: prompt the provider per chunk, parse strictly, assemble.

The extraction prompt carries the chunk verbatim, the complete ontology, and
a few generic exemplars. Responses must be a JSON array of
subject/predicate/object objects; malformed responses earn a bounded number
of format-reminder re-prompts before the chunk is written off as a recorded
failure. Predicates outside the ontology are kept on purpose: measuring that
drift is the metrics module's job, so filtering here would corrupt it.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import Chunk, Document, chunk_document
from .gateway import TEXT_CLOSE, TEXT_OPEN, CassetteMissError, Gateway, GatewayError, ProviderRequest, RequestTag
from .jsonutil import extract_first_json_array
from .ontology import Ontology, canonicalize_label

logger = logging.getLogger(__name__)

# Re-prompts allowed after a malformed extraction response.
MALFORMED_RETRIES = 2

_SLOT_KEYS = {"subject", "predicate", "object"}


class TripletParseError(ValueError):
    """The response held no well-formed triplet array."""


class ExtractionError(RuntimeError):
    """Every chunk of the document failed; nothing was extracted."""


class FailureReason(str, Enum):
    UNPARSEABLE_AFTER_RETRIES = "unparseable_after_retries"
    PROVIDER_ERROR = "provider_error"


@dataclass(frozen=True)
class Triplet:
    subject: str
    predicate: str
    object: str
    chunk_id: str
    raw_predicate: str


@dataclass(frozen=True)
class KnowledgeGraph:
    triplets: tuple[Triplet, ...]
    document_id: str
    ontology_version: int
    config_fingerprint: str


@dataclass(frozen=True)
class ExtractionFailure:
    chunk_id: str
    reason: FailureReason
    raw_text: str


@dataclass(frozen=True)
class Exemplar:
    """A generic worked example shown in every extraction prompt."""

    text: str
    triplets: tuple[tuple[str, str, str], ...]

    def rendered_output(self) -> str:
        return json.dumps(
            [{"subject": s, "predicate": p, "object": o} for s, p, o in self.triplets],
            ensure_ascii=False,
        )


# One tabular, one narrative, one negative. The negative example teaches the
# model that an empty array is a legal answer.
DEFAULT_EXEMPLARS: tuple[Exemplar, ...] = (
    Exemplar("EBIT margin was 3.4 (4.9)%.", ((("EBIT_margin"), "has_value", "3.4%"),)),
    Exemplar(
        "The company reported net sales of SEK 120 bn, driven by strong truck demand.",
        (("The company", "reports_metric", "net sales"), ("net sales", "has_value", "SEK 120 bn")),
    ),
    Exemplar("See note 12 for further accounting details.", ()),
)


def build_extraction_prompt(chunk: Chunk, ont: Ontology, exemplars: tuple[Exemplar, ...] = DEFAULT_EXEMPLARS) -> ProviderRequest:
    """Assemble the per-chunk extraction request (deterministic, temperature 0).

    Raises:
        ValueError: the ontology has no relations to extract against.
    """
    if not ont.relations:
        raise ValueError("cannot build an extraction prompt from an ontology with no relations")
    relation_lines = "\n".join(
        f"- {r.canonical_label}" + (f": {r.description}" if r.description else "") for r in ont.relations
    )
    concept_lines = "\n".join(
        f"- {c.canonical_label}" + (f": {c.description}" if c.description else "") for c in ont.concepts
    ) or "(none listed)"
    example_lines = "\n".join(
        f'Example text: "{ex.text}"\nExample output: {ex.rendered_output()}' for ex in exemplars
    )
    system = (
        "You extract subject-predicate-object facts from corporate report text. "
        "You only state facts the text supports."
    )
    user = (
        "Relation schema (the ONLY allowed predicates):\n"
        f"{relation_lines}\n"
        "\n"
        "Concepts to look for:\n"
        f"{concept_lines}\n"
        "\n"
        "Worked examples (generic, unrelated to the text below):\n"
        f"{example_lines}\n"
        "\n"
        f"Text:\n{TEXT_OPEN}\n{chunk.text}\n{TEXT_CLOSE}\n"
        "\n"
        "Extract every fact stated in the text whose predicate is in the relation "
        "schema. Reply with ONLY a JSON array of objects, each with exactly the "
        'keys "subject", "predicate", and "object". Reply [] if the text contains '
        "no extractable facts."
    )
    return ProviderRequest(
        role_messages=(("system", system), ("user", user)),
        request_tag=RequestTag.EXTRACTION,
    )


def parse_triplets(response_text: str, chunk_id: str) -> list[Triplet]:
    """Parse a response into triplets, tolerating fences and surrounding prose.

    The first well-formed JSON array wins. Every element must be an object
    with exactly the keys subject/predicate/object and string values;
    anything else fails the whole parse (the caller re-prompts). Entries
    whose slots are empty after trimming are dropped individually with a
    warning, and exact slot-wise duplicates keep their first occurrence.

    Raises:
        TripletParseError: no array found, or an element violates the schema.
    """
    payload = extract_first_json_array(response_text)
    if payload is None:
        raise TripletParseError(f"no JSON array in response for {chunk_id}")
    triplets: list[Triplet] = []
    seen: set[tuple[str, str, str]] = set()
    for i, entry in enumerate(payload):
        if not isinstance(entry, dict) or set(entry) != _SLOT_KEYS:
            raise TripletParseError(f"element {i} for {chunk_id} must have exactly the keys subject/predicate/object")
        if any(not isinstance(entry[k], str) for k in _SLOT_KEYS):
            raise TripletParseError(f"element {i} for {chunk_id} has non-string slot values")
        subject = entry["subject"].strip()
        raw_predicate = entry["predicate"].strip()
        obj = entry["object"].strip()
        try:
            predicate = canonicalize_label(raw_predicate) if raw_predicate else ""
        except ValueError:
            predicate = ""
        if not subject or not predicate or not obj:
            logger.warning("dropping triplet with empty slot in %s: %r", chunk_id, entry)
            continue
        key = (subject, predicate, obj)
        if key in seen:
            continue
        seen.add(key)
        triplets.append(Triplet(subject, predicate, obj, chunk_id, raw_predicate))
    return triplets


_FORMAT_REMINDER = (
    "Your previous reply could not be parsed. Reply with ONLY a JSON array of "
    'objects, each with exactly the keys "subject", "predicate", and "object", '
    "all string-valued. No prose, no code fences."
)


def extract_chunk(
    chunk: Chunk,
    ont: Ontology,
    gateway: Gateway,
    exemplars: tuple[Exemplar, ...] = DEFAULT_EXEMPLARS,
) -> tuple[list[Triplet], ExtractionFailure | None]:
    """Extract one chunk; never raises for recoverable, recordable failures.

    Cassette misses still propagate: they mean the fixture and the code have
    drifted, which must never be papered over.
    """
    request = build_extraction_prompt(chunk, ont, exemplars)
    last_text = ""
    for attempt in range(1 + MALFORMED_RETRIES):
        try:
            response = gateway.send(request)
        except CassetteMissError:
            raise
        except GatewayError as exc:
            logger.warning("provider failure on %s: %s", chunk.id, exc)
            return [], ExtractionFailure(chunk.id, FailureReason.PROVIDER_ERROR, str(exc))
        last_text = response.text
        try:
            return parse_triplets(response.text, chunk.id), None
        except TripletParseError as exc:
            logger.warning("extraction parse failure on %s (attempt %d): %s", chunk.id, attempt + 1, exc)
            request = ProviderRequest(
                role_messages=request.role_messages + (("user", _FORMAT_REMINDER),),
                request_tag=RequestTag.EXTRACTION,
            )
    return [], ExtractionFailure(chunk.id, FailureReason.UNPARSEABLE_AFTER_RETRIES, last_text)


def extract_document(
    doc: Document,
    ont: Ontology,
    gateway: Gateway,
    chunk_size: int = 5,
    overlap: int = 0,
    exemplars: tuple[Exemplar, ...] = DEFAULT_EXEMPLARS,
    config_fingerprint: str = "",
    max_workers: int = 1,
) -> tuple[KnowledgeGraph, list[ExtractionFailure]]:
    """Extract the whole document; results are ordered by chunk index.

    Chunks may be processed concurrently, but assembly order is fixed by
    chunk index so output never depends on scheduling.

    Raises:
        ExtractionError: every chunk failed.
    """
    chunks = chunk_document(doc, chunk_size=chunk_size, overlap=overlap)

    def one(chunk: Chunk) -> tuple[list[Triplet], ExtractionFailure | None]:
        return extract_chunk(chunk, ont, gateway, exemplars)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, chunks))
    else:
        results = [one(chunk) for chunk in chunks]

    triplets: list[Triplet] = []
    failures: list[ExtractionFailure] = []
    for extracted, failure in results:
        triplets.extend(extracted)
        if failure is not None:
            failures.append(failure)
    if chunks and len(failures) == len(chunks):
        raise ExtractionError(f"all {len(chunks)} chunks of {doc.id} failed extraction")
    kg = KnowledgeGraph(
        triplets=tuple(triplets),
        document_id=doc.id,
        ontology_version=ont.version,
        config_fingerprint=config_fingerprint,
    )
    return kg, failures


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def save_knowledge_graph(kg: KnowledgeGraph, path: str | Path) -> None:
    """Write kg.jsonl: one metadata line, then one triplet object per line."""
    meta = {
        "document_id": kg.document_id,
        "ontology_version": kg.ontology_version,
        "config_fingerprint": kg.config_fingerprint,
    }
    lines = [json.dumps(meta, sort_keys=True, ensure_ascii=False)]
    for t in kg.triplets:
        lines.append(
            json.dumps(
                {
                    "subject": t.subject,
                    "predicate": t.predicate,
                    "raw_predicate": t.raw_predicate,
                    "object": t.object,
                    "chunk_id": t.chunk_id,
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_knowledge_graph(path: str | Path) -> KnowledgeGraph:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty knowledge graph file")
    meta = json.loads(lines[0])
    triplets = tuple(
        Triplet(
            subject=obj["subject"],
            predicate=obj["predicate"],
            object=obj["object"],
            chunk_id=obj["chunk_id"],
            raw_predicate=obj.get("raw_predicate", obj["predicate"]),
        )
        for obj in map(json.loads, lines[1:])
    )
    return KnowledgeGraph(
        triplets=triplets,
        document_id=meta["document_id"],
        ontology_version=int(meta["ontology_version"]),
        config_fingerprint=meta["config_fingerprint"],
    )


def save_failures(failures: list[ExtractionFailure], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"chunk_id": f.chunk_id, "reason": f.reason.value, "raw_text": f.raw_text},
            sort_keys=True,
            ensure_ascii=False,
        )
        for f in failures
    ]
    Path(path).write_text(("\n".join(lines) + "\n") if lines else "", encoding="utf-8")
