"""Slot grounding: strict matching plus the regex-then-judge cascade.

Baseline mode grounds a subject or object by literal (normalized) substring
presence in its source chunk. Hybrid mode keeps that fast path and escalates
only the failures to a judge model, which may recognize coreference and
other surface-form changes. The cascade can therefore only ever flip a slot
from hallucinated to faithful, never the other way. Predicates are not this
module's concern; relation membership is checked by the metrics module.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import Chunk
from .extraction import KnowledgeGraph, Triplet
from .gateway import TEXT_CLOSE, TEXT_OPEN, Gateway, ProviderRequest, RequestTag

logger = logging.getLogger(__name__)

# Re-prompts allowed after an unparseable judge reply.
JUDGE_RETRIES = 2

_WS_RUN = re.compile(r"\s+")


class VerifyMode(str, Enum):
    BASELINE = "baseline"
    HYBRID = "hybrid"


class Slot(str, Enum):
    SUBJECT = "subject"
    OBJECT = "object"


class DecidedBy(str, Enum):
    REGEX = "regex"
    JUDGE = "judge"
    JUDGE_UNAVAILABLE = "judge_unavailable"


@dataclass(frozen=True)
class SlotVerdict:
    slot: Slot
    faithful: bool
    decided_by: DecidedBy
    judge_rationale: str | None = None


@dataclass(frozen=True)
class TripletVerdict:
    triplet_index: int
    subject_verdict: SlotVerdict
    object_verdict: SlotVerdict
    mode: VerifyMode


@dataclass(frozen=True)
class JudgeCacheEntry:
    key: tuple[str, str]
    verdict: bool
    rationale: str | None
    available: bool


def normalize_for_match(text: str) -> str:
    """Surface normalization for literal grounding; no semantics. Idempotent.

    Unicode-composed, case-folded, underscores as spaces, emphasis and pipe
    markers dropped, whitespace runs collapsed, edges trimmed.
    """
    text = unicodedata.normalize("NFC", text)
    text = text.replace("_", " ").replace("*", "").replace("|", "")
    return _WS_RUN.sub(" ", text.casefold()).strip()


def regex_grounded(entity: str, chunk: Chunk) -> bool:
    """Literal containment of the normalized entity in the normalized chunk.

    The entity is matched as plain text; pattern metacharacters in it mean
    nothing. An entity that normalizes to nothing cannot be grounded.
    """
    if not entity.strip():
        raise ValueError("entity is empty")
    needle = normalize_for_match(entity)
    return bool(needle) and needle in normalize_for_match(chunk.text)


class JudgeCache:
    """Per-run (entity, chunk) verdict cache with coalescing get-or-insert.

    Concurrent misses for the same key block on one per-key lock, so the
    gateway sees at most one judge request per distinct pair.
    """

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str], JudgeCacheEntry] = {}
        self._key_locks: dict[tuple[str, str], threading.Lock] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def get_or_compute(self, key: tuple[str, str], compute) -> JudgeCacheEntry:
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                return entry
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                entry = self._entries.get(key)
                if entry is not None:
                    return entry
            entry = compute()
            with self._lock:
                self._entries[key] = entry
            return entry


def build_judge_prompt(entity: str, chunk: Chunk) -> ProviderRequest:
    user = (
        "Decide whether the entity below is factually present in the passage, "
        "even if its surface form differs (case, underscores, abbreviations, or "
        "coreference such as a pronoun or implicit subject made explicit).\n"
        "\n"
        f"Passage [{chunk.id}]:\n{TEXT_OPEN}\n{chunk.text}\n{TEXT_CLOSE}\n"
        "\n"
        f'Entity: "{entity}"\n'
        "\n"
        "A numeric value that does not match the passage is never FAITHFUL.\n"
        "Reply with one line containing exactly the single token FAITHFUL or "
        "HALLUCINATED, then a one-sentence rationale on the next line."
    )
    return ProviderRequest(role_messages=(("user", user),), request_tag=RequestTag.JUDGE)


def _parse_judge_reply(text: str) -> tuple[bool, str | None] | None:
    lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not lines:
        return None
    token = lines[0].upper()
    if token not in ("FAITHFUL", "HALLUCINATED"):
        return None
    rationale = " ".join(lines[1:]) or None
    return token == "FAITHFUL", rationale


_FORMAT_REMINDER = (
    "Your previous reply could not be parsed. First line: exactly FAITHFUL or "
    "HALLUCINATED, nothing else. Second line: a one-sentence rationale."
)


def judge_grounded(
    entity: str,
    chunk: Chunk,
    gateway: Gateway,
    slot: Slot,
    cache: JudgeCache,
) -> SlotVerdict:
    """Escalate a regex miss to the judge; cached per (entity, chunk).

    An unparseable judge after the retry budget counts the slot as
    hallucinated (decided_by=judge_unavailable): the pipeline fails toward
    flagging, never toward excusing.
    """
    key = (normalize_for_match(entity), chunk.id)

    def compute() -> JudgeCacheEntry:
        request = build_judge_prompt(entity, chunk)
        for attempt in range(1 + JUDGE_RETRIES):
            response = gateway.send(request)
            parsed = _parse_judge_reply(response.text)
            if parsed is not None:
                verdict, rationale = parsed
                return JudgeCacheEntry(key, verdict, rationale, available=True)
            logger.warning("unparseable judge reply for %r in %s (attempt %d)", entity, chunk.id, attempt + 1)
            request = ProviderRequest(
                role_messages=request.role_messages + (("user", _FORMAT_REMINDER),),
                request_tag=RequestTag.JUDGE,
            )
        logger.warning("judge unavailable for %r in %s; counting the slot as hallucinated", entity, chunk.id)
        return JudgeCacheEntry(key, False, None, available=False)

    entry = cache.get_or_compute(key, compute)
    decided_by = DecidedBy.JUDGE if entry.available else DecidedBy.JUDGE_UNAVAILABLE
    return SlotVerdict(slot=slot, faithful=entry.verdict, decided_by=decided_by, judge_rationale=entry.rationale)


def _verify_slot(
    slot: Slot,
    value: str,
    chunk: Chunk,
    mode: VerifyMode,
    gateway: Gateway | None,
    cache: JudgeCache,
) -> SlotVerdict:
    if regex_grounded(value, chunk):
        return SlotVerdict(slot=slot, faithful=True, decided_by=DecidedBy.REGEX)
    if mode is VerifyMode.BASELINE:
        return SlotVerdict(slot=slot, faithful=False, decided_by=DecidedBy.REGEX)
    if gateway is None:
        raise ValueError("hybrid verification needs a gateway for the judge")
    return judge_grounded(value, chunk, gateway, slot, cache)


def verify_triplet(
    triplet: Triplet,
    chunk: Chunk,
    mode: VerifyMode,
    gateway: Gateway | None = None,
    cache: JudgeCache | None = None,
    triplet_index: int = 0,
) -> TripletVerdict:
    """Ground both entity slots of one triplet against its source chunk."""
    if chunk.id != triplet.chunk_id:
        raise ValueError(f"triplet belongs to {triplet.chunk_id}, got chunk {chunk.id}")
    cache = cache if cache is not None else JudgeCache()
    return TripletVerdict(
        triplet_index=triplet_index,
        subject_verdict=_verify_slot(Slot.SUBJECT, triplet.subject, chunk, mode, gateway, cache),
        object_verdict=_verify_slot(Slot.OBJECT, triplet.object, chunk, mode, gateway, cache),
        mode=mode,
    )


def verify_graph(
    kg: KnowledgeGraph,
    chunks_by_id: dict[str, Chunk],
    mode: VerifyMode,
    gateway: Gateway | None = None,
    cache: JudgeCache | None = None,
) -> list[TripletVerdict]:
    """Verify every triplet of a knowledge graph, sharing one judge cache."""
    cache = cache if cache is not None else JudgeCache()
    verdicts = []
    for i, triplet in enumerate(kg.triplets):
        if triplet.chunk_id not in chunks_by_id:
            raise KeyError(f"triplet {i} references unknown chunk {triplet.chunk_id}")
        verdicts.append(verify_triplet(triplet, chunks_by_id[triplet.chunk_id], mode, gateway, cache, i))
    return verdicts


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def _slot_dict(v: SlotVerdict) -> dict:
    return {
        "faithful": v.faithful,
        "decided_by": v.decided_by.value,
        "rationale": v.judge_rationale,
    }


def save_verdicts(verdicts: list[TripletVerdict], path: str | Path) -> None:
    lines = [
        json.dumps(
            {
                "triplet_index": v.triplet_index,
                "mode": v.mode.value,
                "subject": _slot_dict(v.subject_verdict),
                "object": _slot_dict(v.object_verdict),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        for v in verdicts
    ]
    Path(path).write_text(("\n".join(lines) + "\n") if lines else "", encoding="utf-8")


def load_verdicts(path: str | Path) -> list[TripletVerdict]:
    verdicts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        verdicts.append(
            TripletVerdict(
                triplet_index=obj["triplet_index"],
                subject_verdict=SlotVerdict(
                    Slot.SUBJECT,
                    obj["subject"]["faithful"],
                    DecidedBy(obj["subject"]["decided_by"]),
                    obj["subject"]["rationale"],
                ),
                object_verdict=SlotVerdict(
                    Slot.OBJECT,
                    obj["object"]["faithful"],
                    DecidedBy(obj["object"]["decided_by"]),
                    obj["object"]["rationale"],
                ),
                mode=VerifyMode(obj["mode"]),
            )
        )
    return verdicts
