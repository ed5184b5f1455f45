"""Report ingestion: sentence segmentation and fixed-size chunking.

Source reports are UTF-8 plain text with light markdown structure. Narrative
prose is split into sentences, each markdown table row becomes one
pseudo-sentence (pipes preserved), and each header becomes one sentence
(hash markers stripped). Every sentence carries a character span back into
the raw text. Chunking groups consecutive sentences into fixed-size windows.

All functions here are pure; values are frozen dataclasses and safe to share
across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

# Tokens before a '.' that never end a sentence. Financial prose is dense
# with unit and register abbreviations; keep this list short and explicit.
ABBREVIATIONS = frozenset(
    {
        "approx", "no", "vs", "e.g", "i.e", "etc", "cf", "ca", "fig",
        "sek", "bn", "mn", "inc", "ltd", "corp", "co", "mr", "mrs", "dr", "st",
    }
)

_TERMINATORS = frozenset(".!?")
_WS_RUN = re.compile(r"\s+")
# Underscores only count as emphasis when not embedded in a word (EBIT_margin
# must survive intact).
_EMPHASIS_UNDERSCORE = re.compile(r"(?<!\w)_+|_+(?!\w)")
_TABLE_SEPARATOR = re.compile(r"^[\s|:\-]+$")


@dataclass(frozen=True)
class Sentence:
    """One segmentation unit: a sentence, table row, or header line."""

    index: int
    text: str
    char_span: tuple[int, int]


@dataclass(frozen=True)
class Document:
    """A loaded report: raw text plus its retained, ordered sentences."""

    id: str
    source_path: str
    raw_text: str
    sentences: tuple[Sentence, ...]


@dataclass(frozen=True)
class Chunk:
    """A window of consecutive sentences; the unit of prompting and grounding."""

    id: str
    index: int
    sentences: tuple[Sentence, ...]
    text: str


def _blank_emphasis(text: str) -> str:
    """Replace markdown emphasis markers with spaces, preserving length."""
    text = text.replace("*", " ")
    return _EMPHASIS_UNDERSCORE.sub(lambda m: " " * len(m.group()), text)


def _collapse_ws(text: str) -> str:
    return _WS_RUN.sub(" ", text).strip()


def _token_before(working: str, i: int) -> str:
    """Word-and-dot run ending just before position i (backward walk, O(token))."""
    j = i
    while j > 0 and (working[j - 1].isalnum() or working[j - 1] in "._"):
        j -= 1
    return working[j:i]


def _is_boundary(working: str, i: int) -> bool:
    """True if the terminator at position i ends a sentence.

    A terminator splits when followed (after optional inline spaces) by a
    newline or end of text, or by whitespace and an uppercase letter.
    Abbreviations and decimal numbers never split.
    """
    ch = working[i]
    if ch == ".":
        token = _token_before(working, i)
        if token.rstrip(".").lower() in ABBREVIATIONS:
            return False
    j = i + 1
    while j < len(working) and working[j] in " \t":
        j += 1
    if j >= len(working) or working[j] in "\r\n":
        return True
    return j > i + 1 and working[j].isupper()


def _segment_block(working: str, base: int, start_index: int) -> list[Sentence]:
    """Split one narrative block into sentences with raw-text spans.

    `working` is the block with emphasis markers blanked; it has the same
    length as the raw slice starting at offset `base`.
    """
    sentences: list[Sentence] = []
    cursor = 0
    ends = [i + 1 for i, ch in enumerate(working) if ch in _TERMINATORS and _is_boundary(working, i)]
    if not ends or ends[-1] != len(working):
        ends.append(len(working))
    for end in ends:
        segment = working[cursor:end]
        text = _collapse_ws(segment)
        if text:
            first = cursor + (len(segment) - len(segment.lstrip()))
            last = cursor + len(segment.rstrip())
            sentences.append(
                Sentence(index=start_index + len(sentences), text=text, char_span=(base + first, base + last))
            )
        cursor = end
    return sentences


def segment_sentences(raw_text: str) -> list[Sentence]:
    """Deterministically segment raw report text into ordered sentences.

    Markdown table rows become one pseudo-sentence each (outer pipes
    stripped, inner pipes preserved); table separator rows are scaffolding
    and are dropped; headers become one sentence with hash markers stripped;
    emphasis markers are removed. Empty input yields an empty list.
    """
    sentences: list[Sentence] = []
    offset = 0
    block_start: int | None = None

    def flush_block(block_end: int) -> None:
        nonlocal block_start
        if block_start is None:
            return
        raw_slice = raw_text[block_start:block_end]
        sentences.extend(_segment_block(_blank_emphasis(raw_slice), block_start, len(sentences)))
        block_start = None

    for line in raw_text.splitlines(keepends=True):
        content = line.rstrip("\n")
        stripped = content.strip()
        line_start = offset
        offset += len(line)
        if not stripped:
            flush_block(line_start)
            continue
        if stripped.startswith("|"):
            flush_block(line_start)
            if _TABLE_SEPARATOR.match(stripped) and "-" in stripped:
                continue
            text = _collapse_ws(_blank_emphasis(stripped.strip("|")))
            if text:
                first = line_start + (len(content) - len(content.lstrip()))
                last = line_start + len(content.rstrip())
                sentences.append(Sentence(index=len(sentences), text=text, char_span=(first, last)))
            continue
        if stripped.startswith("#"):
            flush_block(line_start)
            text = _collapse_ws(_blank_emphasis(stripped.lstrip("#")))
            if text:
                first = line_start + (len(content) - len(content.lstrip()))
                last = line_start + len(content.rstrip())
                sentences.append(Sentence(index=len(sentences), text=text, char_span=(first, last)))
            continue
        if block_start is None:
            block_start = line_start
    flush_block(len(raw_text))
    return sentences


def _retained_count(fraction: float | Fraction, total: int) -> int:
    # str() round-trip keeps decimal CLI values exact (0.1 means 1/10, not
    # the nearest binary float).
    frac = fraction if isinstance(fraction, Fraction) else Fraction(str(fraction))
    return math.ceil(frac * total)


def load_document(path: str | Path, fraction: float | Fraction = 1.0) -> Document:
    """Load and segment a report, retaining the leading `fraction` of sentences.

    Args:
        path: UTF-8 text file, optionally with markdown structure.
        fraction: rational in (0, 1]; the document keeps the first
            ceil(fraction * total_sentences) sentences. Truncation happens at
            sentence granularity, never mid-sentence.

    Raises:
        ValueError: fraction out of range, or the file is empty after
            whitespace stripping.
        OSError: unreadable path.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    path = Path(path)
    raw_text = path.read_text(encoding="utf-8-sig")
    if not raw_text.strip():
        raise ValueError(f"document is empty: {path}")
    sentences = segment_sentences(raw_text)
    kept = sentences[: _retained_count(fraction, len(sentences))]
    return Document(id=path.stem, source_path=str(path), raw_text=raw_text, sentences=tuple(kept))


def chunk_document(doc: Document, chunk_size: int = 5, overlap: int = 0) -> list[Chunk]:
    """Partition a document's sentences into fixed-size chunks.

    With overlap 0 the chunks partition the sentence list exactly and the
    count is ceil(N / chunk_size). With overlap k > 0 consecutive chunks
    share exactly k sentences (experimental, default off).

    Raises:
        ValueError: chunk_size < 1 or overlap >= chunk_size.
    """
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    if not 0 <= overlap < chunk_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < chunk_size, got {overlap}")
    chunks: list[Chunk] = []
    step = chunk_size - overlap
    start = 0
    while start < len(doc.sentences):
        window = doc.sentences[start : start + chunk_size]
        # one sentence per line keeps table pseudo-sentences intact downstream
        chunks.append(
            Chunk(
                id=f"{doc.id}:c{len(chunks):04d}",
                index=len(chunks),
                sentences=window,
                text="\n".join(s.text for s in window),
            )
        )
        if start + chunk_size >= len(doc.sentences):
            break
        start += step
    return chunks
