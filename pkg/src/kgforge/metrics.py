"""Micro-averaged evaluation: conformance and hallucination percentages.

All four metrics are counted over the union of a configuration's extracted
triplets, never averaged per chunk. Percentages are exact rationals until
the moment they are rendered; relation hallucination is the structural
complement of conformance, so OC + RH = 100 holds by construction for every
non-empty report.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path

from .extraction import KnowledgeGraph, Triplet
from .ontology import Ontology
from .verification import TripletVerdict

UNDEFINED = "undefined"


class TableFormat(str, Enum):
    TEXT = "text"
    CSV = "csv"
    MARKDOWN = "markdown"


@dataclass(frozen=True)
class MetricCounts:
    conformant: int
    subj_hallucinated: int
    obj_hallucinated: int
    rel_hallucinated: int


@dataclass(frozen=True)
class EvaluationReport:
    config_label: str
    verify_mode: str
    ontology_version: int
    triplet_count: int
    counts: MetricCounts
    oc_pct: Fraction | None
    sh_pct: Fraction | None
    oh_pct: Fraction | None
    rh_pct: Fraction | None


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[EvaluationReport, ...]
    caption: str = ""


def relation_conformant(triplet: Triplet, ont: Ontology) -> bool:
    """True iff the triplet's canonical predicate is in the relation set."""
    return triplet.predicate in ont.relation_labels


def compute_report(
    kg: KnowledgeGraph,
    verdicts: list[TripletVerdict],
    ont: Ontology,
    label: str,
) -> EvaluationReport:
    """Count over the full triplet union and derive exact percentages.

    Relation-hallucinated triplets stay in every denominator and their slots
    still count: nothing is excluded. An empty graph yields a report whose
    percentages are undefined rather than a division by zero.

    Raises:
        ValueError: verdicts do not cover the triplets one-to-one.
    """
    if len(verdicts) != len(kg.triplets):
        raise ValueError(f"{len(kg.triplets)} triplets but {len(verdicts)} verdicts")
    total = len(kg.triplets)
    conformant = sum(1 for t in kg.triplets if relation_conformant(t, ont))
    subj_bad = sum(1 for v in verdicts if not v.subject_verdict.faithful)
    obj_bad = sum(1 for v in verdicts if not v.object_verdict.faithful)
    counts = MetricCounts(
        conformant=conformant,
        subj_hallucinated=subj_bad,
        obj_hallucinated=obj_bad,
        rel_hallucinated=total - conformant,
    )
    mode = verdicts[0].mode.value if verdicts else "baseline"
    if total == 0:
        return EvaluationReport(label, mode, kg.ontology_version, 0, counts, None, None, None, None)
    oc = Fraction(100 * conformant, total)
    return EvaluationReport(
        config_label=label,
        verify_mode=mode,
        ontology_version=kg.ontology_version,
        triplet_count=total,
        counts=counts,
        oc_pct=oc,
        sh_pct=Fraction(100 * subj_bad, total),
        oh_pct=Fraction(100 * obj_bad, total),
        rh_pct=100 - oc,
    )


def format_pct(value: Fraction | None) -> str:
    """Render a percentage: integers plain, one decimal, two below 1 percent."""
    if value is None:
        return UNDEFINED
    if value.denominator == 1:
        return f"{value.numerator} %"
    places = Decimal("0.1") if value >= 1 else Decimal("0.01")
    quantized = (Decimal(value.numerator) / Decimal(value.denominator)).quantize(places, rounding=ROUND_HALF_UP)
    return f"{quantized} %"


_HEADERS = ("Configuration", "Verification", "OC (↑)", "SH (↓)", "OH (↓)", "RH (↓)")


def _row_cells(report: EvaluationReport) -> tuple[str, ...]:
    return (
        report.config_label,
        report.verify_mode,
        format_pct(report.oc_pct),
        format_pct(report.sh_pct),
        format_pct(report.oh_pct),
        format_pct(report.rh_pct),
    )


def render_table(rows: list[EvaluationReport], fmt: TableFormat | str = TableFormat.TEXT, caption: str = "") -> str:
    """Deterministic, locale-independent rendering in text, csv, or markdown."""
    if not rows:
        raise ValueError("a comparison table needs at least one row")
    fmt = TableFormat(fmt)
    cells = [_row_cells(r) for r in rows]
    if fmt is TableFormat.CSV:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "verify_mode", "oc_pct", "sh_pct", "oh_pct", "rh_pct"])
        for report, row in zip(rows, cells):
            writer.writerow(row[:2] + tuple(c.removesuffix(" %") for c in row[2:]))
        return buf.getvalue()
    if fmt is TableFormat.MARKDOWN:
        lines = []
        if caption:
            lines.append(f"**{caption}**")
            lines.append("")
        lines.append("| " + " | ".join(_HEADERS) + " |")
        lines.append("|" + "|".join(" --- " for _ in _HEADERS) + "|")
        lines.extend("| " + " | ".join(row) + " |" for row in cells)
        return "\n".join(lines) + "\n"
    widths = [max(len(h), *(len(row[i]) for row in cells)) for i, h in enumerate(_HEADERS)]
    lines = []
    if caption:
        lines.append(caption)
    lines.append("  ".join(h.ljust(w) for h, w in zip(_HEADERS, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells)
    return "\n".join(lines) + "\n"


def _fraction_json(value: Fraction | None) -> dict | None:
    if value is None:
        return None
    return {"numerator": value.numerator, "denominator": value.denominator}


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "label": report.config_label,
        "verify_mode": report.verify_mode,
        "ontology_version": report.ontology_version,
        "triplet_count": report.triplet_count,
        "counts": {
            "conformant": report.counts.conformant,
            "subj_hallucinated": report.counts.subj_hallucinated,
            "obj_hallucinated": report.counts.obj_hallucinated,
            "rel_hallucinated": report.counts.rel_hallucinated,
        },
        "percentages": {
            "oc": _fraction_json(report.oc_pct),
            "sh": _fraction_json(report.sh_pct),
            "oh": _fraction_json(report.oh_pct),
            "rh": _fraction_json(report.rh_pct),
        },
    }


def save_report_json(rows: list[EvaluationReport], path: str | Path, caption: str = "") -> None:
    payload = {"caption": caption, "rows": [report_to_dict(r) for r in rows]}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
