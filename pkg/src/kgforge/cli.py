"""Pipeline orchestration and the command-line interface.

Stages compose as ingest -> (induce | load manual ontology) -> extract ->
verify -> evaluate; each is also runnable on its own against an existing run
directory. Exit codes: 0 success, 1 usage or configuration error, 2 pipeline
hard failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import (
    GATEWAY_MODES,
    VERIFY_MODES,
    ConfigError,
    RunConfig,
    build_gateway,
    load_config_file,
    resolve_config,
)
from .corpus import Chunk, Document, Sentence, chunk_document, load_document
from .extraction import (
    ExtractionError,
    ExtractionFailure,
    KnowledgeGraph,
    extract_document,
    load_knowledge_graph,
    save_failures,
    save_knowledge_graph,
)
from .gateway import Gateway, GatewayError
from .metrics import EvaluationReport, TableFormat, compute_report, render_table, save_report_json
from .ontology import (
    Ontology,
    OntologyFormatError,
    induce_ontology,
    load_manual_ontology,
    load_ontology,
    save_ontology,
)
from .verification import VerifyMode, load_verdicts, save_verdicts, verify_graph

logger = logging.getLogger(__name__)

INDUCED_ONTOLOGY_FILE = "ontology.induced.json"


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _run_dir(config: RunConfig) -> Path:
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = json.dumps(config.to_resolved_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    (run_dir / "config.resolved.json").write_text(resolved, encoding="utf-8")
    return run_dir


def _save_chunks(chunks: list[Chunk], path: Path) -> None:
    lines = [
        json.dumps(
            {
                "id": c.id,
                "index": c.index,
                "text": c.text,
                "sentences": [
                    {"index": s.index, "text": s.text, "char_span": list(s.char_span)} for s in c.sentences
                ],
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        for c in chunks
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_chunks(path: Path) -> list[Chunk]:
    if not path.is_file():
        raise ConfigError(f"{path} not found; run the ingest or run command first")
    chunks = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        sentences = tuple(
            Sentence(index=s["index"], text=s["text"], char_span=tuple(s["char_span"])) for s in obj["sentences"]
        )
        chunks.append(Chunk(id=obj["id"], index=obj["index"], sentences=sentences, text=obj["text"]))
    return chunks


# --------------------------------------------------------------------------
# Stage operations (plain functions; the click layer is thin)
# --------------------------------------------------------------------------

def cmd_ingest(config: RunConfig) -> tuple[Document, list[Chunk]]:
    run_dir = _run_dir(config)
    doc = load_document(config.document_path, config.fraction)
    chunks = chunk_document(doc, config.chunk_size, config.overlap)
    _save_chunks(chunks, run_dir / "chunks.jsonl")
    logger.info("ingest document=%s sentences=%d chunks=%d", doc.id, len(doc.sentences), len(chunks))
    click.echo(f"{doc.id}: {len(doc.sentences)} sentences, {len(chunks)} chunks")
    return doc, chunks


def cmd_induce(config: RunConfig, gateway: Gateway | None = None, doc: Document | None = None) -> Ontology:
    run_dir = _run_dir(config)
    doc = doc or load_document(config.document_path, config.fraction)
    gateway = gateway or build_gateway(config)
    ont = induce_ontology(doc, gateway, chunk_size=config.chunk_size, overlap=config.overlap)
    save_ontology(ont, run_dir / INDUCED_ONTOLOGY_FILE)
    logger.info("induce document=%s concepts=%d relations=%d version=%d", doc.id, len(ont.concepts), len(ont.relations), ont.version)
    click.echo(f"induced ontology: {len(ont.concepts)} concepts, {len(ont.relations)} relations")
    return ont


def _resolve_ontology(config: RunConfig, gateway: Gateway | None, doc: Document | None, for_reading: bool) -> Ontology:
    if config.manual_ontology_path:
        return load_manual_ontology(config.manual_ontology_path)
    induced_path = Path(config.output_dir) / INDUCED_ONTOLOGY_FILE
    if for_reading:
        if not induced_path.is_file():
            raise ConfigError(f"{induced_path} not found; run the induce, extract, or run command first")
        return load_ontology(induced_path)
    return cmd_induce(config, gateway, doc)


def cmd_extract(
    config: RunConfig,
    gateway: Gateway | None = None,
    doc: Document | None = None,
    chunks: list[Chunk] | None = None,
    ont: Ontology | None = None,
) -> tuple[KnowledgeGraph, list[ExtractionFailure]]:
    run_dir = _run_dir(config)
    gateway = gateway or build_gateway(config)
    if doc is None or chunks is None:
        doc, chunks = cmd_ingest(config)
    if ont is None:
        ont = _resolve_ontology(config, gateway, doc, for_reading=False)
    kg, failures = extract_document(
        doc,
        ont,
        gateway,
        chunk_size=config.chunk_size,
        overlap=config.overlap,
        exemplars=config.exemplars,
        config_fingerprint=config.fingerprint(),
        max_workers=config.max_workers,
    )
    save_knowledge_graph(kg, run_dir / "kg.jsonl")
    save_failures(failures, run_dir / "failures.jsonl")
    logger.info("extract document=%s triplets=%d failures=%d", doc.id, len(kg.triplets), len(failures))
    click.echo(f"extracted {len(kg.triplets)} triplets ({len(failures)} chunk failures)")
    return kg, failures


def cmd_verify(
    config: RunConfig,
    gateway: Gateway | None = None,
    kg: KnowledgeGraph | None = None,
    chunks: list[Chunk] | None = None,
):
    run_dir = _run_dir(config)
    if kg is None:
        kg_path = run_dir / "kg.jsonl"
        if not kg_path.is_file():
            raise ConfigError(f"{kg_path} not found; run the extract or run command first")
        kg = load_knowledge_graph(kg_path)
        if kg.config_fingerprint != config.fingerprint():
            logger.warning("kg.jsonl was produced by a different configuration (fingerprint mismatch)")
    chunks = chunks if chunks is not None else _load_chunks(run_dir / "chunks.jsonl")
    mode = VerifyMode(config.verify)
    if mode is VerifyMode.HYBRID and gateway is None:
        gateway = build_gateway(config)
    verdicts = verify_graph(kg, {c.id: c for c in chunks}, mode, gateway)
    save_verdicts(verdicts, run_dir / "verdicts.jsonl")
    flagged = sum(1 for v in verdicts if not v.subject_verdict.faithful or not v.object_verdict.faithful)
    logger.info("verify mode=%s triplets=%d flagged=%d", mode.value, len(verdicts), flagged)
    click.echo(f"verified {len(verdicts)} triplets in {mode.value} mode ({flagged} with flagged slots)")
    return verdicts


def _write_report_files(run_dir: Path, rows: list[EvaluationReport], caption: str) -> None:
    (run_dir / "report.txt").write_text(render_table(rows, TableFormat.TEXT, caption), encoding="utf-8")
    (run_dir / "report.csv").write_text(render_table(rows, TableFormat.CSV, caption), encoding="utf-8")
    (run_dir / "report.md").write_text(render_table(rows, TableFormat.MARKDOWN, caption), encoding="utf-8")
    save_report_json(rows, run_dir / "report.json", caption)


def cmd_evaluate(
    config: RunConfig,
    compare: bool = False,
    gateway: Gateway | None = None,
    kg: KnowledgeGraph | None = None,
    chunks: list[Chunk] | None = None,
    ont: Ontology | None = None,
    verdicts=None,
) -> list[EvaluationReport]:
    run_dir = _run_dir(config)
    if kg is None:
        kg_path = run_dir / "kg.jsonl"
        if not kg_path.is_file():
            raise ConfigError(f"{kg_path} not found; run the extract or run command first")
        kg = load_knowledge_graph(kg_path)
    if ont is None:
        ont = _resolve_ontology(config, gateway, None, for_reading=True)

    if compare:
        chunks = chunks if chunks is not None else _load_chunks(run_dir / "chunks.jsonl")
        chunks_by_id = {c.id: c for c in chunks}
        gateway = gateway or build_gateway(config)
        rows = []
        for mode in (VerifyMode.BASELINE, VerifyMode.HYBRID):
            mode_verdicts = verify_graph(kg, chunks_by_id, mode, gateway)
            rows.append(compute_report(kg, mode_verdicts, ont, config.label))
        caption = "Comparison of verification methods"
    else:
        if verdicts is None:
            verdicts_path = run_dir / "verdicts.jsonl"
            if not verdicts_path.is_file():
                raise ConfigError(f"{verdicts_path} not found; run the verify or run command first")
            verdicts = load_verdicts(verdicts_path)
        rows = [compute_report(kg, verdicts, ont, config.label)]
        caption = "Evaluation"
    _write_report_files(run_dir, rows, caption)
    for row in rows:
        logger.info(
            "evaluate label=%s mode=%s triplets=%d", row.config_label, row.verify_mode, row.triplet_count
        )
    click.echo(render_table(rows, TableFormat.TEXT, caption), nl=False)
    return rows


def cmd_run(config: RunConfig, gateway: Gateway | None = None) -> list[EvaluationReport]:
    """Full pipeline into one run directory; idempotent under replay."""
    gateway = gateway or build_gateway(config)
    doc, chunks = cmd_ingest(config)
    ont = _resolve_ontology(config, gateway, doc, for_reading=False)
    kg, _ = cmd_extract(config, gateway, doc, chunks, ont)
    verdicts = cmd_verify(config, gateway, kg, chunks)
    return cmd_evaluate(config, compare=False, gateway=gateway, kg=kg, chunks=chunks, ont=ont, verdicts=verdicts)


def cmd_matrix(matrix_path: str, output_dir: str, verbose: bool = False) -> list[EvaluationReport]:
    """Expand documents x ontologies x verify modes and render one table.

    Each combination runs in its own subdirectory of ``output_dir``; every
    document is ingested once so all its combinations share one chunking.
    """
    file_values = load_config_file(matrix_path)
    matrix = file_values.get("matrix")
    if not isinstance(matrix, dict):
        raise ConfigError(f"{matrix_path}: a [matrix] table with documents/ontologies/verify_modes is required")
    documents = matrix.get("documents") or []
    ontologies = matrix.get("ontologies") or ["auto"]
    verify_modes = matrix.get("verify_modes") or ["hybrid"]
    if not documents:
        raise ConfigError(f"{matrix_path}: matrix.documents must list at least one document")

    rows: list[EvaluationReport] = []
    for document in documents:
        shared_doc: Document | None = None
        shared_chunks: list[Chunk] | None = None
        for ontology in ontologies:
            for verify in verify_modes:
                if ontology == "auto":
                    strategy = "auto"
                else:
                    strategy = f"manual_{Path(ontology.split(':', 1)[-1]).stem}"
                sub = f"{Path(document).stem}__{strategy}__{verify}"
                config = resolve_config(
                    file_values,
                    document_path=document,
                    ontology=ontology,
                    verify=verify,
                    output_dir=str(Path(output_dir) / sub),
                )
                gateway = build_gateway(config)
                if shared_doc is None:
                    shared_doc, shared_chunks = cmd_ingest(config)
                else:
                    _run_dir(config)
                    _save_chunks(shared_chunks, Path(config.output_dir) / "chunks.jsonl")
                ont = _resolve_ontology(config, gateway, shared_doc, for_reading=False)
                kg, _ = cmd_extract(config, gateway, shared_doc, shared_chunks, ont)
                verdicts = cmd_verify(config, gateway, kg, shared_chunks)
                rows.append(compute_report(kg, verdicts, ont, f"{config.label}"))
    caption = "Aggregate metrics across all configurations"
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "matrix_report.txt").write_text(render_table(rows, TableFormat.TEXT, caption), encoding="utf-8")
    (out / "matrix_report.csv").write_text(render_table(rows, TableFormat.CSV, caption), encoding="utf-8")
    (out / "matrix_report.md").write_text(render_table(rows, TableFormat.MARKDOWN, caption), encoding="utf-8")
    save_report_json(rows, out / "matrix_report.json", caption)
    click.echo(render_table(rows, TableFormat.TEXT, caption), nl=False)
    return rows


# --------------------------------------------------------------------------
# Click wiring
# --------------------------------------------------------------------------

def _common_options(fn):
    options = [
        click.argument("document", required=False, type=click.Path()),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="TOML or JSON run config; flags override it."),
        click.option("--out", "output_dir", type=click.Path(file_okay=False), help="Run output directory (default: run)."),
        click.option("--ontology", help="'auto' or 'manual:<path>'."),
        click.option("--gateway", type=click.Choice(GATEWAY_MODES), help="Provider mode."),
        click.option("--cassette", type=click.Path(), help="Cassette file for record/replay."),
        click.option("--verify", type=click.Choice(VERIFY_MODES), help="Verification strategy."),
        click.option("--fraction", type=float, help="Leading fraction of sentences to keep, in (0, 1]."),
        click.option("--chunk-size", "chunk_size", type=int, help="Sentences per chunk (default 5)."),
        click.option("--overlap", type=int, help="Sentences shared by consecutive chunks (default 0)."),
        click.option("--seed", type=int, help="Mock-provider seed."),
        click.option("--verbose", is_flag=True, help="Debug logging incl. prompt/response sizes."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _resolve(document, config_path, verbose, **flags):
    _setup_logging(verbose)
    file_values = load_config_file(config_path) if config_path else None
    return resolve_config(file_values, document_path=document, **flags)


@click.group()
@click.version_option(package_name="kgforge")
def cli() -> None:
    """Triplet extraction from corporate reports with ontology-based evaluation."""


@cli.command()
@_common_options
def ingest(document, config_path, verbose, **flags):
    """Segment and chunk a report; write chunks.jsonl."""
    cmd_ingest(_resolve(document, config_path, verbose, **flags))


@cli.command()
@_common_options
def induce(document, config_path, verbose, **flags):
    """Induce a document-specific ontology; write ontology.induced.json."""
    cmd_induce(_resolve(document, config_path, verbose, **flags))


@cli.command()
@_common_options
def extract(document, config_path, verbose, **flags):
    """Extract triplets under the configured ontology; write kg.jsonl."""
    cmd_extract(_resolve(document, config_path, verbose, **flags))


@cli.command()
@_common_options
def verify(document, config_path, verbose, **flags):
    """Ground subjects and objects of an extracted graph; write verdicts.jsonl."""
    cmd_verify(_resolve(document, config_path, verbose, **flags))


@cli.command()
@click.option("--compare", is_flag=True, help="Evaluate baseline and hybrid side by side.")
@_common_options
def evaluate(document, config_path, verbose, compare, **flags):
    """Compute OC/SH/OH/RH and render report files."""
    cmd_evaluate(_resolve(document, config_path, verbose, **flags), compare=compare)


@cli.command()
@_common_options
def run(document, config_path, verbose, **flags):
    """Run the full pipeline: ingest, ontology, extract, verify, evaluate."""
    cmd_run(_resolve(document, config_path, verbose, **flags))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_dir", default="matrix", type=click.Path(file_okay=False))
@click.option("--verbose", is_flag=True)
def matrix(config_path, output_dir, verbose):
    """Run a documents x ontologies x verify-modes grid and render one table."""
    _setup_logging(verbose)
    cmd_matrix(config_path, output_dir, verbose)


def main(argv=None) -> None:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except (GatewayError, ExtractionError, OntologyFormatError, OSError, ValueError) as exc:
        click.echo(f"pipeline failure: {exc}", err=True)
        sys.exit(2)
    sys.exit(0)


if __name__ == "__main__":
    main()
