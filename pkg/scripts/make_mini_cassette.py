#!/usr/bin/env python3
"""Regenerate fixtures/mini_cassette.jsonl.

The cassette pins the provider exchanges of a full hybrid run over
fixtures/mini_report.txt with the bundled manual ontology. Re-run this after
changing prompt templates, the mini report, or the manual ontology; replay
tests fail loudly (cassette miss) whenever the committed cassette is stale.

The recorded provider is the deterministic mock with a scripted judge that
accepts "The Group" as a coreference for "the company", so the cassette
exercises the judge-fallback path as well as plain extraction.
"""

import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from kgforge.cli import cmd_run  # noqa: E402
from kgforge.config import resolve_config  # noqa: E402
from kgforge.gateway import MockGateway, RecordGateway  # noqa: E402


def main() -> None:
    cassette = ROOT / "fixtures" / "mini_cassette.jsonl"
    if cassette.exists():
        cassette.unlink()
    with tempfile.TemporaryDirectory() as tmp:
        config = resolve_config(
            None,
            document_path=str(ROOT / "fixtures" / "mini_report.txt"),
            output_dir=str(Path(tmp) / "record-run"),
            ontology="manual:" + str(ROOT / "fixtures" / "manual_ontology.json"),
            gateway="mock",
            verify="hybrid",
        )
        recorder = RecordGateway(MockGateway(judge_script={"The Group": True}), cassette)
        cmd_run(config, gateway=recorder)
    entries = cassette.read_text(encoding="utf-8").splitlines()
    print(f"wrote {cassette} with {len(entries)} entries")


if __name__ == "__main__":
    main()
