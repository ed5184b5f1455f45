"""CLI surface: config resolution, stage commands, run artifacts, exit codes."""

import json

import pytest

from conftest import FIXTURES
from kgforge.cli import cmd_evaluate, cmd_extract, cmd_ingest, cmd_matrix, cmd_run, cmd_verify, main
from kgforge.config import ConfigError, RunConfig, build_gateway, load_config_file, resolve_config
from kgforge.extraction import DEFAULT_EXEMPLARS
from kgforge.gateway import MockGateway, ReplayGateway

REPORT = FIXTURES / "synthetic_report.txt"
MINI = FIXTURES / "mini_report.txt"
MANUAL = FIXTURES / "manual_ontology.json"
CASSETTE = FIXTURES / "mini_cassette.jsonl"


def mini_config(tmp_path, **overrides) -> RunConfig:
    values = dict(
        document_path=str(MINI),
        output_dir=str(tmp_path / "run"),
        ontology=f"manual:{MANUAL}",
        gateway="mock",
        verify="hybrid",
    )
    values.update(overrides)
    return resolve_config(None, **values)


class TestConfig:
    def test_flags_override_file(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text(f'document_path = "{MINI}"\nchunk_size = 3\nseed = 9\n', encoding="utf-8")
        config = resolve_config(load_config_file(cfg_file), chunk_size=4, output_dir=str(tmp_path))
        assert config.chunk_size == 4  # flag wins
        assert config.seed == 9  # file value survives

    def test_json_config_accepted(self, tmp_path):
        cfg_file = tmp_path / "run.json"
        cfg_file.write_text(json.dumps({"document_path": str(MINI), "overlap": 1}), encoding="utf-8")
        config = resolve_config(load_config_file(cfg_file), output_dir=str(tmp_path))
        assert config.overlap == 1

    def test_unknown_keys_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text('documnt_path = "x"\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown config keys"):
            load_config_file(cfg_file)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"gateway": "replay", "cassette": None},
            {"gateway": "record", "cassette": None},
            {"ontology": "manual:/does/not/exist.json"},
            {"ontology": "sideways"},
            {"fraction": 0.0},
            {"overlap": 5},
            {"verify": "psychic"},
        ],
    )
    def test_invalid_configs_rejected(self, tmp_path, overrides):
        with pytest.raises(ConfigError):
            mini_config(tmp_path, **overrides)

    def test_missing_document_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            resolve_config(None, document_path=str(tmp_path / "nope.txt"), output_dir=str(tmp_path))

    def test_fingerprint_ignores_storage_fields(self, tmp_path):
        a = mini_config(tmp_path)
        b = mini_config(tmp_path, output_dir=str(tmp_path / "elsewhere"))
        c = mini_config(tmp_path, chunk_size=3)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_exemplars_from_file(self, tmp_path):
        cfg_file = tmp_path / "run.json"
        cfg_file.write_text(
            json.dumps(
                {
                    "document_path": str(MINI),
                    "exemplars": [
                        {"text": "X was 1.", "triplets": [{"subject": "X", "predicate": "has_value", "object": "1"}]}
                    ],
                }
            ),
            encoding="utf-8",
        )
        config = resolve_config(load_config_file(cfg_file), output_dir=str(tmp_path))
        assert config.exemplars != DEFAULT_EXEMPLARS
        assert config.exemplars[0].triplets == (("X", "has_value", "1"),)

    def test_build_gateway_modes(self, tmp_path):
        assert isinstance(build_gateway(mini_config(tmp_path)), MockGateway)
        replay = mini_config(tmp_path, gateway="replay", cassette=str(CASSETTE))
        assert isinstance(build_gateway(replay), ReplayGateway)


class TestStages:
    def test_ingest_writes_chunks(self, tmp_path):
        config = mini_config(tmp_path)
        doc, chunks = cmd_ingest(config)
        lines = (tmp_path / "run" / "chunks.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(lines) == len(chunks) == 3
        assert (tmp_path / "run" / "config.resolved.json").is_file()

    def test_extract_then_verify_then_evaluate_from_artifacts(self, tmp_path):
        config = mini_config(tmp_path)
        cmd_extract(config)
        cmd_verify(config)
        rows = cmd_evaluate(config)
        assert len(rows) == 1
        run = tmp_path / "run"
        for name in ("kg.jsonl", "failures.jsonl", "verdicts.jsonl", "report.txt", "report.csv", "report.md", "report.json"):
            assert (run / name).is_file(), name

    def test_verify_without_extract_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="kg.jsonl"):
            cmd_verify(mini_config(tmp_path))

    def test_evaluate_compare_emits_two_rows_with_dominance(self, tmp_path):
        config = mini_config(tmp_path)
        cmd_extract(config)
        rows = cmd_evaluate(config, compare=True)
        assert [r.verify_mode for r in rows] == ["baseline", "hybrid"]
        assert rows[1].sh_pct <= rows[0].sh_pct
        assert rows[1].oh_pct <= rows[0].oh_pct
        report = json.loads((tmp_path / "run" / "report.json").read_text(encoding="utf-8"))
        assert len(report["rows"]) == 2

    def test_run_embeds_config_fingerprint(self, tmp_path):
        config = mini_config(tmp_path)
        cmd_run(config)
        first_line = json.loads((tmp_path / "run" / "kg.jsonl").read_text(encoding="utf-8").splitlines()[0])
        resolved = json.loads((tmp_path / "run" / "config.resolved.json").read_text(encoding="utf-8"))
        assert first_line["config_fingerprint"] == resolved["fingerprint"] == config.fingerprint()

    def test_auto_ontology_run_writes_induced_file(self, tmp_path):
        config = mini_config(tmp_path, ontology="auto")
        cmd_run(config)
        induced = json.loads((tmp_path / "run" / "ontology.induced.json").read_text(encoding="utf-8"))
        assert induced["provenance"] == "induced"
        assert induced["relations"]

    def test_replay_rerun_over_same_directory_is_idempotent(self, tmp_path):
        config = mini_config(tmp_path, gateway="replay", cassette=str(CASSETTE))
        cmd_run(config)
        run = tmp_path / "run"
        artifacts = ["kg.jsonl", "verdicts.jsonl", "report.txt", "report.csv", "report.md", "report.json"]
        before = {name: (run / name).read_bytes() for name in artifacts}
        cmd_run(config)
        after = {name: (run / name).read_bytes() for name in artifacts}
        assert before == after


class TestMatrix:
    def test_grid_runs_and_combined_table(self, tmp_path):
        cfg = tmp_path / "matrix.toml"
        cfg.write_text(
            "gateway = \"mock\"\n"
            "[matrix]\n"
            f"documents = [\"{MINI}\"]\n"
            f"ontologies = [\"auto\", \"manual:{MANUAL}\"]\n"
            "verify_modes = [\"baseline\", \"hybrid\"]\n",
            encoding="utf-8",
        )
        rows = cmd_matrix(str(cfg), str(tmp_path / "grid"))
        assert len(rows) == 4
        combined = (tmp_path / "grid" / "matrix_report.md").read_text(encoding="utf-8")
        assert combined.count("mini_report/") == 4
        subdirs = {p.name for p in (tmp_path / "grid").iterdir() if p.is_dir()}
        assert subdirs == {
            "mini_report__auto__baseline",
            "mini_report__auto__hybrid",
            "mini_report__manual_manual_ontology__baseline",
            "mini_report__manual_manual_ontology__hybrid",
        }

    def test_matrix_requires_documents(self, tmp_path):
        cfg = tmp_path / "matrix.toml"
        cfg.write_text("[matrix]\ndocuments = []\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            cmd_matrix(str(cfg), str(tmp_path / "grid"))


class TestExitCodes:
    def run_main(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        return exc.value.code

    def test_success_is_zero(self, tmp_path):
        code = self.run_main(
            ["run", str(MINI), "--gateway", "mock", "--ontology", f"manual:{MANUAL}", "--out", str(tmp_path / "r")]
        )
        assert code == 0

    def test_usage_error_is_one(self, tmp_path):
        assert self.run_main(["run", str(MINI), "--gateway", "warp", "--out", str(tmp_path)]) == 1

    def test_config_error_is_one(self, tmp_path):
        assert self.run_main(["run", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 1
        assert self.run_main(["run", str(MINI), "--gateway", "replay", "--out", str(tmp_path)]) == 1

    def test_pipeline_failure_is_two(self, tmp_path):
        empty_cassette = tmp_path / "empty.jsonl"
        empty_cassette.write_text("", encoding="utf-8")
        code = self.run_main(
            [
                "run", str(MINI),
                "--gateway", "replay",
                "--cassette", str(empty_cassette),
                "--ontology", f"manual:{MANUAL}",
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code == 2

    def test_help_is_zero(self):
        assert self.run_main(["--help"]) == 0
