from pathlib import Path

import pytest
import yaml

from anonpsy.cli import main
from anonpsy.config import ConfigError, load_config

from .conftest import CORPUS_DIR, FIXTURES_DIR


def _write_config(tmp_path: Path, **overrides) -> Path:
    doc = {
        "seed": 42,
        "jobs": 1,
        "gateway": {"backend": "mock", "fixtures_dir": str(FIXTURES_DIR)},
    }
    doc.update(overrides)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def _tree(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestRunCommand:
    def test_run_produces_deid_for_every_case(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        out_dir = tmp_path / "run"
        code = main(["run", str(CORPUS_DIR), str(out_dir), "--config", str(config)])
        assert code == 0
        deids = sorted(p.parent.name for p in out_dir.glob("*/deid.txt"))
        assert deids == ["case_001", "case_002", "case_003"]
        assert (out_dir / "run_manifest.yaml").is_file()
        manifest = yaml.safe_load((out_dir / "run_manifest.yaml").read_text())
        assert manifest["seed"] == 42
        assert manifest["prompt_assets"]

    def test_rerun_is_byte_identical(self, tmp_path):
        config = _write_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(CORPUS_DIR), str(out_a), "--config", str(config)]) == 0
        assert main(["run", str(CORPUS_DIR), str(out_b), "--config", str(config)]) == 0
        assert _tree(out_a) == _tree(out_b)

    def test_staged_commands_match_run(self, tmp_path):
        config = _write_config(tmp_path)
        staged, direct = tmp_path / "staged", tmp_path / "direct"
        assert main(["convert", str(CORPUS_DIR), str(staged), "--config", str(config)]) == 0
        assert main(["perturb", str(staged), "--config", str(config)]) == 0
        assert main(["generate", str(staged), "--config", str(config)]) == 0
        assert main(["run", str(CORPUS_DIR), str(direct), "--config", str(config)]) == 0
        assert _tree(staged) == _tree(direct)

    def test_case_failures_isolate_and_exit_one(self, tmp_path, capsys):
        broken_corpus = tmp_path / "corpus"
        broken_corpus.mkdir()
        for path in CORPUS_DIR.iterdir():
            (broken_corpus / path.name).write_bytes(path.read_bytes())
        (broken_corpus / "case_999.txt").write_text("A narrative with no fixtures at all.")
        manifest = yaml.safe_load((broken_corpus / "manifest.yaml").read_text())
        manifest["cases"].append({"case_id": "case_999", "file": "case_999.txt", "diagnoses": []})
        (broken_corpus / "manifest.yaml").write_text(yaml.safe_dump(manifest))

        config = _write_config(tmp_path)
        out_dir = tmp_path / "run"
        code = main(["run", str(broken_corpus), str(out_dir), "--config", str(config)])
        assert code == 1
        # Healthy cases still completed end to end.
        assert (out_dir / "case_001" / "deid.txt").is_file()
        err = capsys.readouterr().err
        assert "case_999" in err and "FAILED" in err


class TestBaselineAndEval:
    def test_full_evaluation_flow(self, tmp_path):
        config = _write_config(tmp_path)
        out_dir = tmp_path / "run"
        assert main(["run", str(CORPUS_DIR), str(out_dir), "--config", str(config)]) == 0
        for name in ("phi", "sdc", "llm_only"):
            assert main(["baseline", name, str(CORPUS_DIR), str(out_dir), "--config", str(config)]) == 0
        assert main(["eval", str(out_dir), "--config", str(config)]) == 0
        report = yaml.safe_load((out_dir / "report.yaml").read_text())
        assert {"anonpsy", "phi", "sdc", "llm_only", "original"} <= set(report["variant_means"])
        assert (out_dir / "report.csv").read_text().startswith("case_id,variant")

    def test_eval_without_run_outputs_fails_with_names(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        missing = tmp_path / "never_ran"
        code = main(["eval", str(missing), "--config", str(config)])
        assert code == 2
        assert "never_ran" in capsys.readouterr().err

    def test_eval_with_incomplete_case_names_artifact(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        out_dir = tmp_path / "run"
        assert main(["convert", str(CORPUS_DIR), str(out_dir), "--config", str(config)]) == 0
        code = main(["eval", str(out_dir), "--config", str(config)])
        assert code == 2
        assert "deid.txt" in capsys.readouterr().err


class TestUsageErrors:
    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["run", str(CORPUS_DIR), str(tmp_path / "out"), "--config", str(tmp_path / "nope.yaml")])
        assert code == 2
        assert "config" in capsys.readouterr().err

    def test_missing_corpus_manifest(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        code = main(["run", str(tmp_path / "empty"), str(tmp_path / "out"), "--config", str(config)])
        assert code == 2
        assert "manifest" in capsys.readouterr().err

    def test_mock_backend_requires_fixtures_dir(self, tmp_path, capsys):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"gateway": {"backend": "mock"}}))
        code = main(["run", str(CORPUS_DIR), str(tmp_path / "out"), "--config", str(path)])
        assert code == 2
        assert "fixtures_dir" in capsys.readouterr().err


class TestConfigLoading:
    def test_flag_overrides_beat_file(self, tmp_path):
        config_path = _write_config(tmp_path, seed=7)
        config = load_config(config_path, seed=99, jobs=2)
        assert config.seed == 99 and config.jobs == 2
        assert config.perturb.seed == 99

    def test_env_overrides_gateway(self, tmp_path, monkeypatch):
        config_path = _write_config(tmp_path)
        monkeypatch.setenv("ANONPSY_MODEL", "other-model")
        monkeypatch.setenv("ANONPSY_ENDPOINT", "http://example.internal:11434")
        config = load_config(config_path)
        assert config.model == "other-model"
        assert config.endpoint == "http://example.internal:11434"

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"mystery": {}}))
        with pytest.raises(ConfigError, match="mystery"):
            load_config(path)

    def test_digest_stable_and_sensitive(self, tmp_path):
        config_path = _write_config(tmp_path)
        a = load_config(config_path)
        b = load_config(config_path)
        assert a.digest() == b.digest()
        assert load_config(config_path, seed=1).digest() != a.digest()

    def test_perturb_section_round_trips(self, tmp_path):
        config_path = _write_config(tmp_path, perturb={"similarity_threshold": 0.5, "max_retries": 2})
        config = load_config(config_path)
        assert config.perturb.similarity_threshold == 0.5
        assert config.perturb.max_retries == 2


class TestWorkerPool:
    def test_parallel_run_matches_serial(self, tmp_path):
        serial_config = _write_config(tmp_path, seed=42, jobs=1)
        out_serial = tmp_path / "serial"
        assert main(["run", str(CORPUS_DIR), str(out_serial), "--config", str(serial_config)]) == 0
        out_parallel = tmp_path / "parallel"
        assert main(["run", str(CORPUS_DIR), str(out_parallel), "--config", str(serial_config), "--jobs", "3"]) == 0
        serial_tree = _tree(out_serial)
        parallel_tree = _tree(out_parallel)
        # The manifest records per-stage status identically; artifacts match.
        assert serial_tree == parallel_tree
