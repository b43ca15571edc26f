# margins/tests/test_pipeline.py
"""
margins Pipeline Tests
End-to-end stage runs through the command line on a small synthetic dataset
"""

import json
import logging

import pandas as pd
import pytest
from click.testing import CliRunner

from margins.main import cli
from margins.services.pipeline import ArtifactStore
from margins.utils.helpers import read_json
from margins.utils.validators import ArtifactMismatchError


def synth_args(tmp_path, seed=0):
    return [
        "synth", "--n", "600", "--prevalence", "0.05", "--seed", str(seed),
        "--out-csv", str(tmp_path / "data" / "synthetic.csv"),
        "--out-schema", str(tmp_path / "data" / "synthetic.schema.json"),
        "--run-config", str(tmp_path / "run.json"),
    ]


def artifact_bytes(directory):
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir()) if path.is_file()}


class TestCommandLine:
    """Stage commands, exit codes and manifest checks"""

    def setup_method(self):
        self.runner = CliRunner()

    def teardown_method(self):
        # configure_logging binds handlers to the runner's streams
        logging.getLogger().handlers.clear()

    def invoke(self, *args):
        return self.runner.invoke(cli, ["--log-level", "WARNING", *args])

    def prepare(self, tmp_path):
        result = self.invoke(*synth_args(tmp_path))
        assert result.exit_code == 0, result.output
        # small embedding and a short schedule keep the end-to-end runs quick
        config = read_json(tmp_path / "run.json")
        config.update({"embedding": {"dim": 16, "min_df": 2}, "sweep": {"schedule": [1, 5, 10, 20]}})
        (tmp_path / "run.json").write_text(json.dumps(config))
        return str(tmp_path / "run.json")

    def test_synth_writes_a_loadable_run_config(self, tmp_path):
        result = self.invoke(*synth_args(tmp_path))

        assert result.exit_code == 0
        assert "wrote 600 rows" in result.output
        config = read_json(tmp_path / "run.json")
        assert config["dataset_path"] == "data/synthetic.csv"
        assert config["seed"] == 0

    def test_synth_rejects_bad_settings(self, tmp_path):
        args = synth_args(tmp_path)
        args[args.index("--prevalence") + 1] = "1.5"
        result = self.invoke(*args)
        assert result.exit_code == 2

    def test_run_produces_every_artifact(self, tmp_path):
        config = self.prepare(tmp_path)
        out = tmp_path / "out"
        result = self.invoke("run", "--config", config, "--out", str(out))

        assert result.exit_code == 0, result.output
        names = set(artifact_bytes(out))
        for expected in (
            "dataset.csv",
            "embeddings.embd",
            "outliers_text.csv",
            "outliers_demographic.csv",
            "outliers_disagreement.csv",
            "audit.json",
            "sweep.json",
            "report.md",
            "manifest.json",
        ):
            assert expected in names
        manifest = read_json(out / "manifest.json")
        assert set(manifest["stages"]) == {"ingest", "embed", "detect", "audit", "sweep", "report"}
        assert manifest["stages"]["embed"]["meta"] == {"source": "builtin", "seed": 0}
        assert set(manifest["stages"]["detect"]["inputs"]) == {"ingest", "embed"}
        audit = read_json(out / "audit.json")
        assert audit["n_rows"] == 600
        assert audit["outlier_counts"]["demographic"] == 30

    def test_stages_are_deterministic_across_thread_counts(self, tmp_path):
        config = self.prepare(tmp_path)
        for threads in ("1", "3"):
            result = self.invoke("run", "--config", config, "--out", str(tmp_path / f"t{threads}"),
                                 "--threads", threads)
            assert result.exit_code == 0, result.output

        assert artifact_bytes(tmp_path / "t1") == artifact_bytes(tmp_path / "t3")

    def test_audit_before_detect(self, tmp_path):
        config = self.prepare(tmp_path)
        out = str(tmp_path / "out")
        assert self.invoke("ingest", "--config", config, "--out", out, "--space", "demographic").exit_code == 0

        result = self.invoke("audit", "--config", config, "--out", out, "--space", "demographic")

        assert result.exit_code == 2
        assert "missing outliers: run detect first" in result.output

    def test_detect_refuses_artifacts_from_another_seed(self, tmp_path):
        config = self.prepare(tmp_path)
        out = str(tmp_path / "out")
        assert self.invoke("ingest", "--config", config, "--out", out, "--space", "demographic").exit_code == 0

        result = self.invoke("detect", "--config", config, "--out", out, "--seed", "1", "--space", "demographic")

        assert result.exit_code == 2
        assert "run ingest again" in result.output

    def test_edited_artifact_is_detected(self, tmp_path):
        config = self.prepare(tmp_path)
        out = tmp_path / "out"
        assert self.invoke("ingest", "--config", config, "--out", str(out), "--space", "demographic").exit_code == 0
        with open(out / "dataset.csv", "a", encoding="utf-8") as handle:
            handle.write("\n")

        result = self.invoke("detect", "--config", config, "--out", str(out), "--space", "demographic")

        assert result.exit_code == 2
        assert "changed since ingest" in result.output

    def test_audit_refuses_outliers_from_an_earlier_ingest(self, tmp_path):
        config = self.prepare(tmp_path)
        out = str(tmp_path / "out")
        for stage in ("ingest", "detect"):
            assert self.invoke(stage, "--config", config, "--out", out, "--space", "demographic").exit_code == 0
        dataset = tmp_path / "data" / "synthetic.csv"
        frame = pd.read_csv(dataset)
        frame["black"] = 0.0
        frame.to_csv(dataset, index=False)
        assert self.invoke("ingest", "--config", config, "--out", out, "--space", "demographic").exit_code == 0

        result = self.invoke("audit", "--config", config, "--out", out, "--space", "demographic")

        assert result.exit_code == 2
        assert "older ingest output: run detect again" in result.output

    def test_detect_single_space(self, tmp_path):
        config = self.prepare(tmp_path)
        out = str(tmp_path / "out")
        self.invoke("ingest", "--config", config, "--out", out, "--space", "demographic")
        result = self.invoke("detect", "--config", config, "--out", out, "--space", "demographic")

        assert result.exit_code == 0, result.output
        assert "demographic: 30 outliers" in result.output

    def test_missing_config_file(self, tmp_path):
        result = self.invoke("ingest", "--config", str(tmp_path / "nope.json"))
        assert result.exit_code == 2
        assert "config file not found" in result.output

    def test_score_without_scorer(self, tmp_path):
        config = self.prepare(tmp_path)
        out = str(tmp_path / "out")
        self.invoke("ingest", "--config", config, "--out", out)
        result = self.invoke("score", "--config", config, "--out", out)

        assert result.exit_code == 2
        assert "no scorer endpoint" in result.output


class TestArtifactStore:
    """Manifest entries and the checks downstream stages run on them"""

    def write(self, store, name, text):
        store.path(name).write_text(text)

    def test_upstream_rewrite_invalidates_consumers(self, tmp_path):
        store = ArtifactStore(tmp_path, "hash", 0)
        self.write(store, "dataset.csv", "a")
        store.record("ingest", ["dataset.csv"])
        self.write(store, "outliers.csv", "b")
        store.record("detect", ["outliers.csv"], inputs=["ingest"])

        self.write(store, "dataset.csv", "changed")
        store.record("ingest", ["dataset.csv"])

        assert store.require("ingest")["artifacts"]
        with pytest.raises(ArtifactMismatchError, match="run detect again"):
            store.require("detect")

    def test_identical_rewrite_keeps_consumers_valid(self, tmp_path):
        store = ArtifactStore(tmp_path, "hash", 0)
        self.write(store, "dataset.csv", "a")
        store.record("ingest", ["dataset.csv"])
        self.write(store, "outliers.csv", "b")
        store.record("detect", ["outliers.csv"], inputs=["ingest"], meta={"spaces": ["demographic"]})
        store.record("ingest", ["dataset.csv"])

        entry = store.require("detect")
        assert entry["inputs"] == {"ingest": store.manifest()["stages"]["ingest"]["artifacts"]}
        assert entry["meta"] == {"spaces": ["demographic"]}
