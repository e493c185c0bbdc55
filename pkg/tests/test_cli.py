import fcntl
import json
from types import SimpleNamespace

import pytest

from rdmt.cli import main, resolve_config, sha256_file

FAST = [
    "--synth.n_patients", "150", "--synth.signal", "token", "--synth.positive_rate", "0.2",
    "--model.d", "8", "--model.a", "8", "--model.d_t", "4", "--model.H", "8", "--model.epochs", "2",
    "--baseline.epochs", "2", "--baseline.top_k", "200",
]
STAGES = [["synth"], ["cohort"], ["vocab"], ["train"], ["train-baseline"],
          ["eval", "--model", "lstm"], ["eval", "--model", "baseline"], ["predict", "--model", "lstm"]]


def run(wd, *args, extra=()):
    return main([*args, "--paths.workdir", str(wd), *FAST, *extra])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    wd = tmp_path_factory.mktemp("work")
    for st in STAGES:
        assert run(wd, *st) == 0, st
    return wd


class TestPipeline:
    def test_artifacts_written(self, pipeline):
        for rel in ("models/lstm.ckpt", "models/baseline.bin", "reports/eval_lstm_test.txt",
                    "predictions/lstm_test.tsv", "cohort/splits.tsv", "vocab/vocab.txt", "config.resolved.json"):
            assert (pipeline / rel).exists(), rel

    def test_manifest_records_digests(self, pipeline):
        man = json.loads((pipeline / "stages" / "train.json").read_text())
        assert man["outputs"]["models/lstm.ckpt"] == sha256_file(pipeline / "models/lstm.ckpt")
        assert man["inputs"]["vocab/vocab.txt"] == sha256_file(pipeline / "vocab/vocab.txt")
        assert "cohort/examples_test.jsonl" not in man["inputs"]

    def test_report_contains_auroc_line(self, pipeline):
        text = (pipeline / "reports/eval_lstm_test.txt").read_text()
        assert "\nauroc: " in text

    def test_up_to_date_skip(self, pipeline, capsys):
        before = (pipeline / "stages" / "train.json").read_bytes()
        assert run(pipeline, "train") == 0
        assert "up to date" in capsys.readouterr().out
        assert (pipeline / "stages" / "train.json").read_bytes() == before

    def test_config_change_reruns(self, tmp_path):
        for st in STAGES[:3]:
            assert run(tmp_path, *st) == 0
        assert run(tmp_path, "vocab", extra=["--featurize.min_token_count", "3"]) == 0
        man = json.loads((tmp_path / "stages" / "vocab.json").read_text())
        assert man["config"]["featurize.min_token_count"] == 3

    def test_test_labels_never_reach_training(self, pipeline, tmp_path):
        ckpt = (pipeline / "models/lstm.ckpt").read_bytes()
        base = (pipeline / "models/baseline.bin").read_bytes()
        p = pipeline / "cohort/examples_test.jsonl"
        original = p.read_text()
        rows = [json.loads(line) for line in original.splitlines()]
        for r in rows:
            r["label"] = 1 - r["label"]
        p.write_text("".join(json.dumps(r) + "\n" for r in rows))
        try:
            assert run(pipeline, "train", "--force") == 0
            assert run(pipeline, "train-baseline", "--force") == 0
            assert (pipeline / "models/lstm.ckpt").read_bytes() == ckpt
            assert (pipeline / "models/baseline.bin").read_bytes() == base
            # the tampered file itself is caught when something does read it
            assert run(pipeline, "eval", "--model", "lstm", "--force") == 3
        finally:
            p.write_text(original)


class TestExitCodes:
    def test_unknown_key(self, tmp_path):
        assert main(["synth", "--paths.workdir", str(tmp_path), "--model.nope", "1"]) == 2

    def test_bad_enum_value(self, tmp_path):
        assert main(["synth", "--paths.workdir", str(tmp_path), "--synth.signal", "magic"]) == 2

    def test_bad_number(self, tmp_path):
        assert main(["synth", "--paths.workdir", str(tmp_path), "--model.lr", "fast"]) == 2

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{nope")
        assert main(["synth", "--config", str(cfg), "--paths.workdir", str(tmp_path)]) == 2

    def test_missing_artifact(self, tmp_path):
        assert main(["train", "--paths.workdir", str(tmp_path)]) == 3

    def test_tampered_artifact(self, tmp_path):
        for st in STAGES[:3]:
            assert run(tmp_path, *st) == 0
        with open(tmp_path / "vocab/vocab.txt", "a") as fh:
            fh.write("# edited\n")
        assert run(tmp_path, "train") == 3

    def test_lock_contention(self, tmp_path):
        with open(tmp_path / ".lock", "w") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
            assert main(["synth", "--paths.workdir", str(tmp_path), "--synth.n_patients", "2"]) == 1

    def test_gradcheck_passes(self, tmp_path):
        assert main(["gradcheck", "--instances", "1", "--paths.workdir", str(tmp_path)]) == 0

    def test_gradcheck_failure_exit(self, tmp_path, monkeypatch):
        import rdmt.seqmodel

        monkeypatch.setattr(rdmt.seqmodel, "toy_gradcheck", lambda seed=0: SimpleNamespace(passed=False))
        assert main(["gradcheck", "--instances", "1", "--paths.workdir", str(tmp_path)]) == 4


class TestConfig:
    def test_file_then_overrides(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model": {"H": 64}, "seed": 3}))
        out = resolve_config(str(cfg), [("seed", "5")])
        assert out["model.H"] == 64 and out["seed"] == 5

    def test_oversample_rate(self, tmp_path):
        for st in STAGES[:3]:
            assert run(tmp_path, *st) == 0
        assert run(tmp_path, "train", extra=["--model.oversample", "0.20", "--model.epochs", "1"]) == 0
        man = json.loads((tmp_path / "stages" / "train.json").read_text())
        assert man["train_positive_rate"] >= 0.2
