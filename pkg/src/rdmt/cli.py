"""``rdmt`` command line: synth | cohort | vocab | train | train-baseline | eval | predict | gradcheck.

Every stage reads and writes inside one workdir and records a stage manifest
(input and output sha256 digests, the config slice it used, duration).
Downstream stages refuse inputs whose digest no longer matches the manifest
of the stage that produced them. A stage whose inputs and config are
unchanged and whose outputs are intact is skipped unless ``--force``.

Configuration is a JSON object with flat dotted keys (nested objects are
flattened); any key can be overridden on the command line, e.g.
``--model.epochs 6``. Exit codes: 0 ok, 2 config error, 3 missing or stale
artifact, 4 gradcheck/validation failure, 1 anything else.
"""
from __future__ import annotations

import argparse
import contextlib
import fcntl
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .baseline import TfidfLogisticBaseline
from .cohort import SplitAssignment, build_cohort, read_examples, split_by_patient, write_examples
from .errors import ConfigInvalid, DigestMismatch, MissingArtifact, RdmtError
from .featurize import EHRFeaturizer, Vocabulary
from .metrics import emit_report, evaluate
from .records import group_by_patient, read_admissions, read_events
from .seqmodel import ReadmissionLSTMClassifier

logger = logging.getLogger("rdmt")

SPLITS = ("train", "validation", "test")

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "paths.events": "",
    "paths.admissions": "",
    "paths.workdir": "work",
    "synth.n_patients": 1000,
    "synth.signal": "none",
    "synth.signal_q": 0.9,
    "synth.positive_rate": 0.0618,
    "synth.encounters_per_patient": 6.0,
    "synth.vocab_size": 2000,
    "synth.corrupt_rate": 0.0,
    "cohort.horizon_days": 30.0,
    "cohort.prereg_window_hours": 24.0,
    "cohort.anchor": "admission",
    "split.seed": -1,
    "split.ratios": "0.8,0.1,0.1",
    "featurize.min_token_count": 5,
    "featurize.max_features": 64,
    "featurize.window_hours": 12.0,
    "featurize.max_windows": 256,
    "featurize.max_time_buckets": 512,
    "model.d": 32,
    "model.a": 32,
    "model.d_t": 8,
    "model.H": 128,
    "model.lr": 1e-3,
    "model.batch": 32,
    "model.epochs": 6,
    "model.embedding_dropout": 0.1,
    "model.hidden_dropout": 0.2,
    "model.oversample": "off",
    "baseline.top_k": 5000,
    "baseline.epochs": 8,
    "baseline.lr": 0.01,
    "baseline.batch": 32,
    "baseline.average": "all",
    "eval.threshold": 0.5,
}

_CHOICES = {
    "synth.signal": ("none", "token", "temporal"),
    "cohort.anchor": ("admission", "discharge"),
    "baseline.average": ("all", "containing"),
}


# -- config ------------------------------------------------------------------------------


def _flatten(obj: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigInvalid(key, f"cannot interpret {value!r} as {type(default).__name__}") from None


def _validate(cfg: dict) -> None:
    for key, allowed in _CHOICES.items():
        if cfg[key] not in allowed:
            raise ConfigInvalid(key, f"must be one of {', '.join(allowed)}")
    ratios = split_ratios(cfg)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigInvalid("split.ratios", "need three non-negative ratios summing to 1")
    over = cfg["model.oversample"]
    if over != "off":
        try:
            rate = float(over)
        except ValueError:
            raise ConfigInvalid("model.oversample", "must be 'off' or a rate in (0, 1)") from None
        if not 0 < rate < 1:
            raise ConfigInvalid("model.oversample", "must be 'off' or a rate in (0, 1)")
    for key in ("synth.n_patients", "model.epochs", "baseline.epochs", "model.batch", "baseline.batch", "baseline.top_k"):
        if cfg[key] < 1:
            raise ConfigInvalid(key, "must be positive")
    if not 0 < cfg["synth.signal_q"] <= 1:
        raise ConfigInvalid("synth.signal_q", "must lie in (0, 1]")
    if not 0 < cfg["synth.positive_rate"] < 1:
        raise ConfigInvalid("synth.positive_rate", "must lie in (0, 1)")


def resolve_config(config_path: str | None, overrides: list[tuple[str, str]]) -> dict:
    cfg = dict(DEFAULTS)
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigInvalid("--config", str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("--config", f"not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigInvalid("--config", "top level must be an object")
        for k, v in _flatten(raw).items():
            if k not in DEFAULTS:
                raise ConfigInvalid(k, "unknown config key")
            cfg[k] = _coerce(k, v)
    for k, v in overrides:
        if k not in DEFAULTS:
            raise ConfigInvalid(k, "unknown config key")
        cfg[k] = _coerce(k, v)
    _validate(cfg)
    return cfg


def split_ratios(cfg: dict) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(cfg["split.ratios"]).split(","))
    except ValueError:
        raise ConfigInvalid("split.ratios", "expected comma-separated numbers") from None


def _split_seed(cfg: dict) -> int:
    return cfg["seed"] if cfg["split.seed"] < 0 else cfg["split.seed"]


def _oversample(cfg: dict):
    return None if cfg["model.oversample"] == "off" else float(cfg["model.oversample"])


def _section(cfg: dict, *prefixes: str) -> dict:
    return {k: v for k, v in cfg.items() if k == "seed" or k.split(".")[0] in prefixes}


# -- workdir, digests, manifests -------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def manifest_path(self, stage: str) -> Path:
        return self.root / "stages" / f"{stage}.json"

    def read_manifest(self, stage: str) -> dict | None:
        p = self.manifest_path(stage)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def require(self, rel: str, producer: str | None) -> str:
        """Digest of an input, checked against the manifest of the stage that wrote it."""
        p = self.path(rel)
        if not p.exists():
            raise MissingArtifact(str(p))
        actual = sha256_file(p)
        if producer is not None:
            man = self.read_manifest(producer)
            if man is None:
                raise MissingArtifact(str(self.manifest_path(producer)))
            expected = man["outputs"].get(rel)
            if expected != actual:
                raise DigestMismatch(str(p), expected or "<not produced>", actual)
        return actual

    @contextlib.contextmanager
    def lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        fh = open(self.root / ".lock", "w")
        try:
            try:
                fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise RdmtError(f"workdir {self.root} is in use by another run") from None
            yield
        finally:
            fh.close()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Stage:
    """Context for one stage run: collect inputs, decide on skipping, record outputs."""

    def __init__(self, wd: Workdir, name: str, config: dict, force: bool):
        self.wd, self.name, self.config, self.force = wd, name, config, force
        self.inputs: dict[str, str] = {}
        self.t0 = time.perf_counter()

    def need(self, rel: str, producer: str | None) -> Path:
        self.inputs[rel] = self.wd.require(rel, producer)
        return self.wd.path(rel)

    def need_external(self, path: Path) -> Path:
        if not path.exists():
            raise MissingArtifact(str(path))
        self.inputs[str(path)] = sha256_file(path)
        return path

    def up_to_date(self) -> bool:
        if self.force:
            return False
        man = self.wd.read_manifest(self.name)
        if man is None or man["inputs"] != self.inputs or man["config"] != self.config:
            return False
        for rel, digest in man["outputs"].items():
            p = self.wd.path(rel)
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def finish(self, outputs: list[str], extra: dict | None = None) -> dict:
        man = {
            "stage": self.name,
            "inputs": self.inputs,
            "outputs": {rel: sha256_file(self.wd.path(rel)) for rel in outputs},
            "config": self.config,
            "duration_seconds": round(time.perf_counter() - self.t0, 3),
        }
        if extra:
            man.update(extra)
        _write_json(self.wd.manifest_path(self.name), man)
        return man


# -- stages -------------------------------------------------------------------------------


def _data_paths(cfg: dict, wd: Workdir) -> tuple[Path, Path, str | None]:
    """Events/admissions paths; producer is 'synth' when they live in the workdir."""
    if cfg["paths.events"] or cfg["paths.admissions"]:
        if not (cfg["paths.events"] and cfg["paths.admissions"]):
            raise ConfigInvalid("paths.events", "events and admissions must be given together")
        return Path(cfg["paths.events"]), Path(cfg["paths.admissions"]), None
    return wd.path("synth/events.jsonl"), wd.path("synth/admissions.jsonl"), "synth"


def cmd_synth(cfg, wd: Workdir, args) -> int:
    from .synth import SynthConfig, generate, verify_labels

    stage = Stage(wd, "synth", _section(cfg, "synth"), args.force)
    if stage.up_to_date():
        print("synth: up to date")
        return 0
    sc = SynthConfig(
        n_patients=cfg["synth.n_patients"],
        encounters_per_patient=cfg["synth.encounters_per_patient"],
        vocab_size=cfg["synth.vocab_size"],
        positive_rate=cfg["synth.positive_rate"],
        signal=cfg["synth.signal"],
        signal_q=cfg["synth.signal_q"],
        corrupt_rate=cfg["synth.corrupt_rate"],
        seed=cfg["seed"],
    )
    data = generate(sc)
    data.write(wd.path("synth"))
    bad = verify_labels(data)
    stage.finish(["synth/events.jsonl", "synth/admissions.jsonl", "synth/manifest.jsonl"], {"label_discrepancies": len(bad)})
    print(f"synth: {len(data.events)} events, {len(data.admissions)} admissions, {len(bad)} label discrepancies")
    return 4 if bad else 0


def cmd_cohort(cfg, wd: Workdir, args) -> int:
    ev_path, adm_path, producer = _data_paths(cfg, wd)
    stage = Stage(wd, "cohort", _section(cfg, "cohort", "split"), args.force)
    if producer:
        stage.need("synth/events.jsonl", producer)
        stage.need("synth/admissions.jsonl", producer)
    else:
        stage.need_external(ev_path)
        stage.need_external(adm_path)
    if stage.up_to_date():
        print("cohort: up to date")
        return 0
    events, bad_ev = read_events(ev_path)
    admissions, bad_adm = read_admissions(adm_path)
    for m in bad_ev + bad_adm:
        logger.warning("skipping malformed line %d: %s", m.line_no, m.reason)
    examples, problems = build_cohort(
        group_by_patient(events, admissions),
        cfg["cohort.horizon_days"],
        anchor=cfg["cohort.anchor"],
        prereg_window_hours=cfg["cohort.prereg_window_hours"],
    )
    split = split_by_patient(examples, seed=_split_seed(cfg), ratios=split_ratios(cfg))
    outputs = []
    counts = {}
    for name in SPLITS:
        rel = f"cohort/examples_{name}.jsonl"
        part = split.select(examples, name)
        counts[name] = len(part)
        p = wd.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            write_examples(part, fh)
        outputs.append(rel)
    with open(wd.path("cohort/splits.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        split.write(fh)
    with open(wd.path("cohort/problems.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for pr in problems:
            fh.write(json.dumps({"admission_id": pr.admission_id, "reason": pr.reason}, sort_keys=True) + "\n")
    outputs += ["cohort/splits.tsv", "cohort/problems.jsonl"]
    rate = float(np.mean([e.label for e in examples])) if examples else 0.0
    stage.finish(outputs, {"counts": counts, "malformed_lines": len(bad_ev) + len(bad_adm)})
    print(f"cohort: {len(examples)} examples (positive rate {rate:.4f}); " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _load_examples(stage: Stage, split: str):
    p = stage.need(f"cohort/examples_{split}.jsonl", "cohort")
    with open(p, encoding="utf-8") as fh:
        return read_examples(fh)


def _load_vocab(stage: Stage) -> Vocabulary:
    p = stage.need("vocab/vocab.txt", "vocab")
    return Vocabulary.loads(p.read_text(encoding="utf-8"))


def _featurizer(cfg, vocab, output) -> EHRFeaturizer:
    f = EHRFeaturizer(
        window_hours=cfg["featurize.window_hours"],
        max_windows=cfg["featurize.max_windows"],
        output=output,
        vocab=vocab,
    )
    return f.fit([])


def cmd_vocab(cfg, wd: Workdir, args) -> int:
    stage = Stage(wd, "vocab", _section(cfg, "featurize"), args.force)
    train = _load_examples(stage, "train")
    if stage.up_to_date():
        print("vocab: up to date")
        return 0
    f = EHRFeaturizer(
        min_token_count=cfg["featurize.min_token_count"], max_features=cfg["featurize.max_features"]
    ).fit(train)
    p = wd.path("vocab/vocab.txt")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(f.vocab_.dumps(), encoding="utf-8", newline="\n")
    stage.finish(["vocab/vocab.txt"])
    print(f"vocab: {f.vocab_.n_tokens} tokens, {f.vocab_.n_features} features")
    return 0


def _labels(examples) -> np.ndarray:
    return np.asarray([e.label for e in examples], dtype=np.int64)


def _write_log(path: Path, history: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for h in history:
            fh.write(json.dumps(h, sort_keys=True) + "\n")


def cmd_train(cfg, wd: Workdir, args) -> int:
    stage = Stage(wd, "train", _section(cfg, "featurize", "model"), args.force)
    vocab = _load_vocab(stage)
    train = _load_examples(stage, "train")
    val = _load_examples(stage, "validation")
    if stage.up_to_date():
        print("train: up to date")
        return 0
    f = _featurizer(cfg, vocab, "windows")
    model = ReadmissionLSTMClassifier(
        embedding_dim=cfg["model.d"],
        weight_hidden=cfg["model.a"],
        time_dim=cfg["model.d_t"],
        hidden_size=cfg["model.H"],
        max_time_buckets=cfg["featurize.max_time_buckets"],
        learning_rate=cfg["model.lr"],
        batch_size=cfg["model.batch"],
        epochs=cfg["model.epochs"],
        embedding_dropout=cfg["model.embedding_dropout"],
        hidden_dropout=cfg["model.hidden_dropout"],
        oversample=_oversample(cfg),
        random_state=cfg["seed"],
    )
    eval_set = (f.transform(val), _labels(val)) if val else None
    model.fit(f.transform(train), _labels(train), eval_set=eval_set)
    model.save(wd.path("models/lstm.ckpt"))
    _write_log(wd.path("logs/train_lstm.jsonl"), model.history_)
    for h in model.history_:
        print(
            f"epoch {h['epoch']} train_loss {h['train_loss']:.6f} val_auroc "
            f"{'n/a' if h['val_auroc'] is None else format(h['val_auroc'], '.4f')} wall {h['wall_seconds']:.1f}s"
        )
    stage.finish(
        ["models/lstm.ckpt"],
        {
            "best_epoch": model.best_epoch_,
            "train_positive_rate": model.train_positive_rate_,
            "train_size": model.train_size_,
        },
    )
    print(f"train: best epoch {model.best_epoch_}, training positive rate {model.train_positive_rate_:.4f}")
    return 0


def cmd_train_baseline(cfg, wd: Workdir, args) -> int:
    stage = Stage(wd, "train-baseline", _section(cfg, "featurize", "baseline"), args.force)
    vocab = _load_vocab(stage)
    train = _load_examples(stage, "train")
    val = _load_examples(stage, "validation")
    if stage.up_to_date():
        print("train-baseline: up to date")
        return 0
    f = _featurizer(cfg, vocab, "tokens")
    model = TfidfLogisticBaseline(
        top_k=cfg["baseline.top_k"],
        epochs=cfg["baseline.epochs"],
        learning_rate=cfg["baseline.lr"],
        batch_size=cfg["baseline.batch"],
        average=cfg["baseline.average"],
        random_state=cfg["seed"],
    )
    eval_set = (f.transform(val), _labels(val)) if val else None
    model.fit(f.transform(train), _labels(train), eval_set=eval_set, groups=[e.patient_id for e in train])
    model.save(wd.path("models/baseline.bin"))
    _write_log(wd.path("logs/train_baseline.jsonl"), model.history_)
    stage.finish(["models/baseline.bin"], {"best_epoch": model.best_epoch_})
    print(f"train-baseline: {model.selected_tokens_.size} tokens, best epoch {model.best_epoch_}")
    return 0


_MODELS = {
    "lstm": ("models/lstm.ckpt", "train", "windows"),
    "baseline": ("models/baseline.bin", "train-baseline", "tokens"),
}


def _scores(cfg, stage: Stage, model_name: str, examples) -> np.ndarray:
    rel, producer, output = _MODELS[model_name]
    path = stage.need(rel, producer)
    vocab = _load_vocab(stage)
    X = _featurizer(cfg, vocab, output).transform(examples)
    if model_name == "lstm":
        model = ReadmissionLSTMClassifier.load(path)
    else:
        model = TfidfLogisticBaseline.load(path)
    return model.predict_proba(X)[:, 1]


def cmd_eval(cfg, wd: Workdir, args) -> int:
    stage = Stage(wd, f"eval-{args.model}-{args.split}", _section(cfg, "eval", "featurize"), args.force)
    examples = _load_examples(stage, args.split)
    if not examples:
        raise RdmtError(f"split {args.split!r} has no examples")
    scores = _scores(cfg, stage, args.model, examples)
    report = evaluate(scores, _labels(examples), cfg["eval.threshold"], model=args.model, split=args.split)
    rel = f"reports/eval_{args.model}_{args.split}.txt"
    p = wd.path(rel)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        text, obj = emit_report(report, fh)
    stage.finish([rel])
    sys.stdout.write(text)
    print(json.dumps(obj))
    return 0


def cmd_predict(cfg, wd: Workdir, args) -> int:
    stage = Stage(wd, f"predict-{args.model}-{args.split}", _section(cfg, "featurize"), args.force)
    examples = _load_examples(stage, args.split)
    scores = _scores(cfg, stage, args.model, examples)
    rel = f"predictions/{args.model}_{args.split}.tsv"
    p = wd.path(rel)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("example_id\tprobability\n")
        for e, s in zip(examples, scores):
            fh.write(f"{e.example_id}\t{float(s)!r}\n")
    stage.finish([rel])
    print(f"predict: {len(examples)} predictions written to {p}")
    return 0


def cmd_gradcheck(cfg, wd: Workdir | None, args) -> int:
    from .ndiff.suite import run_primitive_suite
    from .seqmodel import toy_gradcheck

    ok = True
    for name, rep in run_primitive_suite(n_instances=args.instances, seed=cfg["seed"]):
        print(f"{name:<18}{rep}")
        ok &= rep.passed
    rep = toy_gradcheck(0)
    print(f"{'model (bce)':<18}{rep}")
    ok &= rep.passed
    print("gradcheck: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 4


COMMANDS = {
    "synth": cmd_synth,
    "cohort": cmd_cohort,
    "vocab": cmd_vocab,
    "train": cmd_train,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdmt", description="Unplanned-readmission pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON config with flat dotted keys")
        p.add_argument("--force", action="store_true", help="rerun even if up to date")
        if name in ("eval", "predict"):
            p.add_argument("--model", choices=tuple(_MODELS), default="lstm")
            p.add_argument("--split", choices=SPLITS, default="test")
        if name == "gradcheck":
            p.add_argument("--instances", type=int, default=10)
    return parser


def _parse_overrides(extra: list[str]) -> list[tuple[str, str]]:
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigInvalid(tok, "unexpected argument")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigInvalid(key, "missing value")
            value = extra[i + 1]
            i += 2
        out.append((key, value))
    return out


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args.config, _parse_overrides(extra))
        wd = Workdir(cfg["paths.workdir"])
        with wd.lock():
            _write_json(wd.path("config.resolved.json"), cfg)
            return COMMANDS[args.command](cfg, wd, args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MissingArtifact, DigestMismatch) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 3
    except RdmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
