"""AUROC, per-class precision/recall, and report emission."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import IO, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import IoFailure, SingleClass


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return s, y.astype(np.int64)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC from average ranks; ties between classes count one half."""
    s, y = _check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both positive and negative labels")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    auroc: float | None
    precision_0: float
    recall_0: float
    precision_1: float
    recall_1: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float
    n_examples: int
    positive_rate: float
    precision_0_undefined: bool = False
    precision_1_undefined: bool = False
    model: str = ""
    split: str = ""

    FIELD_ORDER = (
        "model",
        "split",
        "n_examples",
        "positive_rate",
        "threshold",
        "auroc",
        "precision_0",
        "recall_0",
        "precision_1",
        "recall_1",
        "tp",
        "fp",
        "tn",
        "fn",
        "precision_0_undefined",
        "precision_1_undefined",
    )

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.FIELD_ORDER}

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(**{k: obj[k] for k in cls.FIELD_ORDER})


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def precision_recall(scores, labels, threshold: float = 0.5) -> dict:
    """Predict 1 iff score >= threshold; per-class precision and recall.

    A precision whose denominator is zero is reported as 0 with an
    ``*_undefined`` flag set; recall of an absent class is 0 likewise.
    """
    s, y = _check_scores_labels(scores, labels)
    if s.size == 0:
        raise ValueError("precision_recall needs at least one example")
    pred = (s >= threshold).astype(np.int64)
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    p1, u1 = _ratio(tp, tp + fp)
    p0, u0 = _ratio(tn, tn + fn)
    r1, _ = _ratio(tp, tp + fn)
    r0, _ = _ratio(tn, tn + fp)
    return {
        "precision_0": p0,
        "recall_0": r0,
        "precision_1": p1,
        "recall_1": r1,
        "precision_0_undefined": u0,
        "precision_1_undefined": u1,
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
    }


def evaluate(scores, labels, threshold: float = 0.5, *, model: str = "", split: str = "") -> EvalReport:
    s, y = _check_scores_labels(scores, labels)
    pr = precision_recall(s, y, threshold)
    try:
        auc = auroc(s, y)
    except SingleClass:
        auc = None
    return EvalReport(
        auroc=auc,
        threshold=float(threshold),
        n_examples=int(y.size),
        positive_rate=float(y.mean()),
        model=model,
        split=split,
        **pr,
    )


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_report(r: EvalReport) -> str:
    lines = []
    if r.model or r.split:
        lines.append(f"model: {r.model}  split: {r.split}")
    lines += [
        f"n_examples: {r.n_examples}",
        f"positive_rate: {_fmt(r.positive_rate)}",
        f"threshold: {_fmt(r.threshold)}",
        f"auroc: {_fmt(r.auroc)}",
        "",
        f"{'class':<7}{'precision':>10}{'recall':>10}",
    ]
    for c in (0, 1):
        p = getattr(r, f"precision_{c}")
        flag = "*" if getattr(r, f"precision_{c}_undefined") else " "
        lines.append(f"{c:<7}{_fmt(p):>9}{flag}{_fmt(getattr(r, f'recall_{c}')):>10}")
    lines += [
        "",
        f"confusion: tp={r.tp} fp={r.fp} tn={r.tn} fn={r.fn}",
    ]
    if r.precision_0_undefined or r.precision_1_undefined:
        lines.append("* precision undefined (no predictions for the class); reported as 0")
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, destination: IO[str] | None = None) -> tuple[str, dict]:
    """Render the report as text plus one JSON line; write both if a destination is given."""
    text = format_report(report)
    obj = report.to_json()
    if destination is not None:
        try:
            destination.write(text)
            destination.write(json.dumps(obj, sort_keys=False) + "\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    return text, obj


def parse_report(text: str) -> list[EvalReport]:
    """Recover every report from emitted output (reads the machine-readable lines)."""
    out = []
    for line in text.splitlines():
        if line.startswith("{"):
            out.append(EvalReport.from_json(json.loads(line)))
    return out
