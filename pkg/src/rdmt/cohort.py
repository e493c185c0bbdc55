"""Cohort construction: valid admissions, unplanned readmission labels, splits.

An example is everything a patient has on record up to a valid admission.
It is labeled 1 when a valid, unplanned readmission of the same patient starts
within ``horizon_days`` after that admission's discharge.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import InvalidChronology, NoPositives
from .records import (
    Admission,
    EventRecord,
    PatientHistory,
    format_instant,
    parse_instant,
    record_from_json,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class Example:
    patient_id: str
    anchor_admission_id: str
    anchor_time: datetime
    history: tuple[EventRecord, ...]
    label: int

    @property
    def example_id(self) -> str:
        return f"{self.patient_id}:{self.anchor_admission_id}"

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "anchor_admission_id": self.anchor_admission_id,
            "anchor_time": format_instant(self.anchor_time),
            "label": self.label,
            "events": [r.to_json() for r in self.history],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Example":
        return cls(
            patient_id=str(obj["patient_id"]),
            anchor_admission_id=str(obj["anchor_admission_id"]),
            anchor_time=parse_instant(obj["anchor_time"]),
            history=tuple(record_from_json(e) for e in obj["events"]),
            label=int(obj["label"]),
        )


@dataclass
class CohortProblem:
    admission_id: str
    reason: str


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    seed: int
    ratios: tuple[float, float, float] = DEFAULT_RATIOS

    def split_of(self, patient_id: str) -> str:
        return self.assignment[patient_id]

    def select(self, examples: Iterable[Example], split: str) -> list[Example]:
        return [e for e in examples if self.assignment[e.patient_id] == split]

    def patients(self, split: str) -> set[str]:
        return {p for p, s in self.assignment.items() if s == split}

    def write(self, fh: IO[str]) -> None:
        for pid in sorted(self.assignment):
            fh.write(f"{pid}\t{self.assignment[pid]}\n")

    @classmethod
    def read(cls, fh: IO[str], seed: int = 0, ratios=DEFAULT_RATIOS) -> "SplitAssignment":
        assignment = {}
        for line in fh:
            line = line.rstrip("\n")
            if line:
                pid, split = line.split("\t")
                assignment[pid] = split
        return cls(assignment, seed, tuple(ratios))


def is_valid_admission(a: Admission) -> bool:
    return not (a.died or a.against_medical_advice or a.transferred)


def is_unplanned(a: Admission, prereg_window_hours: float = 24) -> bool:
    """No pre-registration, or one created at most ``prereg_window_hours`` before
    the hospitalization record (closed interval)."""
    if a.prereg_created_at is None:
        return True
    if a.prereg_created_at > a.created_at:
        raise InvalidChronology(
            f"admission {a.admission_id}: pre-registration at "
            f"{format_instant(a.prereg_created_at)} after record creation "
            f"{format_instant(a.created_at)}"
        )
    return a.created_at - a.prereg_created_at <= timedelta(hours=prereg_window_hours)


def _checked_admissions(
    admissions: Sequence[Admission], prereg_window_hours: float, problems: list | None
) -> list[tuple[Admission, bool]]:
    out = []
    for a in admissions:
        try:
            unplanned = is_unplanned(a, prereg_window_hours)
        except InvalidChronology as exc:
            logger.warning("excluding admission: %s", exc)
            if problems is not None:
                problems.append(CohortProblem(a.admission_id, str(exc)))
            continue
        out.append((a, unplanned))
    return out


def build_examples(
    h: PatientHistory,
    horizon_days: float = 30,
    *,
    anchor: str = "admission",
    prereg_window_hours: float = 24,
    problems: list | None = None,
) -> list[Example]:
    """One labeled example per valid admission of the patient.

    ``anchor`` selects the instant that closes the visible history: the index
    admission's start (default) or its discharge. Admissions with corrupt
    pre-registration chronology are dropped and appended to ``problems``.
    """
    if anchor not in ("admission", "discharge"):
        raise ValueError(f"anchor must be 'admission' or 'discharge', got {anchor!r}")
    horizon = timedelta(days=horizon_days)
    admissions = _checked_admissions(h.admissions, prereg_window_hours, problems)
    readmit_starts = [a.start for a, unplanned in admissions if unplanned and is_valid_admission(a)]

    examples = []
    for a, _ in admissions:
        if not is_valid_admission(a):
            continue
        label = int(any(timedelta(0) < s - a.end <= horizon for s in readmit_starts))
        cutoff = a.start if anchor == "admission" else a.end
        history = tuple(
            r for r in h.events if r.timestamp is None or r.timestamp <= cutoff
        )
        examples.append(Example(h.patient_id, a.admission_id, cutoff, history, label))
    return examples


def build_cohort(
    histories: Iterable[PatientHistory],
    horizon_days: float = 30,
    *,
    anchor: str = "admission",
    prereg_window_hours: float = 24,
) -> tuple[list[Example], list[CohortProblem]]:
    problems: list[CohortProblem] = []
    examples = []
    for h in histories:
        examples.extend(
            build_examples(
                h,
                horizon_days,
                anchor=anchor,
                prereg_window_hours=prereg_window_hours,
                problems=problems,
            )
        )
    return examples, problems


def _hash_unit(patient_id: str, seed: int) -> float:
    key = int(seed).to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(patient_id.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def split_by_patient(
    examples: Iterable[Example] | Iterable[str],
    seed: int = 0,
    ratios: Sequence[float] = DEFAULT_RATIOS,
) -> SplitAssignment:
    """Assign every patient to train/validation/test by a keyed hash of its id.

    Accepts examples or bare patient ids. The assignment of a patient never
    depends on which other patients are present.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative fractions summing to 1, got {ratios}")
    cuts = np.cumsum(ratios)
    assignment = {}
    for item in examples:
        pid = item if isinstance(item, str) else item.patient_id
        if pid in assignment:
            continue
        u = _hash_unit(pid, seed)
        idx = int(np.searchsorted(cuts, u, side="right"))
        assignment[pid] = SPLITS[min(idx, 2)]
    return SplitAssignment(assignment, seed, tuple(ratios))


def oversample_indices(labels: Sequence[int], target_rate: float, seed: int) -> list[int]:
    """Indices of the oversampled set: all originals, then duplicated positives.

    Adds the fewest uniformly drawn positive duplicates that bring the positive
    fraction to at least ``target_rate``.
    """
    if not 0 < target_rate < 1:
        raise ValueError(f"target_rate must lie in (0, 1), got {target_rate}")
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    if pos.size == 0:
        raise NoPositives("training set has no positive examples")
    n_neg = int(labels.size - pos.size)
    rate = Fraction(repr(float(target_rate)))
    # smallest k with k / (k + n_neg) >= rate
    need = rate * n_neg / (1 - rate)
    k = -(-need.numerator // need.denominator)
    extra = max(0, k - pos.size)
    rng = np.random.default_rng(seed)
    dup = rng.choice(pos, size=extra, replace=True) if extra else np.empty(0, dtype=int)
    return list(range(labels.size)) + [int(i) for i in dup]


def oversample_positives(train: Sequence[Example], target_rate: float, seed: int = 0) -> list[Example]:
    idx = oversample_indices([e.label for e in train], target_rate, seed)
    return [train[i] for i in idx]


def write_examples(examples: Iterable[Example], fh: IO[str]) -> None:
    for e in examples:
        fh.write(json.dumps(e.to_json(), sort_keys=True, ensure_ascii=False))
        fh.write("\n")


def read_examples(fh: IO[str]) -> list[Example]:
    return [Example.from_json(json.loads(line)) for line in fh if line.strip()]
