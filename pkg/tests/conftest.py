import logging
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from rdmt.cohort import build_cohort, split_by_patient
from rdmt.records import Admission, EventRecord, group_by_patient
from rdmt.synth import SynthConfig, generate

T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)


def at(days=0.0, hours=0.0, seconds=0):
    return T0 + timedelta(days=days, hours=hours, seconds=seconds)


def ev(entity, t, payload=None, pairs=None, pid="p1", enc=None):
    return EventRecord(pid, entity, t, payload or {}, None if pairs is None else tuple(pairs), enc)


def adm(aid, start, end, *, created=None, prereg=None, died=False, ama=False, transferred=False, pid="p1"):
    return Admission(
        pid,
        aid,
        start,
        end,
        start if created is None else created,
        died=died,
        against_medical_advice=ama,
        transferred=transferred,
        prereg_created_at=prereg,
    )


@pytest.fixture(autouse=True)
def _quiet_cohort_logs():
    logging.getLogger("rdmt.cohort").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def small_token_cohort():
    """300-patient token-signal cohort split by patient."""
    data = generate(SynthConfig(n_patients=300, signal="token", seed=11))
    logging.getLogger("rdmt.cohort").setLevel(logging.ERROR)
    examples, _ = build_cohort(group_by_patient(data.events, data.admissions))
    split = split_by_patient(examples, seed=0)
    return {s: split.select(examples, s) for s in ("train", "validation", "test")}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_auroc(scores, labels):
    """O(n^2) pairwise count: wins plus half ties over all positive/negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
