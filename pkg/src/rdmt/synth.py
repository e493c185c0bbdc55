"""Deterministic synthetic EHR generator with plantable label signals.

Each patient gets a 2-year timeline of outpatient encounters plus a chain of
admissions planned so that the cohort rules produce a known label for every
valid admission. Chains deliberately include invalid admissions, planned
readmissions, and the exact 24-hour pre-registration and 30-day readmission
boundaries.

Signals (planted only in the encounters right before an index admission):

``token``
    Each of the emergency visit's ``signal_slots`` text fields of a positive
    example independently carries the marker token with probability ``q``.
``temporal``
    Every example gets both ``alpha`` and ``beta`` tokens in two recent
    encounters; positives see alpha first, negatives beta first. Token counts
    are identical across classes, so only the order is informative.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .cohort import Example, build_cohort
from .records import Admission, EventRecord, from_epoch, group_by_patient

MARKER = "zzmarker"
ALPHA = "zzalpha"
BETA = "zzbeta"

DAY = 86400
HOUR = 3600
_BASE = int(datetime(2010, 1, 1, tzinfo=timezone.utc).timestamp())

_FORM_KEYS = ("vital signs", "pain scale", "temperature", "triage note", "oxygen saturation", "glasgow score")


@dataclass
class SynthConfig:
    n_patients: int = 1000
    encounters_per_patient: float = 6.0
    events_per_encounter: tuple[int, int] = (1, 4)
    entity_weights: dict = field(
        default_factory=lambda: {"diagnosis": 1.0, "order": 1.0, "clinical_note": 1.5, "form": 2.0}
    )
    vocab_size: int = 2000
    positive_rate: float = 0.0618
    signal: str = "none"
    signal_q: float = 0.9
    signal_slots: int = 3
    continue_rate: float = 0.35
    invalid_rate: float = 0.1
    corrupt_rate: float = 0.0
    boundary_rate: float = 0.1
    horizon_days: int = 730
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.positive_rate < 1:
            raise ValueError("positive_rate must lie in (0, 1)")
        if not 0 < self.signal_q <= 1:
            raise ValueError("signal_q must lie in (0, 1]")
        if self.signal not in ("none", "token", "temporal"):
            raise ValueError(f"unknown signal {self.signal!r}")
        if self.n_patients < 0 or self.vocab_size < 1 or self.signal_slots < 1:
            raise ValueError("n_patients, vocab_size and signal_slots must be positive")
        lo, hi = self.events_per_encounter
        if lo < 0 or hi < lo:
            raise ValueError("events_per_encounter must be an increasing non-negative range")


@dataclass
class SynthData:
    events: list[EventRecord]
    admissions: list[Admission]
    manifest: list[dict]
    config: SynthConfig

    def write(self, outdir) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "events": outdir / "events.jsonl",
            "admissions": outdir / "admissions.jsonl",
            "manifest": outdir / "manifest.jsonl",
        }
        _write_jsonl(paths["events"], (r.to_json() for r in self.events))
        _write_jsonl(paths["admissions"], (a.to_json() for a in self.admissions))
        _write_jsonl(paths["manifest"], self.manifest)
        return paths


def _write_jsonl(path: Path, objs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False))
            fh.write("\n")


@lru_cache(maxsize=8)
def _zipf_cdf(vocab_size: int) -> np.ndarray:
    w = 1.0 / np.arange(1, vocab_size + 1)
    return np.cumsum(w / w.sum())


class _PatientGen:
    def __init__(self, cfg: SynthConfig, index: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
        self.pid = f"P{index:07d}"
        self.events: list[EventRecord] = []
        self.n_enc = 0
        self.word_cdf = _zipf_cdf(cfg.vocab_size)
        ent = cfg.entity_weights
        self.entities = list(ent)
        w = np.array([ent[k] for k in self.entities], dtype=float)
        self.entity_cdf = np.cumsum(w / w.sum())

    # -- text ---------------------------------------------------------------------

    def words(self, lo: int, hi: int) -> str:
        n = int(self.rng.integers(lo, hi + 1))
        idx = np.searchsorted(self.word_cdf, self.rng.random(n), side="right")
        return " ".join(f"w{i}" for i in np.minimum(idx, self.cfg.vocab_size - 1).tolist())

    def _event(self, entity, t, payload=None, pairs=None, enc=None):
        self.events.append(
            EventRecord(
                self.pid,
                entity,
                from_epoch(t),
                payload if pairs is None else {},
                tuple(pairs) if pairs is not None else None,
                enc,
            )
        )

    def _sub_event(self, entity, t, enc):
        rng = self.rng
        if entity == "diagnosis":
            code = int(rng.integers(0, max(self.cfg.vocab_size // 10, 1)))
            self._event(entity, t, {"code": f"dx{code}", "description": self.words(1, 4)}, enc=enc)
        elif entity == "order":
            if rng.random() < 0.7:
                med = int(rng.integers(0, max(self.cfg.vocab_size // 20, 1)))
                self._event(entity, t, {"medication": {"categorical_text": f"med{med}"}}, enc=enc)
            else:
                self._event(entity, t, {"procedure": {"text": self.words(1, 3)}}, enc=enc)
        elif entity == "clinical_note":
            self._event(entity, t, {"content": {"text": self.words(4, 12)}}, enc=enc)
        else:
            n = int(rng.integers(1, 4))
            keys = rng.choice(len(_FORM_KEYS), size=n, replace=False)
            pairs = []
            for k in keys:
                key = _FORM_KEYS[k]
                if key == "triage note":
                    value = self.words(2, 6)
                else:
                    value = f"{int(rng.integers(1, 200))} w{int(rng.integers(0, 20))}"
                pairs.append((key, value))
            self._event("form", t, pairs=pairs, enc=enc)

    def encounter(self, t: int, kind: str, n_sub: int | None = None) -> str:
        self.n_enc += 1
        enc = f"{self.pid}-E{self.n_enc}"
        self._event("encounter", t, {"type": kind, "reason": self.words(2, 5)}, enc=enc)
        lo, hi = self.cfg.events_per_encounter
        if n_sub is None:
            n_sub = int(self.rng.integers(lo, hi + 1))
        for _ in range(n_sub):
            k = int(np.searchsorted(self.entity_cdf, self.rng.random(), side="right"))
            ent = self.entities[min(k, len(self.entities) - 1)]
            self._sub_event(ent, t + int(self.rng.integers(60, 4 * HOUR)), enc)
        return enc

    def signal_visit(self, t: int, slots: list[str]) -> None:
        """Emergency visit whose encounter reason, note and triage form carry ``slots`` tokens.

        ``slots[i]`` is an extra token (or "") for the i-th text field.
        """
        self.n_enc += 1
        enc = f"{self.pid}-E{self.n_enc}"
        fields = [self.words(2, 5), self.words(4, 10), self.words(2, 6)]
        while len(fields) < len(slots):
            fields.append(self.words(2, 6))
        for i, extra in enumerate(slots):
            if extra:
                fields[i] = f"{fields[i]} {extra}"
        self._event("encounter", t, {"type": "emergency", "reason": fields[0]}, enc=enc)
        self._event("clinical_note", t + 60, {"content": {"text": fields[1]}}, enc=enc)
        pairs = [("triage note", fields[2])] + [("triage note", f) for f in fields[3:]]
        self._event("form", t + 120, pairs=pairs, enc=enc)

    # -- admissions ---------------------------------------------------------------------

    def boundary(self) -> bool:
        return self.rng.random() < self.cfg.boundary_rate

    def prereg(self, created: int, planned: bool) -> int | None:
        rng = self.rng
        if planned:
            if self.boundary():
                return created - 24 * HOUR - 1
            return created - int(rng.integers(25 * HOUR, 20 * DAY))
        if rng.random() < 0.5:
            return None
        if self.boundary():
            return created - 24 * HOUR
        return created - int(rng.integers(0, 24 * HOUR + 1))

    def generate(self) -> tuple[list[Admission], list[dict]]:
        cfg, rng = self.cfg, self.rng
        t0 = _BASE + int(rng.integers(0, 6 * 365)) * DAY + int(rng.integers(0, DAY))
        t_end = t0 + cfg.horizon_days * DAY

        self.events.append(
            EventRecord(
                self.pid,
                "personal",
                None,
                {
                    "sex": str(rng.choice(["f", "m"])),
                    "nationality": str(rng.choice(["cl", "pe", "ar", "ve"])),
                    "birth_decade": str(1930 + 10 * int(rng.integers(0, 8))),
                },
            )
        )
        for _ in range(int(rng.integers(0, 3))):
            t = int(rng.integers(t0, t_end))
            self._event("problem", t, {"description": self.words(1, 3)})
        for _ in range(int(rng.poisson(cfg.encounters_per_patient))):
            self.encounter(int(rng.integers(t0, t_end)), "outpatient")

        admissions, manifest = [], []
        start = t0 + int(rng.integers(90 * DAY, 600 * DAY))
        forced_readmit = False
        next_kind = None
        blocked_until = -1  # a valid unplanned admission must start strictly after this
        prev_start = None
        k = 0
        while True:
            k += 1
            aid = f"{self.pid}-A{k}"
            stay = int(rng.integers(1 * DAY, 10 * DAY))
            end = start + stay
            created = start - int(rng.integers(0, 3 * HOUR))
            died = ama = transferred = False
            corrupt = False
            if forced_readmit:
                planned = False
            elif next_kind == "planned":
                planned = True
            elif next_kind == "invalid":
                planned = rng.random() < 0.5
                which = rng.choice(["ama", "transferred", "died"])
                died, ama, transferred = which == "died", which == "ama", which == "transferred"
            elif next_kind == "corrupt":
                planned = False
                corrupt = True
            else:
                planned = rng.random() < 0.3
                if rng.random() < cfg.invalid_rate:
                    which = rng.choice(["ama", "transferred", "died"])
                    died, ama, transferred = which == "died", which == "ama", which == "transferred"
            if corrupt:
                prereg = created + int(rng.integers(1, 2 * DAY))
            else:
                prereg = self.prereg(created, planned)
            valid = not (died or ama or transferred)
            if valid and not planned and not corrupt and start <= blocked_until:
                raise AssertionError("generator produced a readmission inside a negative horizon")

            label = None
            signal_positions: list[str] = []
            if valid and not corrupt:
                label = int(rng.random() < cfg.positive_rate)
                signal_positions = self._plant(label, start, prev_start)
            admissions.append(
                Admission(
                    self.pid,
                    aid,
                    from_epoch(start),
                    from_epoch(end),
                    from_epoch(created),
                    died=died,
                    against_medical_advice=ama,
                    transferred=transferred,
                    prereg_created_at=None if prereg is None else from_epoch(prereg),
                )
            )
            manifest.append(
                {
                    "admission_id": aid,
                    "patient_id": self.pid,
                    "intended_label": label,
                    "signal_positions": signal_positions,
                }
            )
            enc = self.encounter(start, "hospitalization", n_sub=0)
            for day in range(1, stay // DAY + 1):
                self._sub_event("clinical_note", start + day * DAY, enc)

            if label == 0:
                blocked_until = max(blocked_until, end + 30 * DAY)
            prev_start = start
            if died:
                break
            forced_readmit = False
            next_kind = None
            if label == 1:
                lo = max(end, blocked_until) + 1
                hi = end + 30 * DAY
                if self.boundary():
                    start = hi
                else:
                    start = int(rng.integers(max(lo, end + DAY), hi + 1)) if max(lo, end + DAY) <= hi else hi
                forced_readmit = True
                continue
            if rng.random() >= cfg.continue_rate:
                break
            r = rng.random()
            if cfg.corrupt_rate and r < cfg.corrupt_rate:
                next_kind = "corrupt"
                start = end + int(rng.integers(DAY, 30 * DAY))
            elif r < 0.5:
                # late readmission: outside every open horizon
                floor = max(end + 30 * DAY, blocked_until)
                if self.boundary():
                    start = floor + 1
                else:
                    start = floor + int(rng.integers(DAY, 200 * DAY))
            elif r < 0.75:
                next_kind = "planned"
                start = end + int(rng.integers(DAY, 30 * DAY))
            else:
                next_kind = "invalid"
                start = end + int(rng.integers(DAY, 30 * DAY))
            if next_kind is None:
                continue
            # planned/invalid/corrupt ones never count; the one after must clear horizons
        return admissions, manifest

    def _plant(self, label: int, start: int, prev_start: int | None) -> list[str]:
        cfg, rng = self.cfg, self.rng
        er_time = start - int(rng.integers(2 * HOUR, 10 * HOUR))
        if prev_start is not None and er_time <= prev_start:
            er_time = (prev_start + start) // 2
        slots = [""] * cfg.signal_slots
        positions = []
        if cfg.signal == "token" and label == 1:
            for i in range(cfg.signal_slots):
                if rng.random() < cfg.signal_q:
                    slots[i] = MARKER
                    positions.append(f"emergency.slot{i}")
        if cfg.signal == "temporal" and rng.random() < cfg.signal_q:
            clinic = start - int(rng.integers(3 * DAY, 6 * DAY))
            if prev_start is not None and clinic <= prev_start:
                clinic = (prev_start + er_time) // 2
            first, last = (ALPHA, BETA) if label == 1 else (BETA, ALPHA)
            n_enc = self.n_enc + 1
            enc = f"{self.pid}-E{n_enc}"
            self.n_enc = n_enc
            self._event("encounter", clinic, {"type": "clinic", "reason": self.words(2, 5)}, enc=enc)
            self._event("clinical_note", clinic + 60, {"content": {"text": f"{self.words(3, 8)} {first}"}}, enc=enc)
            slots[1] = last
            positions = [f"clinic.{first}", f"emergency.{last}"]
        self.signal_visit(er_time, slots)
        return positions


def generate(config: SynthConfig) -> SynthData:
    """Generate events, admissions and a per-admission ground-truth manifest."""
    config.validate()
    events, admissions, manifest = [], [], []
    for i in range(config.n_patients):
        gen = _PatientGen(config, i)
        adms, man = gen.generate()
        events.extend(gen.events)
        admissions.extend(adms)
        manifest.extend(man)
    return SynthData(events, admissions, manifest, config)


@dataclass
class Discrepancy:
    admission_id: str
    intended: int | None
    actual: int | None


def verify_labels(data: SynthData | list[dict], examples: list[Example] | None = None) -> list[Discrepancy]:
    """Diff cohort labels against the manifest's intended labels (empty = consistent).

    ``intended_label`` null means "no example expected" (invalid or excluded).
    When ``examples`` is omitted the cohort is built from ``data``.
    """
    if examples is None:
        histories = group_by_patient(data.events, data.admissions)
        examples, _ = build_cohort(histories)
    manifest = data.manifest if isinstance(data, SynthData) else data
    actual = {e.anchor_admission_id: e.label for e in examples}
    out = []
    seen = set()
    for entry in manifest:
        aid = entry["admission_id"]
        seen.add(aid)
        got = actual.get(aid)
        if got != entry["intended_label"]:
            out.append(Discrepancy(aid, entry["intended_label"], got))
    for aid, got in actual.items():
        if aid not in seen:
            out.append(Discrepancy(aid, None, got))
    return out


def config_to_json(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["events_per_encounter"] = list(cfg.events_per_encounter)
    return d


def config_from_json(obj: dict) -> SynthConfig:
    obj = dict(obj)
    if "events_per_encounter" in obj:
        obj["events_per_encounter"] = tuple(obj["events_per_encounter"])
    return SynthConfig(**obj)

