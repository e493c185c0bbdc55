"""EHR entity model and line-delimited readers/writers.

Events and admissions arrive as two JSON-lines files. Each event line is one
timestamped atom of patient history; each admission line carries the metadata
the cohort rules need (death, AMA discharge, transfer, pre-registration).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable

from .errors import FatalFormat

ENTITIES = (
    "personal",
    "problem",
    "encounter",
    "diagnosis",
    "order",
    "clinical_note",
    "form",
)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def parse_instant(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime, truncated to seconds."""
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {type(text).__name__}")
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_instant(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def epoch_seconds(dt: datetime) -> int:
    return int((dt - _EPOCH).total_seconds())


def from_epoch(seconds: int) -> datetime:
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc)


@dataclass(frozen=True)
class EventRecord:
    patient_id: str
    entity: str
    timestamp: datetime | None
    payload: dict = field(default_factory=dict)
    form_pairs: tuple[tuple[str, str], ...] | None = None
    encounter_id: str | None = None

    def __post_init__(self):
        if self.entity not in ENTITIES:
            raise ValueError(f"unknown entity {self.entity!r}")
        if (self.entity == "form") != (self.form_pairs is not None):
            raise ValueError("form_pairs must be present iff entity is 'form'")
        if self.entity == "form" and self.payload:
            raise ValueError("form records carry form_pairs, not payload")
        if self.timestamp is None and self.entity != "personal":
            raise ValueError(f"{self.entity} record requires a timestamp")
        if any(not isinstance(v, str) for v in self.payload.values()):
            object.__setattr__(self, "payload", flatten_payload(self.payload))

    def to_json(self) -> dict:
        obj = {"patient_id": self.patient_id, "entity": self.entity}
        if self.timestamp is not None:
            obj["timestamp"] = format_instant(self.timestamp)
        if self.encounter_id is not None:
            obj["encounter_id"] = self.encounter_id
        if self.form_pairs is not None:
            obj["form_pairs"] = [list(p) for p in self.form_pairs]
        else:
            obj["payload"] = dict(self.payload)
        return obj


@dataclass(frozen=True)
class Admission:
    patient_id: str
    admission_id: str
    start: datetime
    end: datetime
    created_at: datetime
    died: bool = False
    against_medical_advice: bool = False
    transferred: bool = False
    prereg_created_at: datetime | None = None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"admission {self.admission_id}: start after end")

    def to_json(self) -> dict:
        obj = {
            "patient_id": self.patient_id,
            "admission_id": self.admission_id,
            "start": format_instant(self.start),
            "end": format_instant(self.end),
            "created_at": format_instant(self.created_at),
            "died": self.died,
            "against_medical_advice": self.against_medical_advice,
            "transferred": self.transferred,
        }
        if self.prereg_created_at is not None:
            obj["prereg_created_at"] = format_instant(self.prereg_created_at)
        return obj


@dataclass
class PatientHistory:
    patient_id: str
    events: list[EventRecord] = field(default_factory=list)
    admissions: list[Admission] = field(default_factory=list)


@dataclass(frozen=True)
class MalformedLine:
    line_no: int
    reason: str


def flatten_payload(payload: dict, prefix: str = "") -> dict[str, str]:
    """Flatten nested objects into dotted keys; scalars become strings, nulls drop."""
    flat: dict[str, str] = {}
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_payload(value, name + "."))
        elif value is None:
            continue
        elif isinstance(value, str):
            flat[name] = value
        elif isinstance(value, (bool, int, float)):
            flat[name] = json.dumps(value)
        else:
            raise ValueError(f"payload field {name!r} has unsupported type {type(value).__name__}")
    return flat


def record_from_json(obj: dict) -> EventRecord:
    if not isinstance(obj, dict):
        raise ValueError("line is not an object")
    for key in ("patient_id", "entity"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    entity = obj["entity"]
    ts = obj.get("timestamp")
    timestamp = parse_instant(ts) if ts is not None else None
    pairs = obj.get("form_pairs")
    form_pairs = None
    if pairs is not None:
        if not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in pairs):
            raise ValueError("form_pairs must be a list of [key, value] pairs")
        form_pairs = tuple((str(k), str(v)) for k, v in pairs)
    payload = flatten_payload(obj.get("payload") or {})
    enc = obj.get("encounter_id")
    return EventRecord(
        patient_id=str(obj["patient_id"]),
        entity=entity,
        timestamp=timestamp,
        payload=payload,
        form_pairs=form_pairs,
        encounter_id=None if enc is None else str(enc),
    )


def admission_from_json(obj: dict) -> Admission:
    if not isinstance(obj, dict):
        raise ValueError("line is not an object")
    for key in ("patient_id", "admission_id", "start", "end", "created_at"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    prereg = obj.get("prereg_created_at")
    return Admission(
        patient_id=str(obj["patient_id"]),
        admission_id=str(obj["admission_id"]),
        start=parse_instant(obj["start"]),
        end=parse_instant(obj["end"]),
        created_at=parse_instant(obj["created_at"]),
        died=bool(obj.get("died", False)),
        against_medical_advice=bool(obj.get("against_medical_advice", False)),
        transferred=bool(obj.get("transferred", False)),
        prereg_created_at=parse_instant(prereg) if prereg is not None else None,
    )


def _parse_lines(stream: Iterable[str], convert) -> tuple[list, list[MalformedLine]]:
    good, errors = [], []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            if line_no == 1:
                raise FatalFormat(f"line 1 is not a structured object: {exc}") from exc
            errors.append(MalformedLine(line_no, f"invalid JSON: {exc.msg}"))
            continue
        if line_no == 1 and not isinstance(obj, dict):
            raise FatalFormat("line 1 is not a structured object")
        try:
            good.append(convert(obj))
        except (ValueError, TypeError) as exc:
            errors.append(MalformedLine(line_no, str(exc)))
    return good, errors


def parse_records(stream: Iterable[str]) -> tuple[list[EventRecord], list[MalformedLine]]:
    """Parse an events stream. Returns records in input order plus per-line errors."""
    return _parse_lines(stream, record_from_json)


def parse_admissions(stream: Iterable[str]) -> tuple[list[Admission], list[MalformedLine]]:
    return _parse_lines(stream, admission_from_json)


def dump_lines(objs: Iterable, fh: IO[str]) -> None:
    for obj in objs:
        fh.write(json.dumps(obj.to_json(), sort_keys=True, ensure_ascii=False))
        fh.write("\n")


def _event_sort_key(item: tuple[int, EventRecord]):
    idx, rec = item
    # timestampless personal data sorts first; windowing re-anchors it later
    if rec.timestamp is None:
        return (0, 0, idx)
    return (1, epoch_seconds(rec.timestamp), idx)


def group_by_patient(
    records: Iterable[EventRecord], admissions: Iterable[Admission] = ()
) -> list[PatientHistory]:
    """One history per patient id, events stably sorted by time, admissions by start.

    Histories come back ordered by patient id so that the output does not depend
    on the order of the input records.
    """
    histories: dict[str, PatientHistory] = {}
    indexed: dict[str, list[tuple[int, EventRecord]]] = {}
    for idx, rec in enumerate(records):
        indexed.setdefault(rec.patient_id, []).append((idx, rec))
    for pid, items in indexed.items():
        items.sort(key=_event_sort_key)
        histories[pid] = PatientHistory(pid, [rec for _, rec in items])
    for adm in admissions:
        histories.setdefault(adm.patient_id, PatientHistory(adm.patient_id)).admissions.append(adm)
    for hist in histories.values():
        hist.admissions.sort(key=lambda a: (a.start, a.end, a.admission_id))
    return [histories[pid] for pid in sorted(histories)]


def read_events(path) -> tuple[list[EventRecord], list[MalformedLine]]:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh)


def read_admissions(path) -> tuple[list[Admission], list[MalformedLine]]:
    with open(path, encoding="utf-8") as fh:
        return parse_admissions(fh)
