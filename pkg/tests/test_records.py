import io
import json
import random
from datetime import timedelta

import pytest

from rdmt.errors import FatalFormat
from rdmt.records import (
    EventRecord,
    dump_lines,
    epoch_seconds,
    flatten_payload,
    format_instant,
    group_by_patient,
    parse_admissions,
    parse_instant,
    parse_records,
)

from conftest import T0, adm, at, ev


def _lines(*objs):
    return [json.dumps(o) + "\n" for o in objs]


class TestParse:
    def test_empty_stream(self):
        recs, errs = parse_records([])
        assert recs == [] and errs == []

    def test_clinical_note_line(self):
        line = {
            "patient_id": "p1",
            "entity": "clinical_note",
            "timestamp": "2020-01-01T10:00:00Z",
            "payload": {"content": {"text": "patient arrived with injuries"}},
        }
        recs, errs = parse_records(_lines(line))
        assert errs == []
        assert len(recs) == 1
        assert recs[0].entity == "clinical_note"
        assert recs[0].payload == {"content.text": "patient arrived with injuries"}

    def test_missing_entity_is_malformed(self):
        recs, errs = parse_records(_lines({"patient_id": "p1", "timestamp": "2020-01-01T00:00:00Z"}))
        assert recs == []
        assert len(errs) == 1 and errs[0].line_no == 1

    def test_bad_later_line_reported_with_number(self):
        good = {"patient_id": "p1", "entity": "personal", "payload": {"sex": "f"}}
        stream = _lines(good) + ["{not json\n"] + _lines({"patient_id": "p1", "entity": "alien", "timestamp": "2020-01-01T00:00:00Z"})
        recs, errs = parse_records(stream)
        assert len(recs) == 1
        assert [e.line_no for e in errs] == [2, 3]

    def test_unreadable_first_line_is_fatal(self):
        with pytest.raises(FatalFormat):
            parse_records(["garbage\n"])
        with pytest.raises(FatalFormat):
            parse_records(["[1, 2]\n"])

    def test_form_requires_pairs(self):
        line = {"patient_id": "p1", "entity": "form", "timestamp": "2020-01-01T00:00:00Z", "payload": {"a": "b"}}
        recs, errs = parse_records(_lines(line, line))
        assert recs == [] and len(errs) == 2

    def test_timestamp_needed_except_personal(self):
        recs, errs = parse_records(_lines({"patient_id": "p", "entity": "diagnosis", "payload": {"code": "x"}}) * 2)
        assert recs == [] and len(errs) == 2

    def test_admission_fields(self):
        line = {
            "patient_id": "p1",
            "admission_id": "a1",
            "start": "2020-01-01T00:00:00Z",
            "end": "2020-01-03T00:00:00Z",
            "created_at": "2019-12-31T23:00:00Z",
            "died": False,
            "against_medical_advice": True,
            "transferred": False,
            "prereg_created_at": "2019-12-30T23:00:00Z",
        }
        adms, errs = parse_admissions(_lines(line))
        assert errs == []
        assert adms[0].against_medical_advice and adms[0].prereg_created_at == parse_instant("2019-12-30T23:00:00Z")

    def test_admission_start_after_end_rejected(self):
        line = {"patient_id": "p", "admission_id": "a", "start": "2020-01-02T00:00:00Z",
                "end": "2020-01-01T00:00:00Z", "created_at": "2020-01-01T00:00:00Z"}
        adms, errs = parse_admissions(_lines(line, line))
        assert adms == [] and len(errs) == 2


class TestTime:
    def test_offset_converted_to_utc(self):
        assert format_instant(parse_instant("2020-01-01T03:00:00+03:00")) == "2020-01-01T00:00:00Z"

    def test_subsecond_truncated(self):
        assert epoch_seconds(parse_instant("2020-01-01T00:00:00.999Z")) == epoch_seconds(T0)

    def test_naive_timestamp_rejected(self):
        with pytest.raises(ValueError):
            parse_instant("2020-01-01T00:00:00")


def test_flatten_nested_payload():
    assert flatten_payload({"medication": {"categorical_text": "x", "dose": 5}, "n": None}) == {
        "medication.categorical_text": "x",
        "medication.dose": "5",
    }


def test_event_record_flattens_nested_payload():
    r = EventRecord("p", "order", T0, {"medication": {"categorical_text": "clonazepam"}})
    assert r.payload == {"medication.categorical_text": "clonazepam"}


class TestGroup:
    def test_three_records_two_patients(self):
        recs = [ev("problem", at(1), {"d": "a"}, pid="a"), ev("problem", at(2), {"d": "b"}, pid="b"),
                ev("problem", at(0), {"d": "c"}, pid="a")]
        hs = group_by_patient(recs)
        assert [h.patient_id for h in hs] == ["a", "b"]
        assert [r.payload["d"] for r in hs[0].events] == ["c", "a"]

    def test_equal_timestamps_keep_input_order(self):
        recs = [ev("problem", at(1), {"d": str(i)}) for i in range(5)]
        assert [r.payload["d"] for r in group_by_patient(recs)[0].events] == list("01234")

    def test_admissions_only_patient(self):
        hs = group_by_patient([], [adm("a1", at(0), at(1), pid="z")])
        assert hs[0].patient_id == "z" and hs[0].events == []

    def test_shuffled_matches_sort_then_group_oracle(self):
        rnd = random.Random(5)
        recs = []
        for i in range(10_000):
            pid = f"p{rnd.randrange(40)}"
            recs.append(ev("problem", at(seconds=rnd.randrange(5000)), {"i": str(i)}, pid=pid))
        shuffled = recs[:]
        rnd.shuffle(shuffled)
        # oracle: sort by (patient, time, original index), then group
        order = {id(r): i for i, r in enumerate(shuffled)}
        oracle = {}
        for r in sorted(shuffled, key=lambda r: (r.patient_id, r.timestamp, order[id(r)])):
            oracle.setdefault(r.patient_id, []).append(r)
        got = {h.patient_id: h.events for h in group_by_patient(shuffled)}
        assert got == oracle
        for h in group_by_patient(shuffled):
            ts = [r.timestamp for r in h.events]
            assert ts == sorted(ts)


def test_history_round_trip():
    recs = [
        ev("personal", None, {"sex": "f"}),
        ev("encounter", at(1), {"type": "er", "reason": "dolor torácico"}, enc="e1"),
        ev("form", at(1, 1), pairs=[("vital signs", "hr 80")], enc="e1"),
        ev("order", at(2), {"medication": {"categorical_text": "levetiracetam"}}),
    ]
    adms = [adm("a1", at(3), at(5), prereg=at(2))]
    h = group_by_patient(recs, adms)
    ev_buf, adm_buf = io.StringIO(), io.StringIO()
    dump_lines(h[0].events, ev_buf)
    dump_lines(h[0].admissions, adm_buf)
    recs2, e1 = parse_records(io.StringIO(ev_buf.getvalue()))
    adms2, e2 = parse_admissions(io.StringIO(adm_buf.getvalue()))
    assert e1 == [] and e2 == []
    assert group_by_patient(recs2, adms2) == h


def test_admission_end_not_before_start():
    with pytest.raises(ValueError):
        adm("x", at(2), at(1))
    assert adm("x", at(1), at(1) + timedelta(0)).start == at(1)
