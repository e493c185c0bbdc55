"""Hypothesis-driven invariants across modules."""
from collections import Counter
from datetime import timedelta

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from rdmt.baseline import vectorize
from rdmt.cohort import build_examples, oversample_indices, split_by_patient
from rdmt.featurize import tokenize_text
from rdmt.metrics import auroc
from rdmt.records import PatientHistory
from rdmt.seqmodel import ModelParams, pool_feature

from conftest import adm, at, brute_auroc

PARAMS = ModelParams.init(10, 1, d=3, a=4, d_t=2, hidden_size=2, max_time_buckets=4, seed=0)

finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(finite, min_size=3, max_size=3), min_size=1, max_size=8), st.randoms())
def test_pool_permutation_invariant(rows, rnd):
    E = np.array(rows)
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    a = pool_feature(E, PARAMS.feature_nets[0]).data
    b = pool_feature(E[perm], PARAMS.feature_nets[0]).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=2, max_size=60))
def test_auroc_matches_pairs(pairs):
    s, y = zip(*pairs)
    if len(set(y)) < 2:
        return
    assert abs(auroc(s, y) - brute_auroc(s, y)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=300), st.floats(0.05, 0.9), st.integers(0, 99))
def test_oversample_minimal_and_negatives_kept(labels, target, seed):
    y = np.array(labels)
    if y.sum() == 0:
        return
    idx = oversample_indices(y, target, seed)
    res = y[idx]
    assert Counter(i for i in idx if y[i] == 0) == Counter(np.flatnonzero(y == 0).tolist())
    if y.mean() >= target:
        assert idx == list(range(len(y)))
    else:
        assert res.mean() >= target
        assert (res.sum() - 1) / (res.size - 1) < target


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(min_size=1, max_size=8), min_size=1, max_size=40, unique=True), st.integers(0, 10))
def test_split_is_per_patient_function(pids, seed):
    a = split_by_patient(pids, seed=seed)
    b = split_by_patient(pids[::-1], seed=seed)
    assert a.assignment == b.assignment
    assert set(a.assignment.values()) <= {"train", "validation", "test"}


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60))
def test_tokens_are_lowercase_word_runs(text):
    toks = tokenize_text(text)
    assert all(t and t == t.lower() and "_" not in t for t in toks)
    assert tokenize_text(" ".join(toks)) == toks


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 60), st.floats(0, 5), st.booleans()), min_size=1, max_size=6))
def test_labels_match_direct_rule(chain):
    adms, t = [], 0.0
    for i, (gap, length, planned) in enumerate(chain):
        t += gap
        adms.append(adm(f"a{i}", at(t), at(t + length), prereg=at(t - 3) if planned else None))
        t += length
    ex = build_examples(PatientHistory("p1", [], adms))
    for e, a in zip(ex, adms):
        want = any(
            b.prereg_created_at is None and timedelta(0) < b.start - a.end <= timedelta(days=30)
            for b in adms
        )
        assert e.label == int(want)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 12), max_size=25))
def test_vectorize_order_invariant(doc):
    sel, idf = [3, 5, 7, 2], [1.5, 1.2, 2.0, 1.1]
    a = vectorize([doc], sel, idf).toarray()
    b = vectorize([sorted(doc)], sel, idf).toarray()
    np.testing.assert_array_equal(a, b)
