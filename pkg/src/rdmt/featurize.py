"""Patient histories -> (feature_id, token_id) pairs, Form (key_ids, value_ids)
pairs, and 12-hour windows counted back from the anchor.

Every non-Form payload field is a *feature* named ``<entity>.<field>``; its
value is split into word tokens, and each token becomes one datum. Forms keep
their key/value structure as two token-id lists. All features and Form text
share one global token vocabulary.
"""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from typing import IO, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cohort import Example
from .errors import EmptyCorpus, FutureEvent
from .records import EventRecord, epoch_seconds

PAD = 0
OOV = 1
RESERVED = ("<pad>", "<oov>")
VOCAB_MAGIC = "RDMT-VOCAB 1"

_WORD = re.compile(r"[^\W_]+")


@lru_cache(maxsize=1 << 18)
def _tokenize_cached(s: str) -> tuple[str, ...]:
    return tuple(_WORD.findall(s.lower()))


def tokenize_text(s: str) -> list[str]:
    """Lowercase and split on every run of characters that are not letters or digits."""
    return list(_tokenize_cached(s))


def feature_path(r: EventRecord, field_name: str) -> str:
    return f"{r.entity}.{field_name}".lower()


def _flat_fields(r: EventRecord):
    for name, value in r.payload.items():
        yield feature_path(r, name), value


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    feature_to_id: dict[str, int]
    min_token_count: int = 5

    @property
    def n_tokens(self) -> int:
        return len(self.token_to_id)

    @property
    def n_features(self) -> int:
        return len(self.feature_to_id)

    def token_id(self, token: str) -> int:
        return self.token_to_id.get(token, OOV)

    def dumps(self) -> str:
        lines = [VOCAB_MAGIC]
        for tok, i in sorted(self.token_to_id.items(), key=lambda kv: kv[1]):
            lines.append(f"T\t{tok}\t{i}")
        for feat, i in sorted(self.feature_to_id.items(), key=lambda kv: kv[1]):
            lines.append(f"F\t{feat}\t{i}")
        return "\n".join(lines) + "\n"

    def write(self, fh: IO[str]) -> None:
        fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_MAGIC:
            raise ValueError("not a vocabulary file (bad header)")
        tokens, features = {}, {}
        for line in lines[1:]:
            if not line:
                continue
            kind, name, idx = line.split("\t")
            (tokens if kind == "T" else features)[name] = int(idx)
        return cls(tokens, features)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def build_vocab(
    train_histories: Iterable[Sequence[EventRecord]],
    min_token_count: int = 5,
    max_features: int = 64,
) -> Vocabulary:
    """Count-then-assign over the training histories only.

    Features: the ``max_features`` most frequent paths (ties lexicographic), ids
    assigned in lexicographic order. Tokens: counted inside kept features and
    Form text; ids by descending count, then lexicographically, after PAD/OOV.
    """
    histories = [list(h) for h in train_histories]
    feat_counts: Counter[str] = Counter()
    for events in histories:
        for r in events:
            if r.form_pairs is None:
                feat_counts.update(path for path, _ in _flat_fields(r))
    ranked = sorted(feat_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_features]
    kept = sorted(name for name, _ in ranked)
    feature_to_id = {name: i for i, name in enumerate(kept)}

    tok_counts: Counter[str] = Counter()
    for events in histories:
        for r in events:
            if r.form_pairs is not None:
                for k, v in r.form_pairs:
                    tok_counts.update(_tokenize_cached(k))
                    tok_counts.update(_tokenize_cached(v))
            else:
                for path, value in _flat_fields(r):
                    if path in feature_to_id:
                        tok_counts.update(_tokenize_cached(value))
    if not tok_counts:
        raise EmptyCorpus("training histories contain no tokens")
    token_to_id = {name: i for i, name in enumerate(RESERVED)}
    for tok, count in sorted(tok_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if count >= min_token_count:
            token_to_id[tok] = len(token_to_id)
    return Vocabulary(token_to_id, feature_to_id, min_token_count)


@dataclass(frozen=True)
class EncodedDatum:
    timestamp: datetime
    kind: str
    flat: tuple[int, int] | None = None
    form: tuple[tuple[int, ...], tuple[int, ...]] | None = None


def encode_events(
    events: Iterable[EventRecord], anchor_time: datetime, v: Vocabulary
) -> list[EncodedDatum]:
    """Encode records in time order; timestampless (personal) data lands at the anchor.

    Form pairs whose key or value has no word characters are dropped.
    """
    out: list[tuple[int, int, EncodedDatum]] = []
    tok = v.token_to_id
    seq = 0
    for r in events:
        ts = r.timestamp if r.timestamp is not None else anchor_time
        t = epoch_seconds(ts)
        if r.form_pairs is not None:
            for k, val in r.form_pairs:
                key_ids = tuple(tok.get(x, OOV) for x in _tokenize_cached(k))
                val_ids = tuple(tok.get(x, OOV) for x in _tokenize_cached(val))
                if key_ids and val_ids:
                    out.append((t, seq, EncodedDatum(ts, "form", form=(key_ids, val_ids))))
                    seq += 1
            continue
        for path, value in _flat_fields(r):
            fid = v.feature_to_id.get(path)
            if fid is None:
                continue
            for x in _tokenize_cached(value):
                out.append((t, seq, EncodedDatum(ts, "flat", flat=(fid, tok.get(x, OOV)))))
                seq += 1
    out.sort(key=lambda item: (item[0], item[1]))
    return [d for _, _, d in out]


def encode_example(e: Example, v: Vocabulary) -> list[EncodedDatum]:
    return encode_events(e.history, e.anchor_time, v)


@dataclass
class Window:
    bucket_index: int
    flat_data: dict[int, list[int]] = field(default_factory=dict)
    form_data: list[tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=list)


@dataclass
class WindowSequence:
    windows: list[Window]

    def __len__(self) -> int:
        return len(self.windows)

    def token_ids(self) -> list[int]:
        ids: list[int] = []
        for w in self.windows:
            for toks in w.flat_data.values():
                ids.extend(toks)
            for k, val in w.form_data:
                ids.extend(k)
                ids.extend(val)
        return ids


def window_bucket(age_seconds: int, window_hours: float = 12) -> int:
    """Bucket j covers ages in [12j h, 12(j+1) h), i.e. instants in (anchor-12(j+1)h, anchor-12jh]."""
    return int(age_seconds // int(round(window_hours * 3600)))


def windowize(
    data: Sequence[EncodedDatum],
    anchor: datetime,
    window_hours: float = 12,
    max_windows: int = 256,
) -> WindowSequence:
    anchor_s = epoch_seconds(anchor)
    buckets: dict[int, Window] = {}
    for d in data:
        age = anchor_s - epoch_seconds(d.timestamp)
        if age < 0:
            raise FutureEvent(f"datum at {d.timestamp.isoformat()} is after anchor {anchor.isoformat()}")
        j = window_bucket(age, window_hours)
        w = buckets.get(j)
        if w is None:
            w = buckets[j] = Window(j)
        if d.kind == "flat":
            fid, tid = d.flat
            w.flat_data.setdefault(fid, []).append(tid)
        else:
            w.form_data.append(d.form)
    newest_first = sorted(buckets)[:max_windows]
    for w in buckets.values():
        # canonical order inside a window: pooling is order-free anyway
        for toks in w.flat_data.values():
            toks.sort()
        w.flat_data = dict(sorted(w.flat_data.items()))
        w.form_data.sort()
    return WindowSequence([buckets[j] for j in reversed(newest_first)])


def time_bucket_embedding_index(bucket_index: int, max_time_buckets: int) -> int:
    if bucket_index < 0:
        raise ValueError("bucket_index must be >= 0")
    return min(bucket_index, max_time_buckets - 1)


def patient_timelines(examples: Iterable[Example]) -> list[tuple[EventRecord, ...]]:
    """Longest visible history per patient (later anchors see a superset), by patient id."""
    latest: dict[str, Example] = {}
    for e in examples:
        cur = latest.get(e.patient_id)
        if cur is None or (e.anchor_time, len(e.history)) > (cur.anchor_time, len(cur.history)):
            latest[e.patient_id] = e
    return [latest[p].history for p in sorted(latest)]


class EncodedCorpus(list):
    """List of encoded examples that remembers the vocabulary it was encoded with."""

    def __init__(self, items=(), *, n_tokens: int, n_features: int, vocab_digest: str, vocab=None):
        super().__init__(items)
        self.n_tokens = n_tokens
        self.n_features = n_features
        self.vocab_digest = vocab_digest
        self.vocab = vocab


class EHRFeaturizer(BaseEstimator, TransformerMixin):
    """Fit a vocabulary on training examples; transform examples to windows or token streams.

    ``output="windows"`` yields a :class:`WindowSequence` per example (LSTM input);
    ``output="tokens"`` yields the flat token-id stream per example (BOW input).
    """

    def __init__(
        self,
        min_token_count=5,
        max_features=64,
        window_hours=12,
        max_windows=256,
        output="windows",
        vocab=None,
    ):
        self.min_token_count = min_token_count
        self.max_features = max_features
        self.window_hours = window_hours
        self.max_windows = max_windows
        self.output = output
        self.vocab = vocab

    def fit(self, X, y=None):
        X = _check_examples(X)
        if self.vocab is not None:
            self.vocab_ = self.vocab
        else:
            self.vocab_ = build_vocab(
                patient_timelines(X), self.min_token_count, self.max_features
            )
        return self

    def transform(self, X):
        check_is_fitted(self, "vocab_")
        X = _check_examples(X)
        if self.output not in ("windows", "tokens"):
            raise ValueError(f"output must be 'windows' or 'tokens', got {self.output!r}")
        v = self.vocab_
        items = []
        for e in X:
            data = encode_example(e, v)
            if self.output == "windows":
                items.append(windowize(data, e.anchor_time, self.window_hours, self.max_windows))
            else:
                items.append(_datum_tokens(data))
        return EncodedCorpus(
            items, n_tokens=v.n_tokens, n_features=v.n_features, vocab_digest=v.digest, vocab=v
        )


def _datum_tokens(data: Iterable[EncodedDatum]) -> np.ndarray:
    ids: list[int] = []
    for d in data:
        if d.kind == "flat":
            ids.append(d.flat[1])
        else:
            ids.extend(d.form[0])
            ids.extend(d.form[1])
    return np.asarray(ids, dtype=np.int64)


def _check_examples(X) -> list[Example]:
    X = list(X)
    for e in X:
        if not isinstance(e, Example):
            raise TypeError(f"expected cohort Example objects, got {type(e).__name__}")
    return X
