"""TF-IDF bag-of-words + logistic regression baseline.

Documents are token-id streams (the featurizer's ``output="tokens"``), the
same encoded stream the LSTM sees minus the windowing.
"""
from __future__ import annotations

import logging
import math
import time
from collections import Counter
from typing import Sequence

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._container import read_container, write_container
from .errors import Diverged, EmptyCorpus, IoFailure, SingleClass, VocabMismatch
from .featurize import OOV
from .metrics import auroc
from .ndiff import Adam, Tape, Tensor
from .seqmodel import batch_loss

logger = logging.getLogger(__name__)

BASE_MAGIC = "RDMT-BASE 1"
BASE_VERSION = 1


def _doc_counts(doc) -> Counter:
    return Counter(int(t) for t in np.asarray(doc, dtype=np.int64).reshape(-1) if t > OOV)


def tfidf_scores(docs: Sequence, average: str = "all") -> tuple[dict[int, float], dict[int, float]]:
    """Per-token averaged TF-IDF score and idf over ``docs``.

    tf is the in-document count over document length, idf is
    ``ln((1+N)/(1+df)) + 1``. ``average="all"`` divides the summed tf-idf by
    every document; ``"containing"`` only by those containing the token.
    PAD and OOV ids are ignored.
    """
    if average not in ("all", "containing"):
        raise ValueError(f"average must be 'all' or 'containing', got {average!r}")
    n = len(docs)
    if n == 0:
        raise EmptyCorpus("tfidf needs at least one document")
    tf_sum: dict[int, float] = {}
    df: Counter = Counter()
    for doc in docs:
        counts = _doc_counts(doc)
        length = sum(counts.values())
        for t, c in counts.items():
            tf_sum[t] = tf_sum.get(t, 0.0) + c / length
            df[t] += 1
    idf = {t: math.log((1 + n) / (1 + df[t])) + 1.0 for t in df}
    scores = {}
    for t, s in tf_sum.items():
        denom = n if average == "all" else df[t]
        scores[t] = s * idf[t] / denom
    return scores, idf


def select_tokens(scores: dict[int, float], top_k: int, token_names: Sequence[str] | None = None) -> list[int]:
    """Top ``top_k`` ids by score; ties broken by token string (or id when names are unknown)."""
    if token_names is not None:
        key = lambda t: (-scores[t], token_names[t])  # noqa: E731
    else:
        key = lambda t: (-scores[t], t)  # noqa: E731
    return sorted(scores, key=key)[:top_k]


def vectorize(docs: Sequence, selected: Sequence[int], idf: Sequence[float]) -> sparse.csr_matrix:
    """Rows of tf·idf over the selected tokens; other tokens count toward |d| only."""
    col = {int(t): j for j, t in enumerate(selected)}
    idf = np.asarray(idf, dtype=np.float64)
    indptr, indices, values = [0], [], []
    for doc in docs:
        counts = _doc_counts(doc)
        length = sum(counts.values())
        row = sorted((col[t], c) for t, c in counts.items() if t in col)
        for j, c in row:
            indices.append(j)
            values.append(c / length * idf[j])
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(docs), len(selected)),
    )


def _patient_documents(X, groups) -> list:
    """Longest document per patient, ordered by patient id."""
    best: dict = {}
    for doc, g in zip(X, groups):
        if g not in best or len(doc) > len(best[g]):
            best[g] = doc
    return [best[g] for g in sorted(best)]


def _lr_loss(tape: Tape, xb: np.ndarray, w: Tensor, b: Tensor, yb: np.ndarray) -> Tensor:
    logits = tape.add(tape.matmul(Tensor(xb), w), b)
    return batch_loss(tape, tape.sigmoid(logits), yb)


class TfidfLogisticBaseline(BaseEstimator, ClassifierMixin):
    """Bag-of-words TF-IDF features over the top-k tokens, logistic regression on top.

    ``fit`` takes token-id streams. ``groups`` (patient ids) makes token
    selection use one document per patient timeline; without it every example
    is its own document. Weights start at zero and are trained with BCE + Adam;
    with an ``eval_set`` the best validation-AUROC epoch is kept.
    """

    def __init__(
        self,
        top_k=5000,
        epochs=8,
        learning_rate=0.01,
        batch_size=32,
        average="all",
        threshold=0.5,
        random_state=0,
    ):
        self.top_k = top_k
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.average = average
        self.threshold = threshold
        self.random_state = random_state

    def fit(self, X, y, eval_set=None, groups=None):
        docs = list(X)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if len(docs) != y.size:
            raise ValueError(f"X has {len(docs)} documents but y has {y.size} labels")
        if np.unique(y).size < 2:
            raise SingleClass("training labels contain a single class")
        vocab = getattr(X, "vocab", None)
        self.vocab_digest_ = getattr(X, "vocab_digest", None)
        selection_docs = docs if groups is None else _patient_documents(docs, groups)
        scores, idf = tfidf_scores(selection_docs, self.average)
        names = None
        if vocab is not None:
            names = [None] * vocab.n_tokens
            for tok, i in vocab.token_to_id.items():
                names[i] = tok
        self.selected_tokens_ = np.asarray(select_tokens(scores, int(self.top_k), names), dtype=np.int64)
        self.idf_ = np.asarray([idf[int(t)] for t in self.selected_tokens_], dtype=np.float64)
        self.classes_ = np.array([0, 1])

        design = vectorize(docs, self.selected_tokens_, self.idf_)
        val = None
        if eval_set is not None:
            Xv, yv = eval_set
            val = (vectorize(list(Xv), self.selected_tokens_, self.idf_), np.asarray(yv, dtype=np.int64))

        k = self.selected_tokens_.size
        self.w_ = Tensor(np.zeros((k, 1)), requires_grad=True, name="w")
        self.b_ = Tensor(np.zeros(1), requires_grad=True, name="b")
        opt = Adam([self.w_, self.b_], lr=self.learning_rate)
        rng = np.random.default_rng(np.random.SeedSequence(int(self.random_state)))
        self.history_ = []
        best = (-np.inf, (self.w_.data.copy(), self.b_.data.copy()), 0)
        for epoch in range(1, int(self.epochs) + 1):
            t0 = time.perf_counter()
            perm = rng.permutation(y.size)
            total = 0.0
            for bi, lo in enumerate(range(0, perm.size, self.batch_size)):
                ids = perm[lo : lo + self.batch_size]
                tape = Tape()
                loss = _lr_loss(tape, design[ids].toarray(), self.w_, self.b_, y[ids])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise Diverged(epoch, bi, value)
                tape.backward(loss)
                opt.step()
                opt.zero_grad()
                total += value * ids.size
            val_auc = None
            if val is not None and np.unique(val[1]).size == 2:
                val_auc = auroc(self._scores(val[0]), val[1])
            wall = time.perf_counter() - t0
            self.history_.append(
                {"epoch": epoch, "train_loss": total / y.size, "val_auroc": val_auc, "wall_seconds": wall}
            )
            logger.info("epoch %d train_loss %.6f val_auroc %s", epoch, total / y.size, val_auc)
            score = val_auc if val_auc is not None else -np.inf
            if best[2] == 0 or val_auc is None or score > best[0]:
                best = (score, (self.w_.data.copy(), self.b_.data.copy()), epoch)
        self.w_.data, self.b_.data = best[1]
        self.best_epoch_ = best[2]
        self.best_val_auroc_ = None if not np.isfinite(best[0]) else float(best[0])
        return self

    def _scores(self, design: sparse.csr_matrix) -> np.ndarray:
        z = design @ self.w_.data[:, 0] + self.b_.data[0]
        return 1.0 / (1.0 + np.exp(-z))

    def transform(self, X) -> sparse.csr_matrix:
        check_is_fitted(self, "selected_tokens_")
        return vectorize(list(X), self.selected_tokens_, self.idf_)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "w_")
        digest = getattr(X, "vocab_digest", None)
        if digest is not None and self.vocab_digest_ is not None and digest != self.vocab_digest_:
            raise VocabMismatch("inputs were encoded with a different vocabulary than the model")
        p1 = self._scores(self.transform(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(np.int64)

    def save(self, path) -> None:
        check_is_fitted(self, "w_")
        manifest = {
            "format_version": BASE_VERSION,
            "config": self.get_params(),
            "selected_tokens": [int(t) for t in self.selected_tokens_],
            "vocab_digest": self.vocab_digest_,
            "best_epoch": self.best_epoch_,
            "best_val_auroc": self.best_val_auroc_,
        }
        write_container(
            path, BASE_MAGIC, manifest, [("idf", self.idf_), ("w", self.w_.data), ("b", self.b_.data)]
        )

    @classmethod
    def load(cls, path) -> "TfidfLogisticBaseline":
        manifest, arrays = read_container(path, BASE_MAGIC)
        if manifest.get("format_version") != BASE_VERSION:
            raise IoFailure(f"unsupported baseline version {manifest.get('format_version')}")
        model = cls(**manifest["config"])
        model.selected_tokens_ = np.asarray(manifest["selected_tokens"], dtype=np.int64)
        model.idf_ = arrays["idf"]
        model.w_ = Tensor(arrays["w"].copy(), requires_grad=True, name="w")
        model.b_ = Tensor(arrays["b"].copy(), requires_grad=True, name="b")
        model.classes_ = np.array([0, 1])
        model.vocab_digest_ = manifest["vocab_digest"]
        model.best_epoch_ = manifest["best_epoch"]
        model.best_val_auroc_ = manifest["best_val_auroc"]
        model.history_ = []
        return model
