"""Per-feature weighted pooling + Form pooling + LSTM readmission classifier.

Each 12-hour window becomes one vector: for every feature, a weighted average
of its token embeddings (weights from a small per-feature network with a
sigmoid output); for Forms, a weighted average of ``[k; v]`` where ``k`` and
``v`` are mean key and value embeddings; plus a relative-time embedding. The
window vectors feed an LSTM whose last hidden state drives a logistic output.

Training runs minibatches through a single tape per batch. Sequences are
right-aligned inside a batch so that every example ends on the final step;
leading padding steps are masked and leave the zero state untouched.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._container import read_container, write_container
from .cohort import oversample_indices
from .errors import Diverged, EmptyInput, SingleClass, VocabMismatch
from .featurize import Window, WindowSequence, time_bucket_embedding_index
from .metrics import auroc
from .ndiff import Adam, Tape, Tensor

logger = logging.getLogger(__name__)

POOL_EPS = 1e-8
CKPT_MAGIC = "RDMT-CKPT 1"
CKPT_VERSION = 1


@dataclass
class WeightNet:
    """x -> sigmoid(tanh(x W1 + b1) w2 + b2), one weight per input row."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def weights(self, tape: Tape, x: Tensor) -> Tensor:
        hidden = tape.tanh(tape.add(tape.matmul(x, self.w1), self.b1))
        return tape.sigmoid(tape.add(tape.matmul(hidden, self.w2), self.b2))

    def tensors(self):
        return [self.w1, self.b1, self.w2, self.b2]


def _xavier(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _weight_net(rng, n_in, n_hidden, name) -> WeightNet:
    return WeightNet(
        Tensor(_xavier(rng, n_in, n_hidden), True, f"{name}.w1"),
        Tensor(np.zeros(n_hidden), True, f"{name}.b1"),
        Tensor(_xavier(rng, n_hidden, 1), True, f"{name}.w2"),
        Tensor(np.zeros(1), True, f"{name}.b2"),
    )


@dataclass
class ModelParams:
    token_emb: Tensor
    feature_nets: list[WeightNet]
    form_net: WeightNet
    time_emb: Tensor
    lstm_wx: Tensor
    lstm_wh: Tensor
    lstm_b: Tensor
    head_w: Tensor
    head_b: Tensor

    @property
    def d(self) -> int:
        return self.token_emb.shape[1]

    @property
    def n_features(self) -> int:
        return len(self.feature_nets)

    @property
    def d_t(self) -> int:
        return self.time_emb.shape[1]

    @property
    def max_time_buckets(self) -> int:
        return self.time_emb.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.lstm_wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.n_features * self.d + 2 * self.d + self.d_t

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("token_emb", self.token_emb)]
        for f, net in enumerate(self.feature_nets):
            out += [(f"feature{f}.{k}", t) for k, t in zip(("w1", "b1", "w2", "b2"), net.tensors())]
        out += [(f"form.{k}", t) for k, t in zip(("w1", "b1", "w2", "b2"), self.form_net.tensors())]
        out += [
            ("time_emb", self.time_emb),
            ("lstm.wx", self.lstm_wx),
            ("lstm.wh", self.lstm_wh),
            ("lstm.b", self.lstm_b),
            ("head.w", self.head_w),
            ("head.b", self.head_b),
        ]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    @classmethod
    def init(
        cls,
        n_tokens: int,
        n_features: int,
        d: int = 32,
        a: int = 32,
        d_t: int = 8,
        hidden_size: int = 128,
        max_time_buckets: int = 512,
        seed: int = 0,
    ) -> "ModelParams":
        """Embeddings U(-0.05, 0.05); Xavier-uniform matrices; zero biases, forget bias 1."""
        rng = np.random.default_rng(seed)
        H = hidden_size
        D = n_features * d + 2 * d + d_t
        token_emb = Tensor(rng.uniform(-0.05, 0.05, (n_tokens, d)), True, "token_emb")
        feature_nets = [_weight_net(rng, d, a, f"feature{f}") for f in range(n_features)]
        form_net = _weight_net(rng, 2 * d, a, "form")
        time_emb = Tensor(rng.uniform(-0.05, 0.05, (max_time_buckets, d_t)), True, "time_emb")
        wx = np.concatenate([_xavier(rng, D, H) for _ in range(4)], axis=1)
        wh = np.concatenate([_xavier(rng, H, H) for _ in range(4)], axis=1)
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        return cls(
            token_emb,
            feature_nets,
            form_net,
            time_emb,
            Tensor(wx, True, "lstm.wx"),
            Tensor(wh, True, "lstm.wh"),
            Tensor(b, True, "lstm.b"),
            Tensor(_xavier(rng, H, 1), True, "head.w"),
            Tensor(np.zeros(1), True, "head.b"),
        )

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.tensors()]

    def restore(self, arrays: Sequence[np.ndarray]) -> None:
        for t, arr in zip(self.tensors(), arrays):
            t.data[...] = arr


# -- standalone pooling (single window, reference semantics) -------------------


def _canonical_rows(x: np.ndarray) -> np.ndarray:
    if x.shape[0] < 2:
        return x
    return x[np.lexsort(x.T[::-1])]


def pool_feature(embs, net: WeightNet, tape: Tape | None = None) -> Tensor:
    """Normalized weighted average sum(w_i e_i) / (sum(w_i) + eps), w_i = net(e_i).

    Rows are put in a canonical order first so the result does not depend on the
    order of the inputs. Passing a recording tape keeps the result differentiable
    (no reordering is applied to Tensor inputs in that case).
    """
    tape = Tape(enabled=False) if tape is None else tape
    if isinstance(embs, Tensor):
        E = embs
    else:
        arr = np.asarray(embs, dtype=np.float64)
        if arr.ndim != 2:
            arr = arr.reshape(len(arr), -1)
        E = Tensor(_canonical_rows(arr))
    if E.shape[0] == 0:
        raise EmptyInput("pool_feature needs at least one embedding")
    w = net.weights(tape, E)
    num = tape.reshape(tape.sum(tape.mul(E, w), axis=0), (1, E.shape[1]))
    den = tape.reshape(tape.add(tape.sum(w), POOL_EPS), (1, 1))
    return tape.reshape(tape.div(num, den), (E.shape[1],))


def pool_forms(pairs, token_emb: Tensor, form_net: WeightNet, tape: Tape | None = None) -> Tensor:
    """Weighted average of [mean key embedding; mean value embedding] over Form pairs."""
    tape = Tape(enabled=False) if tape is None else tape
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("pool_forms needs at least one (key_ids, value_ids) pair")
    rows = []
    for key_ids, value_ids in pairs:
        if len(key_ids) == 0 or len(value_ids) == 0:
            raise EmptyInput("Form keys and values need at least one token")
        k = token_emb.data[np.asarray(key_ids)].mean(axis=0)
        v = token_emb.data[np.asarray(value_ids)].mean(axis=0)
        rows.append(np.concatenate([k, v]))
    return pool_feature(np.stack(rows), form_net, tape)


def build_window_vector(w: Window, params: ModelParams) -> np.ndarray:
    """Window vector from the standalone pooling functions (reference path)."""
    d = params.d
    blocks = []
    for f in range(params.n_features):
        toks = w.flat_data.get(f)
        if toks:
            blocks.append(pool_feature(params.token_emb.data[np.asarray(toks)], params.feature_nets[f]).data)
        else:
            blocks.append(np.zeros(d))
    if w.form_data:
        blocks.append(pool_forms(w.form_data, params.token_emb, params.form_net).data)
    else:
        blocks.append(np.zeros(2 * d))
    t = time_bucket_embedding_index(w.bucket_index, params.max_time_buckets)
    blocks.append(params.time_emb.data[t])
    return np.concatenate(blocks)


# -- compiled batches ------------------------------------------------------------


@dataclass
class CompiledSequence:
    buckets: np.ndarray
    flat_tok: np.ndarray
    flat_feat: np.ndarray
    flat_win: np.ndarray
    pair_win: np.ndarray
    key_tok: np.ndarray
    key_pair: np.ndarray
    val_tok: np.ndarray
    val_pair: np.ndarray

    @property
    def n_windows(self) -> int:
        return len(self.buckets)


def compile_sequence(seq: WindowSequence) -> CompiledSequence:
    """Flatten a WindowSequence into index arrays.

    A sequence with no windows becomes one empty window at bucket 0.
    """
    windows = seq.windows or [Window(0)]
    buckets, ft, ff, fw = [], [], [], []
    pw, kt, kp, vt, vp = [], [], [], [], []
    for wi, w in enumerate(windows):
        buckets.append(w.bucket_index)
        for fid, toks in w.flat_data.items():
            ft.extend(toks)
            ff.extend([fid] * len(toks))
            fw.extend([wi] * len(toks))
        for key_ids, value_ids in w.form_data:
            p = len(pw)
            pw.append(wi)
            kt.extend(key_ids)
            kp.extend([p] * len(key_ids))
            vt.extend(value_ids)
            vp.extend([p] * len(value_ids))
    i = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    return CompiledSequence(i(buckets), i(ft), i(ff), i(fw), i(pw), i(kt), i(kp), i(vt), i(vp))


@dataclass
class Batch:
    lengths: np.ndarray
    offsets: np.ndarray
    buckets: np.ndarray
    flat_tok: np.ndarray
    flat_feat: np.ndarray
    flat_win: np.ndarray
    pair_win: np.ndarray
    key_tok: np.ndarray
    key_pair: np.ndarray
    val_tok: np.ndarray
    val_pair: np.ndarray

    @property
    def size(self) -> int:
        return len(self.lengths)

    @property
    def n_windows(self) -> int:
        return int(self.lengths.sum())


def make_batch(items: Sequence[CompiledSequence]) -> Batch:
    lengths = np.array([c.n_windows for c in items], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    n_pairs = np.array([len(c.pair_win) for c in items], dtype=np.int64)
    pair_off = np.concatenate([[0], np.cumsum(n_pairs)[:-1]]).astype(np.int64)

    def cat(name, shift=None):
        parts = [getattr(c, name) + (0 if shift is None else shift[k]) for k, c in enumerate(items)]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    return Batch(
        lengths=lengths,
        offsets=offsets,
        buckets=cat("buckets"),
        flat_tok=cat("flat_tok"),
        flat_feat=cat("flat_feat"),
        flat_win=cat("flat_win", offsets),
        pair_win=cat("pair_win", offsets),
        key_tok=cat("key_tok"),
        key_pair=cat("key_pair", pair_off),
        val_tok=cat("val_tok"),
        val_pair=cat("val_pair", pair_off),
    )


# -- batched forward ---------------------------------------------------------------


def _pooled_block(tape, weighted_rows, weights, win_ids, n_windows):
    num = tape.segment_sum(tape.mul(weighted_rows, weights), win_ids, n_windows)
    den = tape.segment_sum(weights, win_ids, n_windows)
    # absent windows: 0 / eps = 0 exactly
    return tape.div(num, tape.add(den, POOL_EPS))


def window_matrix(
    tape: Tape,
    params: ModelParams,
    batch: Batch,
    *,
    training: bool = False,
    emb_dropout: float = 0.0,
    rng=None,
) -> Tensor:
    """Stack of all window vectors in the batch, shape (total windows, D)."""
    d = params.d
    W = batch.n_windows
    blocks = []
    order = np.argsort(batch.flat_feat, kind="stable")
    feats = batch.flat_feat[order]
    bounds = np.searchsorted(feats, np.arange(params.n_features + 1))
    zeros_d = None
    for f, net in enumerate(params.feature_nets):
        sel = order[bounds[f] : bounds[f + 1]]
        if sel.size == 0:
            if zeros_d is None:
                zeros_d = Tensor(np.zeros((W, d)))
            blocks.append(zeros_d)
            continue
        E = tape.embedding_lookup(params.token_emb, batch.flat_tok[sel])
        E = tape.dropout(E, emb_dropout, rng, training)
        blocks.append(_pooled_block(tape, E, net.weights(tape, E), batch.flat_win[sel], W))

    P = len(batch.pair_win)
    if P:
        K = tape.embedding_lookup(params.token_emb, batch.key_tok)
        K = tape.dropout(K, emb_dropout, rng, training)
        V = tape.embedding_lookup(params.token_emb, batch.val_tok)
        V = tape.dropout(V, emb_dropout, rng, training)
        k_count = np.bincount(batch.key_pair, minlength=P).reshape(P, 1)
        v_count = np.bincount(batch.val_pair, minlength=P).reshape(P, 1)
        k = tape.mul(tape.segment_sum(K, batch.key_pair, P), 1.0 / k_count)
        v = tape.mul(tape.segment_sum(V, batch.val_pair, P), 1.0 / v_count)
        kv = tape.concat([k, v], axis=1)
        blocks.append(_pooled_block(tape, kv, params.form_net.weights(tape, kv), batch.pair_win, W))
    else:
        blocks.append(Tensor(np.zeros((W, 2 * d))))

    tidx = np.minimum(batch.buckets, params.max_time_buckets - 1)
    blocks.append(tape.embedding_lookup(params.time_emb, tidx))
    return tape.concat(blocks, axis=1)


def forward_batch(
    tape: Tape,
    params: ModelParams,
    batch: Batch,
    *,
    training: bool = False,
    emb_dropout: float = 0.0,
    hidden_dropout: float = 0.0,
    rng=None,
) -> Tensor:
    """Probabilities of label 1, shape (batch, 1)."""
    X = window_matrix(tape, params, batch, training=training, emb_dropout=emb_dropout, rng=rng)
    XW = tape.add(tape.matmul(X, params.lstm_wx), params.lstm_b)
    B, H = batch.size, params.hidden_size
    T = int(batch.lengths.max())
    start = T - batch.lengths
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    for t in range(T):
        active = t >= start
        rows = batch.offsets + np.clip(t - start, 0, None)
        rows = np.where(active, rows, 0)
        xw_t = tape.embedding_lookup(XW, rows)
        h_in = tape.dropout(h, hidden_dropout, rng, training) if t > 0 else h
        h, c = tape.lstm_cell(xw_t, h_in, c, params.lstm_wh, mask=active)
    h = tape.dropout(h, hidden_dropout, rng, training)
    logit = tape.add(tape.matmul(h, params.head_w), params.head_b)
    return tape.sigmoid(logit)


def forward(
    seq: WindowSequence,
    params: ModelParams,
    training: bool = False,
    seed: int | None = None,
    *,
    emb_dropout: float = 0.1,
    hidden_dropout: float = 0.2,
) -> float:
    """Probability of label 1 for one window sequence."""
    tape = Tape(enabled=False)
    rng = np.random.default_rng(seed)
    p = forward_batch(
        tape,
        params,
        make_batch([compile_sequence(seq)]),
        training=training,
        emb_dropout=emb_dropout,
        hidden_dropout=hidden_dropout,
        rng=rng,
    )
    return float(p.data[0, 0])


def batch_loss(tape: Tape, p: Tensor, y) -> Tensor:
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    return tape.scalar_divide(tape.sum(tape.bce(p, y)), p.shape[0])


def toy_problem(seed: int = 0, scale: float = 0.5):
    """Tiny model (2 features, 2 windows per example, d=4, H=8) plus a two-example batch.

    Parameters are redrawn at ``scale`` so every gate sees non-trivial inputs.
    Returns ``(params, batch, labels)``.
    """
    params = ModelParams.init(10, 2, d=4, a=3, d_t=2, hidden_size=8, max_time_buckets=6, seed=seed)
    rng = np.random.default_rng(seed)
    for t in params.tensors():
        t.data = rng.normal(scale=scale, size=t.shape)
    s1 = WindowSequence(
        [
            Window(5, {0: [2, 3, 3], 1: [4, 5]}, [((5, 6), (7,))]),
            Window(0, {1: [8, 9]}, [((2,), (3,))]),
        ]
    )
    s2 = WindowSequence(
        [
            Window(2, {0: [2, 7]}, [((3,), (4, 5)), ((6,), (2,))]),
            Window(1, {1: [3, 6]}, []),
        ]
    )
    return params, make_batch([compile_sequence(s1), compile_sequence(s2)]), np.array([1, 0])


def toy_gradcheck(seed: int = 0, h: float = 1e-5, tol: float = 1e-4):
    """Finite-difference check of mean BCE through the full forward pass."""
    from .ndiff import grad_check

    params, batch, y = toy_problem(seed)
    return grad_check(lambda t: batch_loss(t, forward_batch(t, params, batch), y), params.tensors(), h=h, tol=tol)


# -- estimator -------------------------------------------------------------------------


def _as_sequences(X) -> list[WindowSequence]:
    X = list(X)
    for s in X:
        if not isinstance(s, WindowSequence):
            raise TypeError(f"expected WindowSequence items, got {type(s).__name__}")
    return X


def _infer_sizes(X) -> tuple[int, int]:
    n_tok, n_feat = 2, 1
    for s in X:
        for w in s.windows:
            for f, toks in w.flat_data.items():
                n_feat = max(n_feat, f + 1)
                n_tok = max(n_tok, max(toks) + 1)
            for k, v in w.form_data:
                n_tok = max(n_tok, max(k) + 1, max(v) + 1)
    return n_tok, n_feat


class ReadmissionLSTMClassifier(BaseEstimator, ClassifierMixin):
    """LSTM over pooled 12-hour window vectors with a logistic output.

    ``fit`` takes the featurizer's window output. When ``eval_set`` is given the
    parameters of the epoch with the best validation AUROC are kept.
    """

    def __init__(
        self,
        embedding_dim=32,
        weight_hidden=32,
        time_dim=8,
        hidden_size=128,
        max_time_buckets=512,
        learning_rate=1e-3,
        batch_size=32,
        epochs=6,
        embedding_dropout=0.1,
        hidden_dropout=0.2,
        oversample=None,
        threshold=0.5,
        random_state=0,
    ):
        self.embedding_dim = embedding_dim
        self.weight_hidden = weight_hidden
        self.time_dim = time_dim
        self.hidden_size = hidden_size
        self.max_time_buckets = max_time_buckets
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.embedding_dropout = embedding_dropout
        self.hidden_dropout = hidden_dropout
        self.oversample = oversample
        self.threshold = threshold
        self.random_state = random_state

    def _sizes(self, X, n_tokens, n_features):
        if n_tokens is None:
            n_tokens = getattr(X, "n_tokens", None)
        if n_features is None:
            n_features = getattr(X, "n_features", None)
        if n_tokens is None or n_features is None:
            inf_tok, inf_feat = _infer_sizes(X)
            n_tokens = n_tokens or inf_tok
            n_features = n_features or inf_feat
        return int(n_tokens), int(n_features)

    def fit(self, X, y, eval_set=None, n_tokens=None, n_features=None):
        seqs = _as_sequences(X)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if len(seqs) != y.size:
            raise ValueError(f"X has {len(seqs)} sequences but y has {y.size} labels")
        if np.unique(y).size < 2:
            raise SingleClass("training labels contain a single class")
        n_tokens, n_features = self._sizes(X, n_tokens, n_features)
        self.vocab_digest_ = getattr(X, "vocab_digest", None)
        self.classes_ = np.array([0, 1])
        ss = np.random.SeedSequence(int(self.random_state))
        init_seed, shuffle_seed, drop_seed, over_seed = (
            int(s.generate_state(1)[0]) for s in ss.spawn(4)
        )
        self.params_ = ModelParams.init(
            n_tokens,
            n_features,
            d=self.embedding_dim,
            a=self.weight_hidden,
            d_t=self.time_dim,
            hidden_size=self.hidden_size,
            max_time_buckets=self.max_time_buckets,
            seed=init_seed,
        )
        compiled = [compile_sequence(s) for s in seqs]
        if self.oversample:
            index = np.asarray(oversample_indices(y, float(self.oversample), over_seed))
        else:
            index = np.arange(len(seqs))
        self.train_positive_rate_ = float(y[index].mean())
        self.train_size_ = int(index.size)

        val = None
        if eval_set is not None:
            Xv, yv = eval_set
            yv = np.asarray(yv, dtype=np.int64).reshape(-1)
            val = ([compile_sequence(s) for s in _as_sequences(Xv)], yv)

        opt = Adam(self.params_.tensors(), lr=self.learning_rate)
        shuffle_rng = np.random.default_rng(shuffle_seed)
        drop_rng = np.random.default_rng(drop_seed)
        self.history_ = []
        best = (-np.inf, self.params_.snapshot(), 0)
        for epoch in range(1, int(self.epochs) + 1):
            t0 = time.perf_counter()
            perm = index[shuffle_rng.permutation(index.size)]
            total, count = 0.0, 0
            for b, lo in enumerate(range(0, perm.size, self.batch_size)):
                ids = perm[lo : lo + self.batch_size]
                batch = make_batch([compiled[i] for i in ids])
                tape = Tape()
                p = forward_batch(
                    tape,
                    self.params_,
                    batch,
                    training=True,
                    emb_dropout=self.embedding_dropout,
                    hidden_dropout=self.hidden_dropout,
                    rng=drop_rng,
                )
                loss = batch_loss(tape, p, y[ids])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise Diverged(epoch, b, value)
                tape.backward(loss)
                opt.step()
                opt.zero_grad()
                total += value * ids.size
                count += ids.size
            train_loss = total / max(count, 1)
            val_auc = None
            if val is not None and np.unique(val[1]).size == 2:
                val_auc = auroc(self._predict_compiled(val[0]), val[1])
            wall = time.perf_counter() - t0
            self.history_.append(
                {"epoch": epoch, "train_loss": train_loss, "val_auroc": val_auc, "wall_seconds": wall}
            )
            logger.info(
                "epoch %d train_loss %.6f val_auroc %s wall %.1fs",
                epoch,
                train_loss,
                "n/a" if val_auc is None else f"{val_auc:.4f}",
                wall,
            )
            score = val_auc if val_auc is not None else -np.inf
            if best[2] == 0 or val_auc is None or score > best[0]:
                best = (score, self.params_.snapshot(), epoch)
        self.params_.restore(best[1])
        self.best_epoch_ = best[2]
        self.best_val_auroc_ = None if not np.isfinite(best[0]) else float(best[0])
        return self

    def _predict_compiled(self, compiled, batch_size=None) -> np.ndarray:
        bs = batch_size or max(int(self.batch_size), 64)
        out = []
        for lo in range(0, len(compiled), bs):
            batch = make_batch(compiled[lo : lo + bs])
            p = forward_batch(Tape(enabled=False), self.params_, batch, training=False)
            out.append(p.data[:, 0])
        return np.concatenate(out) if out else np.empty(0)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        digest = getattr(X, "vocab_digest", None)
        if digest is not None and self.vocab_digest_ is not None and digest != self.vocab_digest_:
            raise VocabMismatch("inputs were encoded with a different vocabulary than the model")
        p1 = self._predict_compiled([compile_sequence(s) for s in _as_sequences(X)])
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(np.int64)

    # -- checkpoint -----------------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        p = self.params_
        manifest = {
            "format_version": CKPT_VERSION,
            "dims": {
                "n_tokens": p.token_emb.shape[0],
                "n_features": p.n_features,
                "d": p.d,
                "a": p.form_net.w1.shape[1],
                "d_t": p.d_t,
                "hidden_size": p.hidden_size,
                "max_time_buckets": p.max_time_buckets,
                "input_size": p.input_size,
            },
            "config": self.get_params(),
            "vocab_digest": self.vocab_digest_,
            "best_epoch": self.best_epoch_,
            "best_val_auroc": self.best_val_auroc_,
        }
        write_container(path, CKPT_MAGIC, manifest, [(n, t.data) for n, t in p.named_tensors()])

    @classmethod
    def load(cls, path) -> "ReadmissionLSTMClassifier":
        manifest, arrays = read_container(path, CKPT_MAGIC)
        if manifest.get("format_version") != CKPT_VERSION:
            raise VocabMismatch(f"unsupported checkpoint version {manifest.get('format_version')}")
        model = cls(**manifest["config"])
        dims = manifest["dims"]
        params = ModelParams.init(
            dims["n_tokens"],
            dims["n_features"],
            d=dims["d"],
            a=dims["a"],
            d_t=dims["d_t"],
            hidden_size=dims["hidden_size"],
            max_time_buckets=dims["max_time_buckets"],
        )
        for name, t in params.named_tensors():
            t.data = arrays[name].copy()
        model.params_ = params
        model.classes_ = np.array([0, 1])
        model.vocab_digest_ = manifest["vocab_digest"]
        model.best_epoch_ = manifest["best_epoch"]
        model.best_val_auroc_ = manifest["best_val_auroc"]
        model.history_ = []
        return model

    def copy_params(self) -> ModelParams:
        return copy.deepcopy(self.params_)


def predict(checkpoint, corpus, example_ids=None, vocab_digest=None) -> list[tuple[str, float]]:
    """(example id, probability) per encoded example, in input order."""
    model = checkpoint if isinstance(checkpoint, ReadmissionLSTMClassifier) else ReadmissionLSTMClassifier.load(checkpoint)
    digest = vocab_digest or getattr(corpus, "vocab_digest", None)
    if model.vocab_digest_ is not None and digest is not None and digest != model.vocab_digest_:
        raise VocabMismatch("vocabulary digest differs from the checkpoint's")
    seqs = list(corpus)
    if not seqs:
        return []
    ids = list(example_ids) if example_ids is not None else [str(i) for i in range(len(seqs))]
    probs = model._predict_compiled([compile_sequence(s) for s in _as_sequences(seqs)])
    return list(zip(ids, (float(p) for p in probs)))
