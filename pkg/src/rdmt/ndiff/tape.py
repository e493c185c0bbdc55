"""Dense float64 tensors and a reverse-mode tape.

A :class:`Tape` records every primitive applied through it, in execution
order; :meth:`Tape.backward` replays the records in reverse and accumulates
gradients into ``Tensor.grad``. Leaf tensors (parameters) keep accumulating
across tapes until :meth:`Tensor.zero_grad`.

Broadcasting is limited to: bias rows (``add`` with a 1-D right operand),
per-row scaling (``mul``/``div`` with an ``(n, 1)`` right operand) and
Python-float constants.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    """Records primitives for one forward pass.

    With ``enabled=False`` nothing is recorded; use it for inference.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._records: list[tuple[tuple[Tensor, ...], tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def _emit(self, data, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
        needs = self.enabled and any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=needs)
        if needs:
            self._records.append(((out,), tuple(inputs), backward))
        return out

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        _accumulate(loss, np.ones_like(loss.data))
        for outputs, inputs, fn in reversed(self._records):
            gouts = [o.grad if o.grad is not None else np.zeros_like(o.data) for o in outputs]
            if all(o.grad is None for o in outputs):
                continue
            grads = fn(*gouts)
            for t, g in zip(inputs, grads):
                if g is not None and t.requires_grad:
                    _accumulate(t, g)
        self._records.clear()

    # -- primitives ---------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
        A, B = a.data, b.data
        return self._emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))

    def add(self, a: Tensor, b) -> Tensor:
        if not isinstance(b, Tensor):
            c = float(b)
            return self._emit(a.data + c, (a,), lambda g: (g,))
        if a.shape == b.shape:
            return self._emit(a.data + b.data, (a, b), lambda g: (g, g))
        if b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
            return self._emit(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
        raise ShapeMismatch(f"add: {a.shape} + {b.shape}")

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatch(f"sub: {a.shape} - {b.shape}")
        return self._emit(a.data - b.data, (a, b), lambda g: (g, -g))

    def mul(self, a: Tensor, b) -> Tensor:
        if not isinstance(b, Tensor):
            c = np.asarray(b, dtype=np.float64)
            if c.ndim and c.shape != a.shape and c.shape != (a.shape[0], 1):
                raise ShapeMismatch(f"mul: {a.shape} * constant {c.shape}")
            return self._emit(a.data * c, (a,), lambda g: (g * c,))
        A, B = a.data, b.data
        if a.shape == b.shape:
            return self._emit(A * B, (a, b), lambda g: (g * B, g * A))
        if B.ndim == 2 and A.ndim == 2 and B.shape == (A.shape[0], 1):
            return self._emit(
                A * B, (a, b), lambda g: (g * B, (g * A).sum(axis=1, keepdims=True))
            )
        raise ShapeMismatch(f"mul: {a.shape} * {b.shape}")

    def div(self, a: Tensor, b: Tensor) -> Tensor:
        A, B = a.data, b.data
        if a.shape == b.shape:
            return self._emit(A / B, (a, b), lambda g: (g / B, -g * A / (B * B)))
        if B.ndim == 2 and A.ndim == 2 and B.shape == (A.shape[0], 1):
            return self._emit(
                A / B,
                (a, b),
                lambda g: (g / B, -(g * A).sum(axis=1, keepdims=True) / (B * B)),
            )
        raise ShapeMismatch(f"div: {a.shape} / {b.shape}")

    def scalar_divide(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._emit(a.data / c, (a,), lambda g: (g / c,))

    def concat(self, parts: Sequence[Tensor], axis: int = -1) -> Tensor:
        parts = list(parts)
        ndim = parts[0].data.ndim
        ax = axis % ndim
        for p in parts[1:]:
            if p.data.ndim != ndim or any(
                p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != ax
            ):
                raise ShapeMismatch(f"concat: {parts[0].shape} with {p.shape} on axis {axis}")
        sizes = [p.shape[ax] for p in parts]
        cuts = np.cumsum(sizes)[:-1]

        def backward(g):
            return tuple(np.split(g, cuts, axis=ax))

        return self._emit(np.concatenate([p.data for p in parts], axis=ax), parts, backward)

    def sigmoid(self, a: Tensor) -> Tensor:
        s = _sigmoid(a.data)
        return self._emit(s, (a,), lambda g: (g * s * (1.0 - s),))

    def tanh(self, a: Tensor) -> Tensor:
        t = np.tanh(a.data)
        return self._emit(t, (a,), lambda g: (g * (1.0 - t * t),))

    def sum(self, a: Tensor, axis: int | None = None) -> Tensor:
        shape = a.shape
        if axis is None:
            return self._emit(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, shape),))
        ax = axis % a.data.ndim
        out = a.data.sum(axis=ax)
        return self._emit(
            out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape),)
        )

    def segment_sum(self, a: Tensor, segment_ids, n_segments: int) -> Tensor:
        """Sum rows of ``a`` into ``n_segments`` buckets given by ``segment_ids``."""
        ids = np.asarray(segment_ids, dtype=np.intp)
        if ids.shape != (a.shape[0],):
            raise ShapeMismatch(f"segment_sum: ids {ids.shape} for rows of {a.shape}")
        out = np.zeros((n_segments,) + a.shape[1:])
        np.add.at(out, ids, a.data)
        return self._emit(out, (a,), lambda g: (g[ids],))

    def embedding_lookup(self, table: Tensor, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        if table.data.ndim != 2 or ids.ndim != 1:
            raise ShapeMismatch(f"embedding_lookup: table {table.shape}, ids {ids.shape}")
        shape = table.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, ids, g)
            return (full,)

        return self._emit(table.data[ids], (table,), backward)

    def reshape(self, a: Tensor, shape) -> Tensor:
        old = a.shape
        return self._emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def dropout(self, a: Tensor, rate: float, rng, training: bool) -> Tensor:
        """Inverted dropout; the exact input tensor is returned when inactive.

        ``rng`` is a numpy Generator or an integer seed.
        """
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        if not training or rate == 0:
            return a
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
        return self._emit(a.data * keep, (a,), lambda g: (g * keep,))

    def bce(self, p: Tensor, y, eps: float = 1e-12) -> Tensor:
        """Elementwise -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps]."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != p.shape:
            raise ShapeMismatch(f"bce: probabilities {p.shape}, labels {y.shape}")
        q = np.clip(p.data, eps, 1.0 - eps)
        loss = -(y * np.log(q) + (1.0 - y) * np.log1p(-q))
        return self._emit(loss, (p,), lambda g: (g * (q - y) / (q * (1.0 - q)),))

    def lstm_cell(
        self,
        xw: Tensor,
        h_prev: Tensor,
        c_prev: Tensor,
        w_h: Tensor,
        mask=None,
    ) -> tuple[Tensor, Tensor]:
        """One LSTM step from precomputed input projections.

        ``xw`` is ``x @ W_x + b`` with gate blocks ordered [i, f, o, g]. Rows whose
        ``mask`` entry is 0 pass ``h_prev``/``c_prev`` through unchanged.
        """
        B, H4 = xw.shape
        H = H4 // 4
        if H4 != 4 * H or h_prev.shape != (B, H) or c_prev.shape != (B, H) or w_h.shape != (H, H4):
            raise ShapeMismatch(
                f"lstm_cell: xw {xw.shape}, h {h_prev.shape}, c {c_prev.shape}, W_h {w_h.shape}"
            )
        hp, cp, W = h_prev.data, c_prev.data, w_h.data
        a = xw.data + hp @ W
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        o = _sigmoid(a[:, 2 * H : 3 * H])
        g = np.tanh(a[:, 3 * H :])
        c = f * cp + i * g
        tc = np.tanh(c)
        h = o * tc
        if mask is not None:
            m = np.asarray(mask, dtype=np.float64).reshape(B, 1)
            h_out = m * h + (1.0 - m) * hp
            c_out = m * c + (1.0 - m) * cp
        else:
            m = None
            h_out, c_out = h, c

        inputs = (xw, h_prev, c_prev, w_h)
        needs = self.enabled and any(t.requires_grad for t in inputs)
        h_t = Tensor(h_out, requires_grad=needs)
        c_t = Tensor(c_out, requires_grad=needs)
        if not needs:
            return h_t, c_t

        def backward(dh_out, dc_out):
            if m is not None:
                dh = m * dh_out
                dc_in = m * dc_out
                dhp_direct = (1.0 - m) * dh_out
                dcp_direct = (1.0 - m) * dc_out
            else:
                dh, dc_in = dh_out, dc_out
                dhp_direct = dcp_direct = 0.0
            dc = dc_in + dh * o * (1.0 - tc * tc)
            da = np.empty_like(a)
            da[:, :H] = dc * g * i * (1.0 - i)
            da[:, H : 2 * H] = dc * cp * f * (1.0 - f)
            da[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
            da[:, 3 * H :] = dc * i * (1.0 - g * g)
            return (
                da,
                da @ W.T + dhp_direct,
                dc * f + dcp_direct,
                hp.T @ da,
            )

        self._records.append(((h_t, c_t), inputs, backward))
        return h_t, c_t
