"""Random-instance gradient checks for every tape primitive.

Each case maps a fresh tape to a scalar by contracting the primitive's output
with a fixed random weight, so every output coordinate contributes.
"""
from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .check import GradCheckReport, grad_check
from .tape import Tape, Tensor

Case = tuple[Callable[[Tape], Tensor], list[Tensor]]


def _p(rng, *shape, low=None, high=None, name=None) -> Tensor:
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True, name=name)


def _contract(tape: Tape, out: Tensor, weight: np.ndarray) -> Tensor:
    return tape.sum(tape.mul(out, weight))


def _unary(rng, op: Callable[[Tape, Tensor], Tensor], shape, **kw) -> Case:
    a = _p(rng, *shape, name="a", **kw)
    r = rng.normal(size=op(Tape(enabled=False), a).shape)
    return (lambda t: _contract(t, op(t, a), r)), [a]


def _binary(rng, op, sa, sb, kb=None) -> Case:
    a = _p(rng, *sa, name="a")
    b = _p(rng, *sb, name="b", **(kb or {}))
    r = rng.normal(size=op(Tape(enabled=False), a, b).shape)
    return (lambda t: _contract(t, op(t, a, b), r)), [a, b]


def _lstm_case(rng) -> Case:
    B, H = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    xw = _p(rng, B, 4 * H, name="xw")
    h = _p(rng, B, H, name="h")
    c = _p(rng, B, H, name="c")
    w = _p(rng, H, 4 * H, name="w_h")
    mask = (rng.random(B) < 0.7).astype(float)
    r1, r2 = rng.normal(size=(B, H)), rng.normal(size=(B, H))

    def f(t):
        h2, c2 = t.lstm_cell(xw, h, c, w, mask)
        return t.add(_contract(t, h2, r1), _contract(t, c2, r2))

    return f, [xw, h, c, w]


def _bce_case(rng) -> Case:
    n = int(rng.integers(1, 6))
    p = _p(rng, n, 1, low=0.1, high=0.9, name="p")
    y = (rng.random((n, 1)) < 0.5).astype(float)
    return (lambda t: t.sum(t.bce(p, y))), [p]


def _segment_case(rng) -> Case:
    n, k = int(rng.integers(2, 7)), int(rng.integers(1, 4))
    ids = rng.integers(0, k, size=n)
    return _unary(rng, lambda t, a: t.segment_sum(a, ids, k), (n, 3))


def _embedding_case(rng) -> Case:
    ids = rng.integers(0, 5, size=int(rng.integers(1, 8)))  # repeats exercise accumulation
    return _unary(rng, lambda t, a: t.embedding_lookup(a, ids), (5, 3))


def _concat_case(rng) -> Case:
    a, b = _p(rng, 3, 2, name="a"), _p(rng, 3, 4, name="b")
    c = _p(rng, 2, 6, name="c")
    r = rng.normal(size=(5, 6))
    return (lambda t: _contract(t, t.concat([t.concat([a, b], axis=1), c], axis=0), r)), [a, b, c]


def _dropout_case(rng) -> Case:
    seed = int(rng.integers(0, 2**31))
    return _unary(rng, lambda t, a: t.dropout(a, 0.3, seed, training=True), (4, 5))


def _cases(rng) -> dict[str, Callable[[], Case]]:
    return {
        "matmul": lambda: _binary(rng, lambda t, a, b: t.matmul(a, b), (3, 4), (4, 2)),
        "add": lambda: _binary(rng, lambda t, a, b: t.add(a, b), (3, 4), (3, 4)),
        "add_bias": lambda: _binary(rng, lambda t, a, b: t.add(a, b), (3, 4), (4,)),
        "add_scalar": lambda: _unary(rng, lambda t, a: t.add(a, 0.7), (2, 3)),
        "sub": lambda: _binary(rng, lambda t, a, b: t.sub(a, b), (3, 4), (3, 4)),
        "mul": lambda: _binary(rng, lambda t, a, b: t.mul(a, b), (3, 4), (3, 4)),
        "mul_column": lambda: _binary(rng, lambda t, a, b: t.mul(a, b), (3, 4), (3, 1)),
        "div": lambda: _binary(rng, lambda t, a, b: t.div(a, b), (3, 4), (3, 4), {"low": 0.5, "high": 2.0}),
        "div_column": lambda: _binary(rng, lambda t, a, b: t.div(a, b), (3, 4), (3, 1), {"low": 0.5, "high": 2.0}),
        "scalar_divide": lambda: _unary(rng, lambda t, a: t.scalar_divide(a, 3.0), (3, 2)),
        "concat": lambda: _concat_case(rng),
        "sigmoid": lambda: _unary(rng, lambda t, a: t.sigmoid(a), (3, 4)),
        "tanh": lambda: _unary(rng, lambda t, a: t.tanh(a), (3, 4)),
        "sum": lambda: _unary(rng, lambda t, a: t.sum(a), (3, 4)),
        "sum_axis": lambda: _unary(rng, lambda t, a: t.sum(a, axis=0), (3, 4)),
        "segment_sum": lambda: _segment_case(rng),
        "embedding_lookup": lambda: _embedding_case(rng),
        "reshape": lambda: _unary(rng, lambda t, a: t.reshape(a, (2, 6)), (3, 4)),
        "dropout": lambda: _dropout_case(rng),
        "bce": lambda: _bce_case(rng),
        "lstm_cell": lambda: _lstm_case(rng),
    }


PRIMITIVES = tuple(_cases(np.random.default_rng(0)))


def primitive_instances(name: str, n_instances: int = 10, seed: int = 0) -> Iterator[Case]:
    rng = np.random.default_rng([seed, PRIMITIVES.index(name)])
    make = _cases(rng)[name]
    for _ in range(n_instances):
        yield make()


def run_primitive_suite(
    n_instances: int = 10, seed: int = 0, h: float = 1e-5, tol: float = 1e-4
) -> list[tuple[str, GradCheckReport]]:
    """Worst report per primitive over ``n_instances`` random instances."""
    out = []
    for name in PRIMITIVES:
        worst = None
        for f, params in primitive_instances(name, n_instances, seed):
            rep = grad_check(f, params, h=h, tol=tol)
            if worst is None or rep.max_rel_error > worst.max_rel_error:
                n = rep.n_checked + (worst.n_checked if worst else 0)
                worst = rep
                worst.n_checked = n
            else:
                worst.n_checked += rep.n_checked
        out.append((name, worst))
    return out
