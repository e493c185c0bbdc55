"""Central-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import NonFinite
from .tape import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    per_param: dict[str, float] = field(default_factory=dict)
    worst: tuple[str, int, float, float] | None = None  # (param, flat index, analytic, numeric)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_error:.3e} (tol {self.tol:g}, {self.n_checked} coords)"


def _scalar(f: Callable[[Tape], Tensor], tape: Tape) -> tuple[Tensor, float]:
    out = f(tape)
    value = float(np.asarray(out.data).reshape(-1)[0]) if out.data.size == 1 else None
    if value is None:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    if not np.isfinite(value):
        raise NonFinite(f"function value is {value}")
    return out, value


def grad_check(
    f: Callable[[Tape], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    *,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    ``f`` receives a fresh :class:`Tape` and must be deterministic. Relative
    error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. With
    ``max_coords`` only that many coordinates per parameter are sampled.
    """
    for p in params:
        p.zero_grad()
    tape = Tape()
    out, _ = _scalar(f, tape)
    tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_coord = None
    n = 0
    per_param: dict[str, float] = {}
    for k, (p, a) in enumerate(zip(params, analytic)):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a_flat = a.reshape(-1)
        param_worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            _, fp = _scalar(f, Tape(enabled=False))
            flat[idx] = orig - h
            _, fm = _scalar(f, Tape(enabled=False))
            flat[idx] = orig
            num = (fp - fm) / (2.0 * h)
            ana = a_flat[idx]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if err > param_worst:
                param_worst = err
                if err > worst:
                    worst = err
                    worst_coord = (p.name or f"param{k}", int(idx), float(ana), float(num))
            n += 1
        per_param[p.name or f"param{k}"] = param_worst
    return GradCheckReport(worst, tol, n, per_param, worst_coord)
