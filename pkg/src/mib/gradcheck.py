"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, no_grad, zero_grads


def analytic_grads(loss_fn: Callable[[], Tensor], params: Sequence[Parameter]) -> list[np.ndarray]:
    zero_grads(params)
    loss_fn().backward()
    return [p.grad.copy() for p in params]


def numeric_grads(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                  eps: float = 1e-5) -> list[np.ndarray]:
    out = []
    with no_grad():
        for p in params:
            num = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            nflat = num.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_fn().item()
                flat[i] = orig - eps
                fm = loss_fn().item()
                flat[i] = orig
                nflat[i] = (fp - fm) / (2.0 * eps)
            out.append(num)
    return out


def relative_errors(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> np.ndarray:
    a = np.concatenate([g.reshape(-1) for g in analytic])
    n = np.concatenate([g.reshape(-1) for g in numeric])
    return np.abs(a - n) / np.maximum(1e-8, np.abs(n))


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    analytic: Sequence[np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be deterministic: any sampling noise has to be frozen,
    e.g. by building a fresh seeded generator inside it.  ``analytic`` lets a
    caller substitute gradients (used for fault injection).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    if analytic is None:
        analytic = analytic_grads(loss_fn, params)
    numeric = numeric_grads(loss_fn, params, eps)
    errs = relative_errors(analytic, numeric)
    return float(errs.max()) if errs.size else 0.0
