"""Self-check suites: gradients, KL and product-of-experts oracles.

Each check yields a CheckResult carrying its measured value, its tolerance
and enough of its inputs to reproduce a failure.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.integrate import trapezoid

from . import tensor as T
from .fusion import FusionKind
from .gaussian import DiagonalGaussian, kl_monte_carlo_stats, kl_to_standard, poe_fuse
from .gradcheck import finite_difference_check
from .model import MIBModel
from .networks import MODALITIES, ModalityBundle
from .objectives import VARIANT_LOSSES, MibConfig, Variant
from .tensor import Parameter

SUITES = ("grad", "kl", "poe")
GRAD_TOL = 1e-4
LOSS_CHECK_EPS = 1e-5
OP_CHECK_EPS = 1e-5
# composed-loss configurations are redrawn until every kink argument is this far from its kink
KINK_MARGIN = 1e-3
MAX_REDRAWS = 50
KL_SAMPLES = 100_000
KL_MAX_SE = 3.0
POE_TOL = 1e-6


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool
    inputs: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} [{self.suite}] {self.name}: {self.value:.3e} (tol {self.tolerance:.1e})"


# -- fault injection --------------------------------------------------------
@contextlib.contextmanager
def inject_fault(op: str, scale: float = 1.05) -> Iterator[None]:
    """Scale every gradient produced by tensor op ``op`` while active."""
    original = getattr(T, op, None)
    if not callable(original) or op not in OP_CASES:
        raise KeyError(f"no differentiable op named {op!r}")

    def faulty(*args, **kwargs):
        out = original(*args, **kwargs)
        inner = out._backward
        if inner is not None:
            out._backward = lambda g: tuple((p, pg * scale) for p, pg in inner(g))
        return out

    setattr(T, op, faulty)
    try:
        yield
    finally:
        setattr(T, op, original)


# -- per-op gradient checks -------------------------------------------------
def _away_from(rng, shape, kinks=(0.0,), margin=0.05, low=-2.0, high=2.0):
    x = rng.uniform(low, high, size=shape)
    for k in kinks:
        near = np.abs(x - k) < margin
        x = np.where(near, k + np.sign(x - k + 1e-300) * margin * 2, x)
    return x


def _shape(rng, ndim=2):
    return tuple(int(s) for s in rng.integers(1, 5, size=ndim))


def _binary(fn, positive_b=False):
    def make(rng):
        s = _shape(rng)
        b = rng.uniform(0.5, 2.0, s) * rng.choice([-1, 1], s) if positive_b else rng.normal(size=s)
        return [rng.normal(size=s), b], lambda a, b_: fn(a, b_)
    return make


def _unary(fn, sampler=None):
    def make(rng):
        s = _shape(rng)
        x = sampler(rng, s) if sampler else rng.normal(size=s)
        return [x], fn
    return make


def _matmul_case(rng):
    n, k, m = (int(v) for v in rng.integers(1, 5, size=3))
    return [rng.normal(size=(n, k)), rng.normal(size=(k, m))], lambda a, b: T.matmul(a, b)


def _linear_case(rng):
    n, i, o = (int(v) for v in rng.integers(1, 5, size=3))
    return ([rng.normal(size=(o, i)), rng.normal(size=o), rng.normal(size=(n, i))],
            lambda W, b, x: T.linear_forward(W, b, x))


def _reduce_case(fn):
    def make(rng):
        s = _shape(rng, 3)
        axis = int(rng.integers(-1, 3))
        axis = None if axis == -1 else axis
        return [rng.normal(size=s)], lambda a: fn(a, axis)
    return make


def _take_case(rng):
    s = _shape(rng)
    idx = rng.integers(0, s[0], size=int(rng.integers(1, 6)))
    return [rng.normal(size=s)], lambda a: T.take(a, idx)


def _concat_case(fn):
    def make(rng):
        s = _shape(rng)
        k = int(rng.integers(1, 4))
        return [rng.normal(size=s) for _ in range(k)], lambda *xs: fn(list(xs))
    return make


def _tile_case(rng):
    s = _shape(rng)
    reps = int(rng.integers(1, 4))
    return [rng.normal(size=s)], lambda a: T.tile_rows(a, reps)


OP_CASES: dict[str, Callable] = {
    "add": _binary(lambda a, b: T.add(a, b)),
    "sub": _binary(lambda a, b: T.sub(a, b)),
    "mul": _binary(lambda a, b: T.mul(a, b)),
    "div": _binary(lambda a, b: T.div(a, b), positive_b=True),
    "power": _unary(lambda a: T.power(a, 1.7), lambda r, s: r.uniform(0.3, 2.0, s)),
    "matmul": _matmul_case,
    "exp": _unary(lambda a: T.exp(a)),
    "log": _unary(lambda a: T.log(a), lambda r, s: r.uniform(0.3, 3.0, s)),
    "sqrt": _unary(lambda a: T.sqrt(a), lambda r, s: r.uniform(0.3, 3.0, s)),
    "tabs": _unary(lambda a: T.tabs(a), _away_from),
    "relu": _unary(lambda a: T.relu(a), _away_from),
    "softplus": _unary(lambda a: T.softplus(a)),
    "sigmoid": _unary(lambda a: T.sigmoid(a)),
    "softmax": _unary(lambda a: T.softmax(a, axis=-1)),
    "clip": _unary(lambda a: T.clip(a, -0.5, 0.5),
                   lambda r, s: _away_from(r, s, kinks=(-0.5, 0.5), low=-1.0, high=1.0)),
    "tsum": _reduce_case(lambda a, ax: T.tsum(a, ax)),
    "tmean": _reduce_case(lambda a, ax: T.tmean(a, ax)),
    "reshape": _unary(lambda a: T.reshape(a, (-1,))),
    "transpose": _unary(lambda a: T.transpose(a)),
    "take": _take_case,
    "concat": _concat_case(lambda xs: T.concat(xs, axis=-1)),
    "stack": _concat_case(lambda xs: T.stack(xs, axis=0)),
    "tile_rows": _tile_case,
    "linear_forward": _linear_case,
}


def op_checks(n_cases: int = 100, seed: int = 0, ops=None) -> list[CheckResult]:
    """Finite-difference check of each op on ``n_cases`` random shapes."""
    results = []
    for op in ops or OP_CASES:
        worst, worst_inputs = 0.0, {}
        for case in range(n_cases):
            rng = np.random.default_rng([seed, case, sum(map(ord, op))])
            arrays, fn = OP_CASES[op](rng)
            params = [Parameter(a, f"x{i}") for i, a in enumerate(arrays)]
            out_shape = fn(*[T.as_tensor(a) for a in arrays]).shape
            weights = rng.normal(size=out_shape)

            def loss():
                return T.tsum(T.mul(fn(*params), weights))

            err = finite_difference_check(loss, params, eps=OP_CHECK_EPS)
            if err >= worst:
                worst = err
                worst_inputs = {"case": case, "shapes": [list(a.shape) for a in arrays]}
        results.append(CheckResult("grad", f"op {op}", worst, GRAD_TOL, worst < GRAD_TOL,
                                   worst_inputs))
    return results


# -- composed-loss gradient checks -----------------------------------------
def legal_fusions(variant: Variant) -> list[FusionKind]:
    return [k for k in FusionKind if k != FusionKind.POE or variant == Variant.L]


@contextlib.contextmanager
def _kink_monitor() -> Iterator[list[float]]:
    """Record, for every relu/abs/clip call, the distance of its argument to the nearest kink."""
    seen: list[float] = []
    relu, tabs, clip = T.relu, T.tabs, T.clip

    def spy_relu(x):
        x = T.as_tensor(x)
        seen.append(float(np.abs(x.data).min()))
        return relu(x)

    def spy_tabs(x):
        x = T.as_tensor(x)
        seen.append(float(np.abs(x.data).min()))
        return tabs(x)

    def spy_clip(x, lo, hi):
        x = T.as_tensor(x)
        seen.append(float(min(np.abs(x.data - lo).min(), np.abs(x.data - hi).min())))
        return clip(x, lo, hi)

    T.relu, T.tabs, T.clip = spy_relu, spy_tabs, spy_clip
    try:
        yield seen
    finally:
        T.relu, T.tabs, T.clip = relu, tabs, clip


def kink_distance(loss_fn: Callable) -> float:
    """Smallest distance of any relu/abs/clip argument to its kink in one forward pass."""
    with _kink_monitor() as seen, T.no_grad():
        loss_fn()
    return min(seen, default=np.inf)


def random_loss_case(task: str, variant: Variant, fusion: FusionKind, index: int):
    """A small random model, one example and frozen noise; returns (loss_fn, params, inputs).

    Draws are repeated until the loss is differentiable in a neighbourhood
    of the parameters (no relu/abs/clip argument within KINK_MARGIN of its
    kink), where central differences are a valid oracle.
    """
    rng = np.random.default_rng([index, ord(variant.value), sum(map(ord, fusion.value)),
                                 sum(map(ord, task))])
    for redraw in range(MAX_REDRAWS):
        loss_fn, params, inputs = _draw_loss_case(rng, task, variant, fusion, index)
        if kink_distance(loss_fn) > KINK_MARGIN:
            inputs["redraws"] = redraw
            return loss_fn, params, inputs
    raise RuntimeError(f"no kink-free configuration for {inputs}")


def _draw_loss_case(rng, task, variant, fusion, index):
    dims = {m: int(rng.integers(2, 4)) for m in MODALITIES}
    steps = int(rng.integers(1, 4))
    # one example: averaging MAE over rows can cancel partials to exactly zero
    bundle = ModalityBundle(*(rng.normal(size=(1, steps, dims[m])) for m in MODALITIES))
    y = rng.uniform(-3, 3, 1) if task == "regression" else (rng.random(1) < 0.5).astype(float)
    cfg = MibConfig(variant=variant, fusion=fusion, task=task,
                    beta=float(10 ** rng.uniform(-3, 0)), d_enc=int(rng.integers(2, 4)), d_z=2,
                    hidden=int(rng.integers(2, 4)))
    model_seed = int(rng.integers(1 << 31))
    model = MIBModel(cfg, dims, seed=model_seed)
    noise_seed = int(rng.integers(1 << 31))
    loss = VARIANT_LOSSES[variant]

    def loss_fn():
        return loss((bundle, y), model, None, np.random.default_rng(noise_seed)).objective

    inputs = {"task": task, "variant": variant.value, "fusion": fusion.value, "index": index,
              "dims": dims, "T": steps, "beta": cfg.beta, "d_enc": cfg.d_enc,
              "hidden": cfg.hidden, "y": y.tolist(), "model_seed": model_seed,
              "noise_seed": noise_seed}
    return loss_fn, model.parameters(), inputs


def loss_checks(n_configs: int = 20, eps: float = LOSS_CHECK_EPS,
                tasks=("regression", "binary")) -> list[CheckResult]:
    results = []
    for task in tasks:
        for variant in (Variant.E, Variant.L, Variant.C):
            for fusion in legal_fusions(variant):
                worst, worst_inputs = -1.0, {}
                for index in range(n_configs):
                    loss_fn, params, inputs = random_loss_case(task, variant, fusion, index)
                    err = finite_difference_check(loss_fn, params, eps=eps)
                    if err > worst:
                        worst, worst_inputs = err, inputs
                name = f"loss {variant.value}-MIB/{fusion.value}/{task}"
                results.append(CheckResult("grad", name, worst, GRAD_TOL, worst < GRAD_TOL,
                                           worst_inputs))
    return results


def grad_suite(seed: int = 0) -> list[CheckResult]:
    return op_checks(seed=seed) + loss_checks()


# -- KL oracle --------------------------------------------------------------
def random_gaussian(rng: np.random.Generator, dim: int | None = None) -> DiagonalGaussian:
    dim = dim or int(rng.integers(1, 6))
    return DiagonalGaussian(rng.uniform(-3.0, 3.0, dim), rng.uniform(0.1, 3.0, dim))


def kl_suite(seed: int = 0, n_cases: int = 20, n_samples: int = KL_SAMPLES) -> list[CheckResult]:
    """Analytic KL vs a Monte Carlo estimate; discrepancy measured in standard errors."""
    rng = np.random.default_rng(seed)
    results = []
    for case in range(n_cases):
        g = random_gaussian(rng)
        analytic = kl_to_standard(g).item()
        mc, se = kl_monte_carlo_stats(g, n_samples, rng)
        z = abs(analytic - mc) / se
        results.append(CheckResult(
            "kl", f"case {case} (dim {g.dim})", z, KL_MAX_SE, z < KL_MAX_SE,
            {"mean": g.mean.data.tolist(), "std": g.std.data.tolist(), "analytic": analytic,
             "monte_carlo": mc, "standard_error": se}))
    return results


# -- PoE oracle -------------------------------------------------------------
def grid_product_moments(means, variances, half_width: float = 12.0,
                         points: int = 40001) -> tuple[float, float]:
    """Mean and variance of the normalized product of N(0,1) and the given 1-D normals.

    Trapezoid sums of the unnormalized product density on a uniform grid
    centred on its mode.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)

    def log_density(z):
        lp = -0.5 * z * z
        for mu, var in zip(means, variances):
            lp = lp - 0.5 * (z - mu) ** 2 / var
        return lp

    coarse = np.linspace(-half_width, half_width, points)
    centre = coarse[np.argmax(log_density(coarse))]
    z = np.linspace(centre - half_width, centre + half_width, points)
    lp = log_density(z)
    w = np.exp(lp - lp.max())
    z0 = trapezoid(w, z)
    mean = trapezoid(z * w, z) / z0
    var = trapezoid((z - mean) ** 2 * w, z) / z0
    return float(mean), float(var)


def poe_suite(seed: int = 0, n_cases: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for case in range(n_cases):
        k = int(rng.integers(1, 4))
        dim = int(rng.integers(1, 4))
        experts = [random_gaussian(rng, dim) for _ in range(k)]
        fused = poe_fuse(experts)
        err = 0.0
        for j in range(dim):
            mean, var = grid_product_moments([e.mean.data[j] for e in experts],
                                             [e.var.data[j] for e in experts])
            err = max(err, abs(mean - fused.mean.data[j]), abs(var - fused.var.data[j]))
        results.append(CheckResult(
            "poe", f"case {case} ({k} experts, dim {dim})", err, POE_TOL, err < POE_TOL,
            {"means": [e.mean.data.tolist() for e in experts],
             "stds": [e.std.data.tolist() for e in experts]}))
    return results


def run_suite(name: str, seed: int = 0) -> tuple[list[CheckResult], float]:
    """Run ``grad``, ``kl``, ``poe`` or ``all``; returns results and wall time in seconds."""
    start = time.perf_counter()
    if name == "all":
        results = []
        for s in SUITES:
            results += run_suite(s, seed)[0]
    elif name == "grad":
        results = grad_suite(seed)
    elif name == "kl":
        results = kl_suite(seed)
    elif name == "poe":
        results = poe_suite(seed)
    else:
        raise KeyError(f"unknown suite {name!r}")
    return results, time.perf_counter() - start
