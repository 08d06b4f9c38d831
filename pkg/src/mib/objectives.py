"""Likelihood terms, the E/L/C-MIB losses and the alternative information constraints.

All losses are returned in minimization orientation: mean negative
log-likelihood plus beta times the constraint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, InputError
from .fusion import FusionKind
from .gaussian import DiagonalGaussian, kl_to_standard
from .networks import MODALITIES, TASKS
from .tensor import Tensor

if TYPE_CHECKING:
    from .model import ForwardTrace, MIBModel

PROB_CLAMP = 1e-7
_TINY = 1e-12


class Variant(str, enum.Enum):
    E = "E"
    L = "L"
    C = "C"
    B = "B"  # E-MIB with the constraint removed

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        text = str(value).upper().replace("-MIB", "")
        try:
            return cls(text)
        except ValueError:
            raise ConfigurationError(f"unknown variant {value!r} (expected E, L, C or B)")


class Constraint(str, enum.Enum):
    KL = "kl"
    MMD = "mmd"
    CORAL = "coral"
    ORTHOGONAL = "orthogonal"
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "Constraint":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unknown constraint {value!r} (expected one of {names})")


@dataclass(frozen=True)
class MibConfig:
    """Objective and architecture settings for one model.

    ``modalities`` selects a sub-system (e.g. ("a", "l")); ``ib_off`` lists
    modalities whose unimodal constraint is dropped from the loss while their
    likelihood term is kept.  ``unimodal_heads=False`` turns C-MIB's unimodal
    stage into the identity: each unimodal latent is its encoding and no
    unimodal likelihood or constraint terms are added.
    """

    variant: Variant = Variant.C
    beta: float = 1e-3
    fusion: FusionKind = FusionKind.CONCAT
    task: str = "regression"
    constraint: Constraint = Constraint.KL
    mc_samples: int = 1
    n_classes: int = 2
    modalities: tuple[str, ...] = MODALITIES
    ib_off: tuple[str, ...] = ()
    unimodal_heads: bool = True
    d_enc: int = 32
    d_z: int = 16
    hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "fusion", FusionKind.parse(self.fusion))
        object.__setattr__(self, "constraint", Constraint.parse(self.constraint))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "ib_off", tuple(self.ib_off))
        self.validate()

    def validate(self) -> None:
        if not self.beta >= 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.mc_samples < 1:
            raise ConfigurationError("mc_samples must be >= 1")
        if self.task == "multiclass" and self.n_classes < 2:
            raise ConfigurationError("n_classes must be >= 2")
        if not self.modalities:
            raise ConfigurationError("modalities must name at least one modality")
        if any(m not in MODALITIES for m in self.modalities + self.ib_off):
            raise ConfigurationError(f"modalities must be drawn from {MODALITIES}")
        if list(self.modalities) != [m for m in MODALITIES if m in self.modalities]:
            raise ConfigurationError("modalities must be distinct and in (a, v, l) order")
        if min(self.d_enc, self.d_z, self.hidden) < 1:
            raise ConfigurationError("d_enc, d_z and hidden must be positive")
        if self.fusion == FusionKind.POE and self.variant != Variant.L:
            raise ConfigurationError(
                f"PoE fusion is only defined for the L variant, not {self.variant.value}"
            )
        if self.variant == Variant.L and not self.unimodal_heads:
            raise ConfigurationError("L-MIB requires unimodal heads")

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.variant == Variant.B else float(self.beta)

    @property
    def has_unimodal_stage(self) -> bool:
        return self.variant in (Variant.L, Variant.C) and self.unimodal_heads

    @property
    def has_multimodal_head(self) -> bool:
        return self.variant != Variant.L

    def with_(self, **changes) -> "MibConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.value if isinstance(value, enum.Enum) else (
                list(value) if isinstance(value, tuple) else value)
        return out


@dataclass
class LossBreakdown:
    """Loss terms in minimization orientation.

    total = task_loss + sum(unimodal_task_losses)
            + beta * (kl_multimodal [if penalized] + sum of penalized kl_unimodal)

    The kl_* fields hold whichever constraint is configured (KL or an
    alternative).  Unpenalized terms are still reported for diagnostics.
    """

    task_loss: float
    unimodal_task_losses: dict[str, float]
    kl_multimodal: float
    kl_unimodal: dict[str, float]
    total: float
    beta: float
    multimodal_penalized: bool
    penalized_unimodal: tuple[str, ...]
    objective: Tensor | None = field(default=None, repr=False, compare=False)

    def recombine(self) -> float:
        total = self.task_loss
        for m in self.unimodal_task_losses:
            total = total + self.unimodal_task_losses[m]
        if self.beta != 0.0:
            total = total + self.beta * self._constraint_sum()
        return total

    def _constraint_sum(self) -> float:
        s = self.kl_multimodal if self.multimodal_penalized else 0.0
        for m in self.penalized_unimodal:
            s = s + self.kl_unimodal[m]
        return s

    @property
    def penalty(self) -> float:
        """The beta-weighted constraint contribution to ``total``."""
        return self.beta * self._constraint_sum() if self.beta != 0.0 else 0.0


# -- likelihoods -----------------------------------------------------------
def log_q_regression(y, y_hat):
    """Laplace log-likelihood without its constant: -|y - y_hat|."""
    if isinstance(y_hat, Tensor) or isinstance(y, Tensor):
        return -T.tabs(T.as_tensor(y_hat) - y)
    return -np.abs(np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float))


def log_q_classification(y, y_hat, categorical: bool = False):
    """Bernoulli log-likelihood y log p + (1-y) log(1-p), p clamped to [1e-7, 1-1e-7].

    With ``categorical=True`` the last axis of ``y_hat`` holds class
    probabilities, ``y`` holds integer labels, and sum_k y_k log p_k is returned.
    """
    if isinstance(y_hat, Tensor):
        p = T.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
        log = T.log
    else:
        p = np.clip(np.asarray(y_hat, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
        log = np.log
    y = np.asarray(y)
    if categorical:
        onehot = np.eye(p.shape[-1])[y.astype(int)]
        picked = log(p) * onehot
        return T.tsum(picked, axis=-1) if isinstance(picked, Tensor) else picked.sum(axis=-1)
    y = y.astype(float)
    return log(p) * y + log(1.0 - p) * (1.0 - y)


def negative_log_likelihood(task: str, y: np.ndarray, y_hat: Tensor) -> Tensor:
    """Per-row -log q(y | z)."""
    if task == "regression":
        return -log_q_regression(y, y_hat)
    return -log_q_classification(y, y_hat, categorical=task == "multiclass")


# -- alternative minimal-information constraints ---------------------------
def _row_norm(a: Tensor) -> Tensor:
    return T.sqrt(T.tsum(a * a, axis=-1) + _TINY)


def _sq_dists(a: Tensor, b: Tensor) -> Tensor:
    aa = T.reshape(T.tsum(a * a, axis=-1), (-1, 1))
    bb = T.reshape(T.tsum(b * b, axis=-1), (1, -1))
    return aa + bb - 2.0 * T.matmul(a, T.transpose(b))


def gaussian_mmd2(z: Tensor, x: Tensor) -> Tensor:
    """Biased squared MMD with kernel exp(-|a-b|^2 / (2 d))."""
    d = z.shape[-1]
    k = lambda a, b: T.exp(_sq_dists(a, b) * (-0.5 / d))  # noqa: E731
    return T.tmean(k(z, z)) + T.tmean(k(x, x)) - 2.0 * T.tmean(k(z, x))


def covariance(a: Tensor) -> Tensor:
    """(a^T a - (1^T a)^T (1^T a) / n) / (n - 1)."""
    n = a.shape[0]
    if n < 2:
        raise ConfigurationError("CORAL needs at least two rows")
    col = T.reshape(T.tsum(a, axis=0), (1, -1))
    return (T.matmul(T.transpose(a), a) - T.matmul(T.transpose(col), col) * (1.0 / n)) * (
        1.0 / (n - 1))


def alt_constraint(kind, z, x, adapter: np.ndarray | None = None) -> Tensor:
    """A dissimilarity-enforcing substitute for the KL term between latent z and input x.

    ``z`` is (n, d), ``x`` is (n, d').  When d' != d, ``adapter`` (a fixed
    (d', d) matrix) maps x into z's space.
    """
    kind = Constraint.parse(kind)
    if kind == Constraint.KL:
        raise ConfigurationError("KL is computed from the posterior, not by alt_constraint")
    z, x = T.as_tensor(z), T.as_tensor(x)
    if z.ndim != 2 or x.ndim != 2 or z.shape[0] != x.shape[0]:
        raise InputError(f"constraint inputs must be row batches, got {z.shape} and {x.shape}")
    if x.shape[1] != z.shape[1]:
        if adapter is None or adapter.shape != (x.shape[1], z.shape[1]):
            raise ConfigurationError(
                f"need a ({x.shape[1]}, {z.shape[1]}) adapter to compare x with z")
        x = T.matmul(x, adapter)
    d = z.shape[1]
    if kind == Constraint.MMD:
        return 1.0 / (1.0 + gaussian_mmd2(z, x))
    if kind == Constraint.CORAL:
        diff = covariance(x) - covariance(z)
        return 1.0 / (1.0 + T.tsum(diff * diff) * (1.0 / (4.0 * d * d)))
    if kind == Constraint.ORTHOGONAL:
        xn = x / T.reshape(_row_norm(x) + 1.0, (-1, 1))
        zn = z / T.reshape(_row_norm(z) + 1.0, (-1, 1))
        dots = T.tsum(xn * zn, axis=-1)
        return T.tmean(dots * dots)
    if kind == Constraint.EUCLIDEAN:
        return 1.0 / (1.0 + T.tmean(_row_norm(z - x)))
    cos = T.tsum(z * x, axis=-1) / (_row_norm(z) * _row_norm(x))
    return T.tmean((cos + 1.0) * 0.5)


def constraint_term(config: MibConfig, posterior: DiagonalGaussian, z: Tensor, x: Tensor,
                    adapter: np.ndarray | None) -> Tensor:
    """Scalar constraint for one IB site, averaged over rows."""
    if config.constraint == Constraint.KL:
        return T.tmean(kl_to_standard(posterior))
    return alt_constraint(config.constraint, z, x, adapter)


# -- the three objectives ---------------------------------------------------
def _labels(batch_y, reps: int) -> np.ndarray:
    y = np.asarray(batch_y)
    if y.ndim == 0 or len(y) == 0:
        raise InputError("batch must be non-empty")
    return np.concatenate([y] * reps, axis=0) if reps > 1 else y


def _breakdown(model: "MIBModel", trace: "ForwardTrace", y: np.ndarray) -> LossBreakdown:
    cfg = model.config
    beta = cfg.effective_beta
    task = T.tmean(negative_log_likelihood(cfg.task, y, trace.prediction))
    objective = task
    uni_task: dict[str, float] = {}
    uni_kl: dict[str, float] = {}
    uni_terms: dict[str, Tensor] = {}
    for m in trace.unimodal_posteriors:
        t = T.tmean(negative_log_likelihood(cfg.task, y, trace.unimodal_predictions[m]))
        objective = objective + t
        uni_task[m] = t.item()
        c = constraint_term(cfg, trace.unimodal_posteriors[m], trace.unimodal_latents[m],
                            trace.unimodal_inputs[m], model.adapters.get(m))
        uni_terms[m] = c
        uni_kl[m] = c.item()
    mm_term = None
    kl_mm = 0.0
    if trace.posterior is not None and trace.fused is not None:
        mm_term = constraint_term(cfg, trace.posterior, trace.latent, trace.fused,
                                  model.adapters.get("fused"))
        kl_mm = mm_term.item()
    penalized = tuple(m for m in uni_terms if m not in cfg.ib_off)
    if beta != 0.0:
        pen = mm_term if mm_term is not None else None
        for m in penalized:
            pen = uni_terms[m] if pen is None else pen + uni_terms[m]
        if pen is not None:
            objective = objective + pen * beta
    return LossBreakdown(
        task_loss=task.item(),
        unimodal_task_losses=uni_task,
        kl_multimodal=kl_mm,
        kl_unimodal=uni_kl,
        total=objective.item(),
        beta=beta,
        multimodal_penalized=mm_term is not None,
        penalized_unimodal=penalized,
        objective=objective,
    )


def mib_loss(batch, model: "MIBModel", config: MibConfig | None = None,
             rng: np.random.Generator | None = None) -> LossBreakdown:
    """Loss for whatever variant ``model`` was built for.

    ``batch`` is (ModalityBundle, labels).  ``rng`` supplies the
    reparameterization noise; None evaluates with z = mean.
    """
    bundle, y = batch
    if config is not None and config != model.config:
        raise ConfigurationError("config does not match the model it is evaluated with")
    reps = model.config.mc_samples if rng is not None else 1
    trace = model.forward(bundle, rng, mc_samples=reps)
    return _breakdown(model, trace, _labels(y, reps))


def _require(model: "MIBModel", config: MibConfig | None, allowed: tuple[Variant, ...], name: str):
    cfg = config or model.config
    if cfg.variant not in allowed:
        raise ConfigurationError(f"{name} cannot evaluate a {cfg.variant.value}-variant model")
    if cfg.fusion == FusionKind.POE and Variant.L not in allowed:
        raise ConfigurationError(f"{name} does not support PoE fusion")


def loss_emib(batch, model: "MIBModel", config: MibConfig | None = None,
              rng: np.random.Generator | None = None) -> LossBreakdown:
    """Early fusion: encode, fuse, one Gaussian head, decode."""
    _require(model, config, (Variant.E, Variant.B), "loss_emib")
    return mib_loss(batch, model, config, rng)


def loss_lmib(batch, model: "MIBModel", config: MibConfig | None = None,
              rng: np.random.Generator | None = None) -> LossBreakdown:
    """Late fusion: a Gaussian head and decoder per modality, then fuse the latents."""
    _require(model, config, (Variant.L,), "loss_lmib")
    return mib_loss(batch, model, config, rng)


def loss_cmib(batch, model: "MIBModel", config: MibConfig | None = None,
              rng: np.random.Generator | None = None) -> LossBreakdown:
    """Both stages: unimodal IB, fuse the unimodal latents, multimodal IB."""
    _require(model, config, (Variant.C,), "loss_cmib")
    return mib_loss(batch, model, config, rng)


VARIANT_LOSSES = {
    Variant.E: loss_emib,
    Variant.B: loss_emib,
    Variant.L: loss_lmib,
    Variant.C: loss_cmib,
}
