"""Unimodal encoders, Gaussian heads and decoders, plus checkpoint I/O."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, InputError
from .gaussian import STD_FLOOR, DiagonalGaussian
from .tensor import Parameter, Tensor

MODALITIES = ("a", "v", "l")
TASKS = ("regression", "binary", "multiclass")
CHECKPOINT_VERSION = 1


class Module:
    """Collects Parameters from attributes, lists and dicts, recursively."""

    def named_parameters(self) -> dict[str, Parameter]:
        found: dict[str, Parameter] = {}

        def visit(obj):
            if isinstance(obj, Parameter):
                found[obj.name] = obj
            elif isinstance(obj, Module):
                for value in vars(obj).values():
                    visit(value)
            elif isinstance(obj, dict):
                for value in obj.values():
                    visit(value)
            elif isinstance(obj, (list, tuple)):
                for value in obj:
                    visit(value)

        for value in vars(self).values():
            visit(value)
        return dict(sorted(found.items()))

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        T.zero_grads(self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, name: str, rng: np.random.Generator):
        self.weight = Parameter(T.glorot_uniform(rng, d_out, d_in), f"{name}.weight")
        self.bias = Parameter(np.zeros(d_out), f"{name}.bias")
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x) -> Tensor:
        return T.linear_forward(self.weight, self.bias, x)


@dataclass
class ModalityBundle:
    """Feature sequences per modality, batched: each array is (n, T_m, d_m)."""

    a: np.ndarray
    v: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        for m in MODALITIES:
            arr = np.asarray(getattr(self, m), dtype=float)
            if arr.ndim == 2:
                arr = arr[None]
            if arr.ndim != 3:
                raise InputError(f"modality {m!r} must be (n, T, d), got shape {arr.shape}")
            setattr(self, m, arr)
        sizes = {getattr(self, m).shape[0] for m in MODALITIES}
        if len(sizes) != 1:
            raise InputError(f"modalities disagree on batch size: {sizes}")

    def __getitem__(self, m: str) -> np.ndarray:
        if m not in MODALITIES:
            raise KeyError(m)
        return getattr(self, m)

    def __len__(self) -> int:
        return self.a.shape[0]

    def subset(self, index) -> "ModalityBundle":
        return ModalityBundle(self.a[index], self.v[index], self.l[index])


class UnimodalEncoder(Module):
    """Mean-over-time pooling, then Linear -> relu -> Linear."""

    def __init__(self, d_in: int, hidden: int, d_out: int, name: str, rng: np.random.Generator):
        self.d_in, self.d_out = d_in, d_out
        self.fc1 = Linear(d_in, hidden, f"{name}.fc1", rng)
        self.fc2 = Linear(hidden, d_out, f"{name}.fc2", rng)

    def __call__(self, U) -> Tensor:
        return self.fc2(T.relu(self.fc1(pool_time(U, self.d_in))))


def pool_time(U, d_in: int | None = None) -> Tensor:
    """Average a (T, d) sequence or an (n, T, d) batch over time."""
    U = np.asarray(U, dtype=float)
    if U.ndim not in (2, 3) or U.shape[-2] == 0:
        raise InputError(f"expected a non-empty (T, d) or (n, T, d) sequence, got {U.shape}")
    if d_in is not None and U.shape[-1] != d_in:
        raise ConfigurationError(f"sequence feature dim {U.shape[-1]} != configured {d_in}")
    return Tensor(U.mean(axis=-2))


def encode_unimodal(enc: UnimodalEncoder, U) -> Tensor:
    return enc(U)


class GaussianHead(Module):
    """mean = Linear(x); std = softplus(Linear(x)) + 1e-6."""

    def __init__(self, d_in: int, d_z: int, name: str, rng: np.random.Generator):
        self.d_in, self.d_z = d_in, d_z
        self.mean = Linear(d_in, d_z, f"{name}.mean", rng)
        self.std = Linear(d_in, d_z, f"{name}.std", rng)

    def __call__(self, x) -> DiagonalGaussian:
        return DiagonalGaussian(self.mean(x), T.softplus(self.std(x)) + STD_FLOOR)


def gaussian_head(head: GaussianHead, x) -> DiagonalGaussian:
    return head(x)


class Decoder(Module):
    """One hidden relu layer; output squashed according to the task.

    regression -> raw scalar, binary -> sigmoid probability,
    multiclass -> softmax over ``n_classes``.
    """

    def __init__(self, d_in: int, hidden: int, task: str, name: str,
                 rng: np.random.Generator, n_classes: int = 2):
        if task not in TASKS:
            raise ConfigurationError(f"unknown task {task!r}")
        self.task = task
        self.n_out = n_classes if task == "multiclass" else 1
        self.fc1 = Linear(d_in, hidden, f"{name}.fc1", rng)
        self.fc2 = Linear(hidden, self.n_out, f"{name}.fc2", rng)

    def logits(self, z) -> Tensor:
        return self.fc2(T.relu(self.fc1(z)))

    def __call__(self, z) -> Tensor:
        return squash(self.logits(z), self.task)


def squash(logits: Tensor, task: str) -> Tensor:
    """Map decoder outputs to predictions; scalar tasks drop the trailing axis."""
    if task == "multiclass":
        return T.softmax(logits, axis=-1)
    out = T.reshape(logits, logits.shape[:-1])
    return T.sigmoid(out) if task == "binary" else out


def decode(dec: Decoder, z) -> Tensor:
    return dec(z)


# -- checkpoints -----------------------------------------------------------
def save_checkpoint(module: Module, path, extra: dict | None = None) -> None:
    """Write parameters as JSON; float repr round-trips float64 exactly."""
    payload = {
        "format": "mib-checkpoint",
        "version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "parameters": {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in module.named_parameters().items()
        },
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True))
    os.replace(tmp, path)


def read_checkpoint(path) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "mib-checkpoint":
        raise InputError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def load_checkpoint(module: Module, path) -> dict:
    """Copy stored values into ``module``'s parameters; returns the ``extra`` block."""
    payload = read_checkpoint(path)
    stored = payload["parameters"]
    params = module.named_parameters()
    if set(stored) != set(params):
        missing = sorted(set(params) ^ set(stored))
        raise ConfigurationError(f"checkpoint/model parameter mismatch: {missing[:5]}")
    for name, p in params.items():
        arr = np.asarray(stored[name]["data"], dtype=float).reshape(stored[name]["shape"])
        if arr.shape != p.shape:
            raise ConfigurationError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
        p.data[...] = arr
    return payload["extra"]
