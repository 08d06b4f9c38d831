"""Synthetic three-modality data with a known, per-modality noise level.

Each example has a label y.  For modality m a fixed random mixing vector w_m
places y * w_m on the first ``signal_dims`` coordinates; the remaining
coordinates are per-example standard-normal distractors.  That vector is
repeated over T_m timesteps and every timestep gets fresh N(0, noise_std^2)
noise.  Larger ``noise_std`` makes a modality less informative.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError
from .networks import MODALITIES, ModalityBundle

DATASET_VERSION = 1
_MAGIC = b"MIBDATA1"
LABEL_MODES = ("regression", "binary")


@dataclass(frozen=True)
class ModalitySpec:
    T: int = 4
    d: int = 8
    signal_dims: int = 4
    noise_std: float = 2.0

    def validate(self, m: str) -> None:
        if self.T < 1:
            raise ConfigurationError(f"modalities.{m}.T must be >= 1")
        if self.d < 1:
            raise ConfigurationError(f"modalities.{m}.d must be >= 1")
        if not 0 <= self.signal_dims <= self.d:
            raise ConfigurationError(
                f"modalities.{m}.signal_dims must be in [0, d={self.d}], got {self.signal_dims}")
        if not self.noise_std >= 0:
            raise ConfigurationError(f"modalities.{m}.noise_std must be >= 0")


def _standard_modalities() -> dict[str, ModalitySpec]:
    # language is the clean modality, acoustic and visual are noisy
    return {
        "a": ModalitySpec(noise_std=2.0),
        "v": ModalitySpec(noise_std=2.0),
        "l": ModalitySpec(noise_std=0.1),
    }


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 2000
    n_test: int = 500
    modalities: dict[str, ModalitySpec] = field(default_factory=_standard_modalities)
    label_mode: str = "regression"
    seed: int = 0

    def __post_init__(self):
        mods = {m: (s if isinstance(s, ModalitySpec) else ModalitySpec(**s))
                for m, s in dict(self.modalities).items()}
        object.__setattr__(self, "modalities", mods)
        self.validate()

    def validate(self) -> None:
        if set(self.modalities) != set(MODALITIES):
            raise ConfigurationError(f"modalities must define exactly {MODALITIES}")
        for m in MODALITIES:
            self.modalities[m].validate(m)
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigurationError("n_train and n_test must be >= 1")
        if self.label_mode not in LABEL_MODES:
            raise ConfigurationError(f"label_mode must be one of {LABEL_MODES}")

    @property
    def input_dims(self) -> dict[str, int]:
        return {m: self.modalities[m].d for m in MODALITIES}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["modalities"] = {m: asdict(self.modalities[m]) for m in MODALITIES}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        return cls(**data)


@dataclass
class Dataset:
    """A split: features per modality (n, T_m, d_m) and labels (n,)."""

    bundle: ModalityBundle
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "Dataset":
        return Dataset(self.bundle.subset(index), self.labels[index])

    def targets(self, task: str) -> np.ndarray:
        """Labels in the encoding the task's likelihood expects."""
        if task == "regression":
            return self.labels
        return (self.labels > 0).astype(float)


def generate_dataset(cfg: SynthConfig) -> tuple[Dataset, Dataset]:
    """Deterministic (train, test) datasets for ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_train + cfg.n_test
    if cfg.label_mode == "regression":
        y = rng.uniform(-3.0, 3.0, size=n)
    else:
        y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    feats = {}
    for m in MODALITIES:
        spec = cfg.modalities[m]
        w = rng.standard_normal(spec.signal_dims)
        if spec.signal_dims:
            w *= np.sqrt(spec.signal_dims) / np.linalg.norm(w)
        base = np.empty((n, spec.d))
        base[:, : spec.signal_dims] = y[:, None] * w[None, :]
        base[:, spec.signal_dims:] = rng.standard_normal((n, spec.d - spec.signal_dims))
        noise = rng.standard_normal((n, spec.T, spec.d)) * spec.noise_std
        feats[m] = base[:, None, :] + noise
    split = cfg.n_train
    train = Dataset(ModalityBundle(*(feats[m][:split] for m in MODALITIES)), y[:split])
    test = Dataset(ModalityBundle(*(feats[m][split:] for m in MODALITIES)), y[split:])
    return train, test


def linear_probe_mae(train: Dataset, test: Dataset, modality: str) -> float:
    """MAE of a least-squares probe from one time-averaged modality to the label."""
    def design(ds: Dataset) -> np.ndarray:
        X = ds.bundle[modality].mean(axis=1)
        return np.hstack([X, np.ones((len(X), 1))])

    coef, *_ = np.linalg.lstsq(design(train), train.labels, rcond=None)
    return float(np.mean(np.abs(design(test) @ coef - test.labels)))


# -- snapshot files --------------------------------------------------------
def save_dataset(path, cfg: SynthConfig, train: Dataset, test: Dataset) -> None:
    """Header (JSON, length-prefixed) followed by raw little-endian float64 arrays.

    The byte stream depends only on the contents, so equal datasets give
    identical files.
    """
    arrays = _ordered_arrays(train, test)
    header = {
        "version": DATASET_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def _ordered_arrays(train: Dataset, test: Dataset) -> list[tuple[str, np.ndarray]]:
    out = []
    for split, ds in (("train", train), ("test", test)):
        for m in MODALITIES:
            out.append((f"{split}.{m}", ds.bundle[m]))
        out.append((f"{split}.labels", ds.labels))
    return out


def load_dataset(path) -> tuple[SynthConfig, Dataset, Dataset]:
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC or len(raw) < len(_MAGIC) + 8:
        raise InputError(f"{path} is not a dataset snapshot")
    (hlen,) = struct.unpack("<Q", raw[len(_MAGIC): len(_MAGIC) + 8])
    offset = len(_MAGIC) + 8
    try:
        header = json.loads(raw[offset: offset + hlen])
    except ValueError as exc:
        raise InputError(f"{path}: unreadable header ({exc})") from None
    if header.get("version") != DATASET_VERSION:
        raise InputError(f"unsupported dataset version {header.get('version')}")
    offset += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        if offset + 8 * count > len(raw):
            raise InputError(f"{path}: payload truncated in {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(
            np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(raw):
        raise InputError(f"{path}: trailing bytes after payload")
    splits = []
    for split in ("train", "test"):
        bundle = ModalityBundle(*(arrays[f"{split}.{m}"] for m in MODALITIES))
        splits.append(Dataset(bundle, arrays[f"{split}.labels"]))
    return SynthConfig.from_dict(header["config"]), splits[0], splits[1]
