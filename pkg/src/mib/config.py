"""TOML run configuration with strict keys.

Layout (every table and key is optional; missing values take defaults)::

    schema_version = 1

    [data]              n_train, n_test, label_mode, seed
    [data.modalities.a] T, d, signal_dims, noise_std     (same for v, l)
    [train]             epochs, batch_size, lr, seed
    [model]             variant, beta, fusion, task, constraint, mc_samples,
                        n_classes, modalities, ib_off, unimodal_heads,
                        d_enc, d_z, hidden
    [ablate]            betas, n_seeds, subsets

Unknown keys and wrongly typed values raise ConfigurationError naming the
dotted field.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .experiments import MODALITY_SUBSETS, PAPER_BETA_GRID
from .networks import MODALITIES
from .objectives import MibConfig
from .synth import SynthConfig
from .training import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AblateConfig:
    betas: tuple[float, ...] = PAPER_BETA_GRID
    n_seeds: int = 1
    subsets: tuple[str, ...] = MODALITY_SUBSETS

    def to_dict(self) -> dict:
        return {"betas": list(self.betas), "n_seeds": self.n_seeds, "subsets": list(self.subsets)}


@dataclass(frozen=True)
class RunConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def to_dict(self) -> dict:
        tr = self.train.to_dict()
        model = tr.pop("mib")
        return {"schema_version": SCHEMA_VERSION, "data": self.data.to_dict(), "train": tr,
                "model": model, "ablate": self.ablate.to_dict()}


def _check_type(where: str, value, expected):
    if expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        return float(value) if ok else _type_error(where, value, "a number")
    if expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
        return value if ok else _type_error(where, value, "an integer")
    if expected is bool:
        return value if isinstance(value, bool) else _type_error(where, value, "true or false")
    if expected is str:
        return value if isinstance(value, str) else _type_error(where, value, "a string")
    if expected == "strs":
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return tuple(value)
        return _type_error(where, value, "a list of strings")
    if expected == "floats":
        if isinstance(value, list) and all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return tuple(float(v) for v in value)
        return _type_error(where, value, "a list of numbers")
    raise AssertionError(expected)


def _type_error(where, value, what):
    raise ConfigurationError(f"{where}: expected {what}, got {value!r}")


def _table(raw: dict, where: str, schema: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where}: expected a table")
    out = {}
    for key, value in raw.items():
        name = f"{where}.{key}" if where else key
        if key not in schema:
            raise ConfigurationError(f"unknown config key {name!r}")
        out[key] = _check_type(name, value, schema[key])
    return out


_DATA = {"n_train": int, "n_test": int, "label_mode": str, "seed": int}
_MODALITY = {"T": int, "d": int, "signal_dims": int, "noise_std": float}
_TRAIN = {"epochs": int, "batch_size": int, "lr": float, "seed": int}
_MODEL = {"variant": str, "beta": float, "fusion": str, "task": str, "constraint": str,
          "mc_samples": int, "n_classes": int, "modalities": "strs", "ib_off": "strs",
          "unimodal_heads": bool, "d_enc": int, "d_z": int, "hidden": int}
_ABLATE = {"betas": "floats", "n_seeds": int, "subsets": "strs"}


def _wrap(where: str, build):
    try:
        return build()
    except ConfigurationError as exc:
        msg = str(exc)
        raise ConfigurationError(msg if msg.startswith(where) else f"{where}: {msg}") from None


def parse_config(raw: dict) -> RunConfig:
    raw = dict(raw)
    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"schema_version: unsupported value {version!r} (expected {SCHEMA_VERSION})")
    for key in raw:
        if key not in ("data", "train", "model", "ablate"):
            raise ConfigurationError(f"unknown config key {key!r}")

    data_raw = dict(raw.get("data", {}))
    mods_raw = data_raw.pop("modalities", {})
    data_kw = _table(data_raw, "data", _DATA)
    if not isinstance(mods_raw, dict):
        raise ConfigurationError("data.modalities: expected a table")
    defaults = SynthConfig().modalities
    mods = {}
    for m in mods_raw:
        if m not in MODALITIES:
            raise ConfigurationError(f"unknown config key 'data.modalities.{m}'")
    for m in MODALITIES:
        kw = _table(mods_raw.get(m, {}), f"data.modalities.{m}", _MODALITY)
        mods[m] = replace(defaults[m], **kw)
    synth = _wrap("data", lambda: SynthConfig(modalities=mods, **data_kw))

    model_kw = _table(raw.get("model", {}), "model", _MODEL)
    mib = _wrap("model", lambda: MibConfig(**model_kw))
    train_kw = _table(raw.get("train", {}), "train", _TRAIN)
    train = _wrap("train", lambda: TrainConfig(mib=mib, **train_kw))
    ablate_kw = _table(raw.get("ablate", {}), "ablate", _ABLATE)
    ablate = AblateConfig(**ablate_kw)
    if ablate.n_seeds < 1:
        raise ConfigurationError("ablate.n_seeds must be >= 1")
    return RunConfig(synth, train, ablate)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {str(path)!r} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML ({exc})") from None
    return parse_config(raw)
