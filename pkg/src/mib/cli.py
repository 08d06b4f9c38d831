"""Command-line entry point: gen-data, train, check, ablate.

Exit codes: 0 success, 1 check or experiment failure, 2 usage or config error.
Set MIB_LOG (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import __version__
from .checks import SUITES, inject_fault, run_suite
from .config import RunConfig, load_config
from .errors import DivergenceError, MibError
from .experiments import (
    run_beta_ablation,
    run_constraint_ablation,
    run_fusion_ablation,
    run_modality_ablation,
)
from .networks import save_checkpoint
from .synth import generate_dataset, load_dataset, save_dataset
from .training import evaluate
from .training import train as train_model

log = logging.getLogger("mib")

CURVE_COLUMNS = ("epoch", "task_loss", "kl_multimodal", "kl_a", "kl_v", "kl_l",
                 "test_mae", "test_acc2")
ABLATE_KINDS = ("beta", "modality", "fusion", "constraint")


class UsageFailure(click.ClickException):
    exit_code = 2


class RunFailure(click.ClickException):
    exit_code = 1


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    version: str
    started: str
    finished: str
    outputs: dict

    def write(self, path: Path) -> None:
        missing = [p for p in self.outputs.values() if not Path(p).exists()]
        if missing:
            raise RunFailure(f"manifest names missing outputs: {missing}")
        _atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _setup_logging() -> None:
    level = os.environ.get("MIB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(config_path) -> RunConfig:
    if config_path is None:
        return RunConfig()
    try:
        return load_config(config_path)
    except MibError as exc:
        raise UsageFailure(f"invalid config: {exc}") from None


def _prepare_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageFailure(f"output directory {str(path)!r} is not writable ({exc.strerror})")


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


@click.group()
@click.version_option(__version__, prog_name="mib")
def main() -> None:
    """Multimodal information bottleneck lab on synthetic data."""
    _setup_logging()


# -- gen-data ---------------------------------------------------------------
@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="TOML config; defaults to the standard noisy setup.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override data.seed.")
def gen_data(config_path, out_path, seed) -> None:
    """Generate a synthetic dataset snapshot."""
    started = _now()
    cfg = _load(config_path)
    if seed is not None:
        cfg = replace(cfg, data=replace(cfg.data, seed=seed))
    out = Path(out_path)
    _prepare_dir(out.parent if str(out.parent) else Path("."))
    train, test = generate_dataset(cfg.data)
    save_dataset(out, cfg.data, train, test)
    RunManifest("gen-data", cfg.to_dict(), {"data": cfg.data.seed}, __version__, started, _now(),
                {"dataset": str(out)}).write(out.with_name(out.name + ".manifest.json"))
    click.echo(f"wrote {out} ({len(train)} train, {len(test)} test)")


# -- train ------------------------------------------------------------------
def write_curves(path: Path, curves) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for point in curves:
        row = point.row()
        writer.writerow([_fmt(row[c]) for c in CURVE_COLUMNS])
    _atomic_write(path, buf.getvalue())


def write_embeddings(path: Path, z: np.ndarray, labels: np.ndarray) -> None:
    buf = io.StringIO()
    buf.write("\t".join(["label"] + [f"z{i}" for i in range(z.shape[1])]) + "\n")
    for label, row in zip(labels, z):
        buf.write("\t".join(_fmt(v) for v in (label, *row)) + "\n")
    _atomic_write(path, buf.getvalue())


@main.command("train")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override train.seed.")
def train_cmd(config_path, data_path, out_dir, seed) -> None:
    """Train one model; writes metrics, curves, embeddings and a checkpoint."""
    started = _now()
    cfg = _load(config_path)
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    out = Path(out_dir)
    _prepare_dir(out)
    try:
        data_cfg, train_ds, test_ds = load_dataset(data_path)
    except (MibError, OSError) as exc:
        raise UsageFailure(f"cannot read dataset: {exc}") from None
    try:
        model, curves = train_model((train_ds, test_ds), cfg.train)
    except DivergenceError as exc:
        raise RunFailure(str(exc)) from None
    except MibError as exc:
        raise UsageFailure(str(exc)) from None

    report = curves[-1].test if curves else evaluate(model, test_ds)
    paths = {name: out / name for name in
             ("metrics.json", "curves.csv", "embeddings.tsv", "checkpoint.json")}
    _atomic_write(paths["metrics.json"], report.to_json() + "\n")
    write_curves(paths["curves.csv"], curves)
    write_embeddings(paths["embeddings.tsv"], model.embed(test_ds.bundle), test_ds.labels)
    save_checkpoint(model, paths["checkpoint.json"],
                    extra={"config": cfg.to_dict(), "input_dims": model.input_dims})
    config_echo = cfg.to_dict()
    config_echo["data"] = data_cfg.to_dict()
    RunManifest("train", config_echo, {"data": data_cfg.seed, "train": cfg.train.seed},
                __version__, started, _now(),
                {k: str(v) for k, v in {**paths, "dataset": Path(data_path)}.items()}
                ).write(out / "manifest.json")
    click.echo(f"test mae={report.mae:.4f} acc2={report.acc2:.4f} -> {out}")


# -- check ------------------------------------------------------------------
@main.command("check")
@click.option("--suite", type=click.Choice(SUITES + ("all",)), default="all", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--inject-fault", "fault", default=None, hidden=True,
              help="Corrupt one tensor op's gradient (self-test of the checker).")
def check_cmd(suite, seed, fault) -> None:
    """Run the numerical self-checks; exit 1 if any check fails."""
    with contextlib.ExitStack() as stack:
        if fault is not None:
            try:
                stack.enter_context(inject_fault(fault))
            except KeyError as exc:
                raise UsageFailure(str(exc.args[0])) from None
        results, seconds = run_suite(suite, seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        click.echo(r.line())
    for r in failed:
        click.echo(f"  inputs for {r.name}: {json.dumps(r.inputs, sort_keys=True)}")
    click.echo(f"{len(results) - len(failed)}/{len(results)} checks passed in {seconds:.1f}s")
    if failed:
        sys.exit(1)


# -- ablate -----------------------------------------------------------------
@main.command("ablate")
@click.option("--kind", type=click.Choice(ABLATE_KINDS), required=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Dataset snapshot; generated from the config when omitted.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override train.seed (first seed).")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
def ablate_cmd(kind, config_path, data_path, out_path, seed, jobs) -> None:
    """Run an ablation grid and write one CSV row per cell."""
    started = _now()
    cfg = _load(config_path)
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    out = Path(out_path)
    _prepare_dir(out.parent if str(out.parent) else Path("."))
    if data_path is not None:
        try:
            data_cfg, train_ds, test_ds = load_dataset(data_path)
        except (MibError, OSError) as exc:
            raise UsageFailure(f"cannot read dataset: {exc}") from None
    else:
        data_cfg = cfg.data
        train_ds, test_ds = generate_dataset(cfg.data)
    data = (train_ds, test_ds)
    try:
        if kind == "beta":
            rows = run_beta_ablation(cfg.ablate.betas, cfg.train, data, cfg.ablate.n_seeds, jobs)
        elif kind == "modality":
            rows = run_modality_ablation(cfg.train, data, cfg.ablate.subsets, jobs)
        elif kind == "fusion":
            rows = run_fusion_ablation(cfg.train, data, jobs)
        else:
            rows = run_constraint_ablation(cfg.train, data, jobs)
    except DivergenceError as exc:
        raise RunFailure(str(exc)) from None
    except MibError as exc:
        raise UsageFailure(str(exc)) from None

    echo = cfg.train.mib.to_dict()
    flat = [{**{f"cfg_{k}": v for k, v in echo.items()}, **r.flat()} for r in rows]
    columns = list(dict.fromkeys(k for row in flat for k in row))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in flat:
        writer.writerow({k: _fmt(v) if not isinstance(v, (list, tuple)) else "|".join(v)
                         for k, v in row.items()})
    _atomic_write(out, buf.getvalue())
    config_echo = cfg.to_dict()
    config_echo["data"] = data_cfg.to_dict()
    outputs = {"table": str(out)}
    if data_path is not None:
        outputs["dataset"] = str(data_path)
    RunManifest(f"ablate --kind {kind}", config_echo,
                {"data": data_cfg.seed, "train": cfg.train.seed}, __version__, started, _now(),
                outputs).write(out.with_name(out.name + ".manifest.json"))
    click.echo(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
