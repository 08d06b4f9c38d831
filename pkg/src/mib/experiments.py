"""Ablation grids and learning-curve analysis on synthetic data.

Every cell is an independent training run.  With ``jobs > 1`` cells run in
worker processes; results are always returned in grid order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .errors import ConfigurationError, InputError
from .fusion import FusionKind
from .metrics import MetricsReport
from .model import MIBModel
from .networks import MODALITIES
from .objectives import Constraint, Variant
from .synth import Dataset
from .training import CurvePoint, TrainConfig, evaluate, train

PAPER_BETA_GRID = (1e0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0)
MODALITY_SUBSETS = ("L", "A", "V", "L&A", "A&V", "L&V", "L&A&V")
_LETTER = {"L": "l", "A": "a", "V": "v"}


@dataclass
class AblationRow:
    kind: str
    cell: dict
    seed: int
    report: MetricsReport | None  # None marks an illegal, skipped cell

    def flat(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed, **self.cell}
        fields = ("acc7", "acc2", "f1", "mae", "corr", "n")
        if self.report is None:
            out.update({k: "-" for k in fields})
        else:
            out.update({k: getattr(self.report, k) for k in fields})
        return out


def _run_cell(args) -> tuple[MetricsReport, list[CurvePoint]]:
    data, cfg = args
    _, curves = train(data, cfg)
    if not curves:
        dims = {m: data[0].bundle[m].shape[-1] for m in cfg.mib.modalities}
        return evaluate(MIBModel(cfg.mib, dims, seed=cfg.seed), data[1]), curves
    return curves[-1].test, curves


def run_cells(data: tuple[Dataset, Dataset], configs: Sequence[TrainConfig],
              jobs: int = 1) -> list[tuple[MetricsReport, list[CurvePoint]]]:
    """Train every config; returns (final test report, curves) per config in order."""
    work = [(data, cfg) for cfg in configs]
    if jobs <= 1 or len(work) <= 1:
        return [_run_cell(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, work))


def _seeds(base: TrainConfig, n_seeds: int) -> list[int]:
    if n_seeds < 1:
        raise ConfigurationError("n_seeds must be >= 1")
    return [base.seed + i for i in range(n_seeds)]


# -- beta -------------------------------------------------------------------
def run_beta_ablation(betas: Iterable[float], base: TrainConfig, data: tuple[Dataset, Dataset],
                      n_seeds: int = 1, jobs: int = 1, require_zero: bool = True
                      ) -> list[AblationRow]:
    """C-MIB test metrics for every (beta, seed) on one fixed dataset."""
    betas = [float(b) for b in betas]
    if require_zero and 0.0 not in betas:
        raise ConfigurationError("the beta grid must include 0 as the unconstrained reference")
    cells, configs = [], []
    for beta in betas:
        for seed in _seeds(base, n_seeds):
            cells.append(({"beta": beta}, seed))
            configs.append(replace(base, seed=seed,
                                   mib=base.mib.with_(variant=Variant.C, beta=beta)))
    results = run_cells(data, configs, jobs)
    return [AblationRow("beta", c, s, r) for (c, s), (r, _) in zip(cells, results)]


# -- modality subsets -------------------------------------------------------
def subset_modalities(label: str) -> tuple[str, ...]:
    letters = [p.strip().upper() for p in label.split("&") if p.strip()]
    if not letters:
        raise ConfigurationError("a modality subset must name at least one modality")
    if any(p not in _LETTER for p in letters) or len(set(letters)) != len(letters):
        raise ConfigurationError(f"bad modality subset {label!r}; use letters L, A, V joined by '&'")
    chosen = {_LETTER[p] for p in letters}
    return tuple(m for m in MODALITIES if m in chosen)


def subsystem_config(base: TrainConfig, label: str, with_ib: bool) -> TrainConfig:
    """Unimodal: encoder, Gaussian head, decoder.  Two or more: C-MIB over the subset."""
    mods = subset_modalities(label)
    if len(mods) == 1:
        mib = base.mib.with_(variant=Variant.E, modalities=mods, ib_off=())
    else:
        mib = base.mib.with_(variant=Variant.C, modalities=mods, ib_off=())
    if not with_ib:
        mib = mib.with_(beta=0.0)
    return replace(base, mib=mib)


def run_modality_ablation(base: TrainConfig, data: tuple[Dataset, Dataset],
                          subsets: Sequence[str] = MODALITY_SUBSETS, jobs: int = 1
                          ) -> list[AblationRow]:
    if not subsets:
        raise ConfigurationError("no modality subsets given")
    cells, configs = [], []
    for label in subsets:
        for with_ib in (True, False):
            configs.append(subsystem_config(base, label, with_ib))
            cells.append({"modalities": label, "ib": with_ib})
    results = run_cells(data, configs, jobs)
    return [AblationRow("modality", c, base.seed, r) for c, (r, _) in zip(cells, results)]


# -- fusion and constraint --------------------------------------------------
def fusion_legal(variant: Variant, kind: FusionKind) -> bool:
    return kind != FusionKind.POE or variant == Variant.L


def run_fusion_ablation(base: TrainConfig, data: tuple[Dataset, Dataset], jobs: int = 1
                        ) -> list[AblationRow]:
    """Every FusionKind under E, L and C; illegal cells appear as skipped rows."""
    grid = [(v, k) for v in (Variant.E, Variant.L, Variant.C) for k in FusionKind]
    legal = [(v, k) for v, k in grid if fusion_legal(v, k)]
    configs = [replace(base, mib=base.mib.with_(variant=v, fusion=k)) for v, k in legal]
    results = dict(zip(legal, (r for r, _ in run_cells(data, configs, jobs))))
    return [AblationRow("fusion", {"variant": v.value, "fusion": k.value}, base.seed,
                        results.get((v, k))) for v, k in grid]


def run_constraint_ablation(base: TrainConfig, data: tuple[Dataset, Dataset], jobs: int = 1
                            ) -> list[AblationRow]:
    kinds = list(Constraint)
    configs = [replace(base, mib=base.mib.with_(constraint=c)) for c in kinds]
    results = run_cells(data, configs, jobs)
    return [AblationRow("constraint", {"variant": base.mib.variant.value, "constraint": c.value},
                        base.seed, r) for c, (r, _) in zip(kinds, results)]


# -- learning curves --------------------------------------------------------
@dataclass(frozen=True)
class KLCurveResult:
    ratio: float
    decrease_noisy: float
    decrease_clean: float
    clean_flat: bool  # True when the clean decrease is 0 and ratio is the +inf sentinel


def kl_curve_analysis(curves: Sequence[CurvePoint], noisy_modality: str,
                      clean_modality: str) -> KLCurveResult:
    """Ratio of KL decreases (first epoch minus final epoch), noisy over clean."""
    if len(curves) < 2:
        raise InputError("KL curve analysis needs at least 2 epochs")
    for m in (noisy_modality, clean_modality):
        if m not in curves[0].kl_unimodal:
            raise InputError(f"curves carry no unimodal KL for modality {m!r}")

    def decrease(m: str) -> float:
        return curves[0].kl_unimodal[m] - curves[-1].kl_unimodal[m]

    noisy, clean = decrease(noisy_modality), decrease(clean_modality)
    if clean == 0.0:
        return KLCurveResult(math.inf, noisy, clean, True)
    return KLCurveResult(noisy / clean, noisy, clean, False)
