import math

import pytest

from mib.errors import ConfigurationError, InputError
from mib.experiments import (
    PAPER_BETA_GRID,
    kl_curve_analysis,
    run_beta_ablation,
    run_cells,
    run_constraint_ablation,
    run_fusion_ablation,
    run_modality_ablation,
    subset_modalities,
    subsystem_config,
)
from mib.metrics import MetricsReport
from mib.networks import MODALITIES
from mib.objectives import MibConfig, Variant
from mib.synth import ModalitySpec, SynthConfig, generate_dataset
from mib.training import CurvePoint, TrainConfig, train

SMALL = dict(d_enc=4, d_z=2, hidden=8)
BASE = TrainConfig(epochs=1, batch_size=16, mib=MibConfig(**SMALL))


@pytest.fixture(scope="module")
def data():
    spec = ModalitySpec(T=2, d=4, signal_dims=2, noise_std=0.5)
    return generate_dataset(SynthConfig(n_train=48, n_test=16,
                                        modalities={m: spec for m in MODALITIES}))


def test_single_beta_single_seed_is_one_row(data):
    rows = run_beta_ablation([0.0], BASE, data)
    assert len(rows) == 1
    assert rows[0].cell == {"beta": 0.0} and rows[0].seed == 0
    assert isinstance(rows[0].report, MetricsReport)


def test_beta_grid_and_seeds(data):
    rows = run_beta_ablation([1e-3, 0.0], BASE, data, n_seeds=2)
    assert [(r.cell["beta"], r.seed) for r in rows] == [(1e-3, 0), (1e-3, 1), (0.0, 0), (0.0, 1)]
    assert PAPER_BETA_GRID == (1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6, 0.0)


def test_beta_grid_without_zero_is_rejected(data):
    with pytest.raises(ConfigurationError):
        run_beta_ablation([1e-3], BASE, data)


def test_parallel_cells_match_serial(data):
    cfgs = [BASE, TrainConfig(epochs=1, batch_size=16, seed=3, mib=MibConfig(**SMALL))]
    serial = [r for r, _ in run_cells(data, cfgs, jobs=1)]
    parallel = [r for r, _ in run_cells(data, cfgs, jobs=2)]
    assert serial == parallel


def test_trimodal_with_ib_row_is_a_standard_run(data):
    rows = run_modality_ablation(BASE, data, subsets=["L&A&V"])
    assert [r.cell for r in rows] == [{"modalities": "L&A&V", "ib": True},
                                      {"modalities": "L&A&V", "ib": False}]
    _, curves = train(data, BASE)
    assert rows[0].report.to_json() == curves[-1].test.to_json()


def test_subset_parsing():
    assert subset_modalities("L&A") == ("a", "l")
    assert subset_modalities("v") == ("v",)
    for bad in ("", " & ", "L&L", "X"):
        with pytest.raises(ConfigurationError):
            subset_modalities(bad)


def test_subsystem_wiring():
    uni = subsystem_config(BASE, "V", with_ib=True).mib
    assert uni.variant is Variant.E and uni.modalities == ("v",)
    bi = subsystem_config(BASE, "L&V", with_ib=False).mib
    assert bi.variant is Variant.C and bi.modalities == ("v", "l") and bi.beta == 0.0


def test_noisy_modality_alone_is_worse_than_clean_alone():
    clean = ModalitySpec(T=2, d=4, signal_dims=4, noise_std=0.1)
    noisy = ModalitySpec(T=2, d=4, signal_dims=4, noise_std=4.0)
    data = generate_dataset(SynthConfig(n_train=400, n_test=200,
                                        modalities={"a": noisy, "v": noisy, "l": clean}))
    base = TrainConfig(epochs=20, batch_size=32, lr=3e-3, mib=MibConfig(**SMALL))
    rows = run_modality_ablation(base, data, subsets=["A", "L"])
    mae = {(r.cell["modalities"], r.cell["ib"]): r.report.mae for r in rows}
    assert mae[("A", True)] > mae[("L", True)]


def test_fusion_grid_skips_illegal_cells(data):
    rows = run_fusion_ablation(BASE, data)
    assert len(rows) == 18
    skipped = {(r.cell["variant"], r.cell["fusion"]) for r in rows if r.report is None}
    assert skipped == {("E", "poe"), ("C", "poe")}
    flat = next(r.flat() for r in rows if r.report is None)
    assert flat["mae"] == "-" and flat["acc2"] == "-"


def test_constraint_grid(data):
    rows = run_constraint_ablation(BASE, data)
    assert [r.cell["constraint"] for r in rows] == ["kl", "mmd", "coral", "orthogonal",
                                                   "euclidean", "cosine"]
    assert all(r.report is not None for r in rows)


def _point(epoch, kl):
    return CurvePoint(epoch, 1.0, 0.0, dict(kl), MetricsReport(0, 0, 0, 0, 0, 1))


def test_kl_curve_analysis_cases():
    same = [_point(1, {"a": 5.0, "l": 5.0}), _point(2, {"a": 3.0, "l": 3.0})]
    assert kl_curve_analysis(same, "a", "l").ratio == 1.0
    res = kl_curve_analysis([_point(1, {"a": 9.0, "l": 4.0}), _point(2, {"a": 1.0, "l": 2.0})],
                            "a", "l")
    assert (res.ratio, res.decrease_noisy, res.decrease_clean) == (4.0, 8.0, 2.0)
    flat = kl_curve_analysis([_point(1, {"a": 9.0, "l": 4.0}), _point(2, {"a": 1.0, "l": 4.0})],
                             "a", "l")
    assert flat.ratio == math.inf and flat.clean_flat


def test_kl_curve_analysis_errors():
    with pytest.raises(InputError):
        kl_curve_analysis([_point(1, {"a": 1.0, "l": 1.0})], "a", "l")
    with pytest.raises(InputError):
        kl_curve_analysis([_point(1, {"a": 1.0}), _point(2, {"a": 1.0})], "a", "l")
