import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mib.errors import InputError
from mib.metrics import (
    MetricsReport,
    acc2,
    acc7,
    evaluate_predictions,
    f1,
    mae,
    pearson,
    weighted_accuracy,
)


def test_acc7_examples():
    assert acc7([-3, -1, 0, 2], [-3, -1, 0, 2]) == 1.0
    assert acc7([2.4], [2.0]) == 1.0
    assert acc7([5.0], [3.0]) == 1.0
    assert acc7([2.5, -2.5, 0.49], [3.0, -3.0, 0.0]) == 1.0
    assert acc7([1.5], [1.0]) == 0.0


def test_acc2_and_f1_examples():
    assert acc2([1, -2, 3], [0.5, -1, 2]) == 1.0 and f1([1, -2, 3], [0.5, -1, 2]) == 1.0
    # TP, FP, FN one each (+ one TN)
    assert f1([1, 1, -1, -1], [1, -1, 1, -1]) == 0.5
    assert acc2([-1, -2], [1, 2]) == 0.0 and f1([-1, -2], [1, 2]) == 0.0


def test_zero_counts_as_negative():
    assert acc2([0.0], [-1.0]) == 1.0
    assert acc2([0.0], [1.0]) == 0.0


def test_mae_and_pearson_examples():
    y = np.array([-1.0, 0.5, 2.0, 3.0])
    assert mae(y, y) == 0.0 and pearson(y, y) == 1.0
    assert pearson(-y, y) == -1.0
    assert mae([1, 2, 3], [2, 2, 2]) == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(InputError):
        pearson([1, 2, 3], [2, 2, 2])


def test_empty_and_mismatched_inputs():
    for fn in (acc7, acc2, f1, mae, pearson):
        with pytest.raises(InputError):
            fn([], [])
    with pytest.raises(InputError):
        mae([1.0, 2.0], [1.0])


def test_weighted_accuracy():
    # P=1, N=3: (1*3/1 + 2) / 6
    assert weighted_accuracy([1, 1, -1, -1], [1, -1, -1, -1]) == pytest.approx(5 / 6)
    with pytest.raises(InputError):
        weighted_accuracy([1.0], [1.0])


def _brute_force(p, y):
    n = len(p)

    def cls(v):
        v = min(3.0, max(-3.0, v))
        return math.copysign(math.floor(abs(v) + 0.5), v)

    a7 = sum(cls(a) == cls(b) for a, b in zip(p, y)) / n
    tp = sum(a > 0 and b > 0 for a, b in zip(p, y))
    tn = sum(a <= 0 and b <= 0 for a, b in zip(p, y))
    fp = sum(a > 0 and b <= 0 for a, b in zip(p, y))
    fn = sum(a <= 0 and b > 0 for a, b in zip(p, y))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    m = math.fsum(abs(a - b) for a, b in zip(p, y)) / n
    mp, my = math.fsum(p) / n, math.fsum(y) / n
    cov = math.fsum((a - mp) * (b - my) for a, b in zip(p, y))
    r = cov / math.sqrt(math.fsum((a - mp) ** 2 for a in p) * math.fsum((b - my) ** 2 for b in y))
    return a7, (tp + tn) / n, f, m, r


def test_agreement_with_brute_force_on_1000_pairs():
    rng = np.random.default_rng(0)
    p = rng.uniform(-4, 4, 1000)
    y = np.round(rng.uniform(-3, 3, 1000) * 2) / 2  # includes exact ties and zeros
    report = evaluate_predictions(p, y)
    ref = _brute_force(p.tolist(), y.tolist())
    got = (report.acc7, report.acc2, report.f1, report.mae, report.corr)
    for g, r in zip(got, ref):
        assert abs(g - r) < 1e-12
    assert report.n == 1000


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 6), st.integers(-50, 50))
def test_pearson_exact_under_power_of_two_scale_and_integer_shift(seed, k, c):
    rng = np.random.default_rng(seed)
    p = rng.integers(-20, 21, 30).astype(float)
    y = rng.integers(-20, 21, 30).astype(float)
    if np.ptp(p) == 0 or np.ptp(y) == 0:
        return
    assert pearson(p * 2.0**k + c, y) == pearson(p, y)
    assert pearson(p, y * 2.0**k + c) == pearson(p, y)


def test_pearson_invariant_under_general_positive_affine_maps():
    rng = np.random.default_rng(1)
    p, y = rng.normal(size=200), rng.normal(size=200)
    assert pearson(3.7 * p - 1.3, 0.2 * y + 9.0) == pytest.approx(pearson(p, y), abs=1e-12)


def test_fractions_stay_in_range():
    rng = np.random.default_rng(2)
    for _ in range(20):
        r = evaluate_predictions(rng.normal(size=50) * 3, rng.normal(size=50) * 3)
        assert 0 <= r.acc7 <= 1 and 0 <= r.acc2 <= 1 and 0 <= r.f1 <= 1
        assert -1 <= r.corr <= 1


def test_constant_predictions_report_zero_corr():
    assert evaluate_predictions([0.0, 0.0], [1.0, -1.0]).corr == 0.0


def test_report_json_round_trip():
    r = evaluate_predictions([1.0, -0.5, 2.0], [0.5, -1.0, 1.0])
    assert MetricsReport.from_dict(json.loads(r.to_json())) == r
