import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mib.checks import grid_product_moments, kl_suite, poe_suite
from mib.errors import ConfigurationError
from mib.gaussian import (
    DiagonalGaussian,
    NoiseDraw,
    kl_monte_carlo,
    kl_monte_carlo_stats,
    kl_to_standard,
    poe_fuse,
    reparameterize,
)
from mib.gradcheck import finite_difference_check
from mib.tensor import Parameter

finite = st.floats(-3, 3, allow_nan=False)
positive = st.floats(0.1, 3.0, allow_nan=False)


def test_constructor_validation():
    with pytest.raises(ConfigurationError):
        DiagonalGaussian([0.0, 1.0], [1.0])
    with pytest.raises(ConfigurationError):
        DiagonalGaussian([0.0], [0.0])
    assert DiagonalGaussian([0.0], [1e-9]).std.data[0] == 1e-6


def test_reparameterize_zero_noise_is_mean():
    g = DiagonalGaussian([1.5, -2.0], [0.3, 4.0])
    assert np.array_equal(reparameterize(g, NoiseDraw.zeros(2)).data, g.mean.data)


def test_reparameterize_single_multiply():
    g = DiagonalGaussian([0.0], [2.0])
    assert reparameterize(g, np.array([1.0])).data.tolist() == [2.0]


def test_reparameterize_dim_mismatch():
    with pytest.raises(ConfigurationError):
        reparameterize(DiagonalGaussian([0.0], [1.0]), np.zeros(2))


def test_reparameterize_batched_draws_match_moments():
    rng = np.random.default_rng(4)
    n = 100_000
    g = DiagonalGaussian(np.tile([0.7, -1.2], (n, 1)), np.tile([0.5, 2.0], (n, 1)))
    z = reparameterize(g, NoiseDraw.sample((n, 2), rng)).data
    assert np.all(np.abs(z.mean(0) - [0.7, -1.2]) < 3 * np.array([0.5, 2.0]) / math.sqrt(n))
    var_se = np.array([0.25, 4.0]) * math.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(z.var(0, ddof=1) - [0.25, 4.0]) < 3 * var_se)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, positive, finite, finite), min_size=1, max_size=5))
def test_reparameterize_is_linear_in_noise(rows):
    mean, std, e1, e2 = (np.array(c) for c in zip(*rows))
    g = DiagonalGaussian(mean, std)
    z = lambda e: reparameterize(g, e).data  # noqa: E731
    lhs = z(e1) + z(e2) - z(np.zeros_like(e1))
    np.testing.assert_allclose(lhs, z(e1 + e2), rtol=0, atol=1e-12)


def test_reparameterize_gradient():
    mean = Parameter(np.array([0.2, -0.4]), "mean")
    std = Parameter(np.array([0.7, 1.3]), "std")
    eps = np.array([0.5, -1.5])
    loss = lambda: (reparameterize(DiagonalGaussian(mean, std), eps) ** 2).sum()  # noqa: E731
    assert finite_difference_check(loss, [mean, std]) < 1e-6


def test_kl_examples():
    assert kl_to_standard(DiagonalGaussian([0.0, 0.0], [1.0, 1.0])).item() == 0.0
    assert kl_to_standard(DiagonalGaussian([1.0], [1.0])).item() == pytest.approx(0.5, abs=1e-15)
    e = DiagonalGaussian([0.0], [math.sqrt(math.e)])
    assert kl_to_standard(e).item() == pytest.approx(0.5 * (math.e - 2), abs=1e-14)
    assert 0.5 * (math.e - 2) == pytest.approx(0.35914, abs=1e-5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, positive), min_size=1, max_size=6))
def test_kl_is_nonnegative(rows):
    mean, std = (np.array(c) for c in zip(*rows))
    kl = kl_to_standard(DiagonalGaussian(mean, std)).item()
    assert kl >= 0
    if np.all(mean == 0) and np.all(std == 1):
        assert kl == 0


def test_kl_batch_is_per_row():
    g = DiagonalGaussian([[0.0], [1.0]], [[1.0], [1.0]])
    assert kl_to_standard(g).data.tolist() == [0.0, 0.5]


def test_kl_gradient():
    mean = Parameter(np.array([0.3, -1.1]), "mean")
    std = Parameter(np.array([0.6, 1.8]), "std")
    loss = lambda: kl_to_standard(DiagonalGaussian(mean, std))  # noqa: E731
    assert finite_difference_check(loss, [mean, std]) < 1e-6


def test_monte_carlo_standard_normal_near_zero():
    est, se = kl_monte_carlo_stats(DiagonalGaussian([0.0, 0.0], [1.0, 1.0]), 10_000,
                                   np.random.default_rng(0))
    # every sampled term is exactly 0 for identical distributions
    assert abs(est) <= 3 * se + 1e-12


def test_monte_carlo_matches_analytic_on_random_gaussians():
    results = kl_suite(seed=11, n_cases=20)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]


def test_monte_carlo_single_sample_is_unbiased():
    rng = np.random.default_rng(5)
    g = DiagonalGaussian([0.8, -0.3], [0.6, 1.4])
    draws = np.array([kl_monte_carlo(g, 1, rng) for _ in range(10_000)])
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - kl_to_standard(g).item()) < 3 * se


def test_monte_carlo_rejects_zero_samples():
    with pytest.raises(ConfigurationError):
        kl_monte_carlo(DiagonalGaussian([0.0], [1.0]), 0, np.random.default_rng(0))


# -- product of experts -----------------------------------------------------
def test_poe_single_standard_expert():
    out = poe_fuse([DiagonalGaussian([0.0], [1.0])])
    assert out.mean.data.tolist() == [0.0]
    assert out.var.data[0] == pytest.approx(0.5, abs=1e-15)


def test_poe_two_unit_variance_experts():
    out = poe_fuse([DiagonalGaussian([1.2], [1.0]), DiagonalGaussian([-0.3], [1.0])])
    assert out.mean.data[0] == pytest.approx((1.2 - 0.3) / 3, abs=1e-15)
    assert out.var.data[0] == pytest.approx(1 / 3, abs=1e-15)


def test_poe_vague_experts_leave_the_prior():
    out = poe_fuse([DiagonalGaussian([5.0], [math.sqrt(1e9)])] * 2)
    assert out.mean.data[0] == pytest.approx(0.0, abs=1e-7)
    assert out.var.data[0] == pytest.approx(1.0, abs=1e-8)


def test_poe_empty_is_error():
    with pytest.raises(ConfigurationError):
        poe_fuse([])


def test_poe_dim_mismatch_is_error():
    with pytest.raises((ConfigurationError, ValueError)):
        poe_fuse([DiagonalGaussian([0.0], [1.0]), DiagonalGaussian([0.0, 1.0], [1.0, 1.0])])


def test_poe_vague_expert_is_ignored_by_the_mean():
    a, b = DiagonalGaussian([1.0], [0.5]), DiagonalGaussian([2.0], [0.5])
    huge = DiagonalGaussian([100.0], [1e6])
    with_huge = poe_fuse([a, b, huge]).mean.data[0]
    assert with_huge == pytest.approx(poe_fuse([a, b]).mean.data[0], abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, positive), min_size=1, max_size=4))
def test_poe_variance_bound(experts):
    gs = [DiagonalGaussian([m], [s]) for m, s in experts]
    var = poe_fuse(gs).var.data[0]
    assert var <= min(1.0, min(s * s for _, s in experts)) * (1 + 1e-12)


def test_grid_oracle_on_known_product():
    mean, var = grid_product_moments([1.2, -0.3], [1.0, 1.0])
    assert mean == pytest.approx(0.3, abs=1e-10)
    assert var == pytest.approx(1 / 3, abs=1e-10)


def test_poe_matches_grid_oracle():
    results = poe_suite(seed=5, n_cases=20)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
