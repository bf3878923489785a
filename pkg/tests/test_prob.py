import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_curve, smooth_curve
from sdflayers.boundary import ExtractionConfig
from sdflayers.prob import (LOG_2PI, ClampConfig, ProbabilisticCurve, ProbabilisticSDF, clamp, clamped_l1_loss,
                            clamped_nll_loss, interpolate_column, nll_gaussian_pixel, propagate_uncertainty,
                            regr_nll_loss, total_nll)
from sdflayers.sdf import vertical_signed_distance

HALF_LOG_2PI = 0.9189385332046727417803297364056176398614
# 0.5 * (0.25 + ln 4 + ln 2pi), 40-digit reference evaluation
NLL_MU0_T1_S2 = 1.737085713764618051197561857863794207937


def test_clamp_examples():
    assert clamp(35, 30) == 30
    assert clamp(-35, 30) == -30
    assert clamp(5, 30) == 5
    with pytest.raises(ValueError):
        clamp(1, 0)
    with pytest.raises(ValueError):
        ClampConfig(-1)


def test_pixel_nll_values():
    assert nll_gaussian_pixel(3.0, 1.0, 3.0) == pytest.approx(HALF_LOG_2PI, abs=1e-15)
    assert nll_gaussian_pixel(5.0, 1.0, 3.0) == pytest.approx(2 + HALF_LOG_2PI, abs=1e-15)
    assert nll_gaussian_pixel(0.0, 2.0, 1.0) == pytest.approx(NLL_MU0_T1_S2, rel=1e-15)
    with pytest.raises(ValueError):
        nll_gaussian_pixel(0.0, 0.0, 1.0)


def test_total_nll_perfect_and_loop_oracle(rng):
    t = rng.normal(size=(8, 8))
    f = ProbabilisticSDF(t, np.ones_like(t))
    assert total_nll(f, t) == pytest.approx(64 * HALF_LOG_2PI, rel=1e-14)
    mu, sigma = rng.normal(size=(8, 8)), rng.uniform(0.2, 3, (8, 8))
    loop = 0.0
    for i in range(8):
        for j in range(8):
            r = t[i, j] - mu[i, j]
            loop += 0.5 * (r * r / sigma[i, j] ** 2 + np.log(sigma[i, j] ** 2) + np.log(2 * np.pi))
    assert total_nll(ProbabilisticSDF(mu, sigma), t) == pytest.approx(loop, rel=1e-12)
    with pytest.raises(ValueError):
        total_nll(f, t[:4])


@given(st.integers(0, 2 ** 32 - 1))
def test_total_nll_least_squares_identity(seed):
    r = np.random.default_rng(seed)
    mu, t = r.normal(0, 5, (6, 7)), r.normal(0, 5, (6, 7))
    sse = np.sum((t - mu) ** 2)
    expect = 0.5 * sse + mu.size * 0.5 * LOG_2PI
    assert total_nll(ProbabilisticSDF(mu, np.ones_like(mu)), t) == pytest.approx(expect, rel=1e-10)


def test_clamped_l1_examples(rng):
    assert clamped_l1_loss(np.ones((3, 3)), np.ones((3, 3))) == 0
    assert clamped_l1_loss(np.array([[100.0]]), np.array([[-100.0]]), ClampConfig(30)) == 60
    p, t = rng.normal(0, 40, (8, 8)), rng.normal(0, 40, (8, 8))
    loop = sum(abs(min(30, max(-30, t[i, j])) - min(30, max(-30, p[i, j]))) for i in range(8) for j in range(8))
    assert clamped_l1_loss(p, t, ClampConfig(30)) == pytest.approx(loop, rel=1e-12)
    assert clamped_l1_loss(p, t, 30.0) <= 2 * 30 * p.size


def test_clamped_nll_examples(rng):
    t = rng.normal(0, 50, (5, 5))
    f = ProbabilisticSDF(np.clip(t, -29, 29), np.ones_like(t))
    assert clamped_nll_loss(f, t) == 0
    assert clamped_nll_loss(ProbabilisticSDF([[2.0]], [[1.0]]), np.array([[0.0]])) == 2
    mu, s, t = rng.normal(0, 40, (8, 8)), rng.uniform(0.3, 4, (8, 8)), rng.normal(0, 40, (8, 8))
    loop = 0.0
    for i in range(8):
        for j in range(8):
            r = min(29, max(-29, t[i, j])) - min(29, max(-29, mu[i, j]))
            loop += 0.5 * (r * r / s[i, j] ** 2 + np.log(s[i, j] ** 2))
    assert clamped_nll_loss(ProbabilisticSDF(mu, s), t) == pytest.approx(loop, rel=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.floats(5, 50))
def test_clamp_neutrality(seed, delta):
    r = np.random.default_rng(seed)
    mu, t = r.uniform(-delta, delta, (4, 5)), r.uniform(-delta, delta, (4, 5))
    s = r.uniform(0.5, 2, (4, 5))
    assert clamped_l1_loss(mu, t, delta) == pytest.approx(np.abs(t - mu).sum(), rel=1e-12)
    unclamped = total_nll(ProbabilisticSDF(mu, s), t) - mu.size * 0.5 * LOG_2PI
    assert clamped_nll_loss(ProbabilisticSDF(mu, s), t, delta) == pytest.approx(unclamped, rel=1e-9, abs=1e-9)


def test_regr_nll():
    gt = np.array([1.0, 2.0, 3.0])
    perfect = ProbabilisticCurve(gt, np.ones(3))
    assert regr_nll_loss(perfect, gt) == pytest.approx(3 * HALF_LOG_2PI)
    off = ProbabilisticCurve(gt + [0, 3, 0], np.ones(3))
    assert regr_nll_loss(off, gt) - regr_nll_loss(perfect, gt) == pytest.approx(4.5)
    with pytest.raises(ValueError):
        regr_nll_loss(perfect, gt[:2])


def test_regr_nll_loop_oracle(rng):
    mu, s, gt = rng.normal(size=20), rng.uniform(0.5, 2, 20), rng.normal(size=20)
    loop = sum(0.5 * ((g - m) ** 2 / v ** 2 + np.log(v ** 2) + np.log(2 * np.pi)) for m, v, g in zip(mu, s, gt))
    assert regr_nll_loss(ProbabilisticCurve(mu, s), gt) == pytest.approx(loop, rel=1e-12)


@given(st.floats(0.05, 20))
def test_nll_stationary_at_abs_residual(r):
    h = 1e-4 * r
    lo = nll_gaussian_pixel(0.0, r - h, r) - nll_gaussian_pixel(0.0, r - 2 * h, r)
    hi = nll_gaussian_pixel(0.0, r + 2 * h, r) - nll_gaussian_pixel(0.0, r + h, r)
    assert lo < 0 < hi


@given(st.floats(0.1, 5), st.floats(0, 10), st.floats(0, 10))
def test_nll_increasing_in_residual(sigma, a, b):
    lo, hi = sorted((a, b))
    if hi - lo > 1e-6:
        assert nll_gaussian_pixel(0.0, sigma, lo) < nll_gaussian_pixel(0.0, sigma, hi)


def test_probabilistic_types_validate():
    with pytest.raises(ValueError):
        ProbabilisticSDF(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ProbabilisticSDF(np.zeros((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        ProbabilisticCurve([1.0, 2.0], [1.0])


def test_curve_csv_round_trip(tmp_path, rng):
    c = ProbabilisticCurve(rng.normal(size=5), rng.uniform(0.1, 1, 5), [0, 1, 0, 0, 1])
    c.save(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("x,mu,sigma,flag\n")
    back = ProbabilisticCurve.load(tmp_path / "p.csv")
    assert np.array_equal(back.mu, c.mu) and np.array_equal(back.sigma, c.sigma)
    assert np.array_equal(back.flags, c.flags)


def test_propagation_constant_sigma(rng):
    c = random_curve(rng, 12, 16)
    mu = vertical_signed_distance(c, (16, 12)).values
    pc = propagate_uncertainty(ProbabilisticSDF(mu, np.full(mu.shape, 1.7)),
                               ExtractionConfig(mode="zero_crossing"))
    np.testing.assert_allclose(pc.sigma, 1.7)
    np.testing.assert_allclose(pc.mu, c, atol=1e-9)


def test_propagation_linear_sigma_analytic(rng):
    c = random_curve(rng, 12, 16)
    mu = vertical_signed_distance(c, (16, 12)).values
    rows = np.arange(16.0)[:, None]
    sigma = 0.5 + 0.1 * rows + 0.02 * np.arange(12.0)[None, :]
    pc = propagate_uncertainty(ProbabilisticSDF(mu, sigma), ExtractionConfig(mode="zero_crossing"))
    np.testing.assert_allclose(pc.sigma, 0.5 + 0.1 * c + 0.02 * np.arange(12.0), atol=1e-12)


def test_propagation_flags_missing_crossing():
    mu = np.ones((6, 3))
    mu[:, 1] = [2, 1, 0, -1, -2, -3]
    pc = propagate_uncertainty(ProbabilisticSDF(mu, np.ones((6, 3))))
    assert list(pc.flags) == [True, False, True]
    assert np.isinf(pc.sigma[0]) and np.isinf(pc.sigma[2]) and pc.sigma[1] == 1.0


def test_interpolate_column():
    v = np.arange(10.0).reshape(5, 2)
    np.testing.assert_allclose(interpolate_column(v, [1.5, 4.0]), [3.0, 9.0])
