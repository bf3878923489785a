import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_curve
from sdflayers.boundary import ExtractionConfig, extract, pixelwise_extract, soft_extract, zero_crossing
from sdflayers.sdf import vertical_signed_distance


def col(values):
    return np.asarray(values, dtype=float)[:, None]


def test_zero_crossing_examples():
    y, f = zero_crossing(col([2, 1, 0, -1, -2]))
    assert y[0] == 2.0 and not f[0]
    y, _ = zero_crossing(col([1.5, 0.5, -0.5]))
    assert y[0] == 1.5


def test_zero_crossing_flags():
    y, f = zero_crossing(col([1, 2, 3]))
    assert f[0] and np.isnan(y[0])
    y, f = zero_crossing(col([-1, 0.5, 2]))
    assert f[0]
    with pytest.raises(ValueError):
        zero_crossing(np.zeros((1, 3)))


def oracle_crossing(column, level=0.0):
    """Scan every transition; keep the one closest to the level, topmost on ties."""
    best = None
    for i in range(len(column) - 1):
        a, b = column[i] - level, column[i + 1] - level
        if a >= 0 >= b and a > b:
            score = min(abs(a), abs(b))
            if best is None or score < best[0]:
                best = (score, i + a / (a - b))
    return None if best is None else best[1]


@given(st.integers(0, 2 ** 32 - 1))
def test_multiple_transitions_match_scan_oracle(seed):
    r = np.random.default_rng(seed)
    field = r.normal(0, 2, (12, 6))
    y, flags = zero_crossing(field)
    for x in range(6):
        expect = oracle_crossing(field[:, x])
        if expect is None:
            assert flags[x]
        else:
            assert not flags[x] and y[x] == pytest.approx(expect, abs=1e-12)


def test_two_transitions_picks_smaller_residual():
    y, _ = zero_crossing(col([3, -3, 2, 0.2, -0.1, -2]))
    assert y[0] == pytest.approx(3 + 0.2 / 0.3)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40))
def test_round_trip_vertical(seed, height):
    r = np.random.default_rng(seed)
    c = r.uniform(0, height - 1, 9)
    y, f = zero_crossing(vertical_signed_distance(c, (height, 9)))
    assert not f.any()
    np.testing.assert_allclose(y, c, atol=1e-9)


def test_soft_extract_examples():
    d = vertical_signed_distance(np.full(3, 2.0), (5, 3)).values
    # symmetric rows around the crossing: taller grid keeps the mask symmetric
    d = vertical_signed_distance(np.full(3, 8.0), (17, 3)).values
    np.testing.assert_allclose(soft_extract(d, ExtractionConfig(s_const=1.0)), 8.0, atol=1e-12)
    d = vertical_signed_distance(np.full(3, 8.5), (18, 3)).values
    np.testing.assert_allclose(soft_extract(d, ExtractionConfig(s_const=1.0)), 8.5, atol=1e-6)
    np.testing.assert_allclose(soft_extract(np.full((9, 2), 5.0), ExtractionConfig(s_const=1.0)), 4.0)


def test_soft_extract_independent_formula(rng):
    d = rng.normal(0, 3, (20, 5))
    w = np.exp(-0.5 * ((d - 0.3) / 1.5) ** 2)
    expect = (np.arange(20)[:, None] * w).sum(0) / w.sum(0)
    np.testing.assert_allclose(soft_extract(d, ExtractionConfig(level=0.3, s_const=1.5)), expect, rtol=1e-12)


def test_soft_extract_underflow_is_defined():
    d = np.full((6, 2), 1e4)
    d[3] = 1e4 + 1
    y = soft_extract(d, ExtractionConfig(s_const=0.5))
    assert np.all(np.isfinite(y))


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 1.0, 2.0]))
def test_soft_close_to_zero_crossing(seed, s):
    r = np.random.default_rng(seed)
    c = random_curve(r, 8, 64, margin=10.0)
    f = vertical_signed_distance(c, (64, 8))
    soft = soft_extract(f, ExtractionConfig(s_const=s))
    hard, _ = zero_crossing(f)
    assert np.max(np.abs(soft - hard)) <= 0.05


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3))
def test_level_shift(seed, level):
    r = np.random.default_rng(seed)
    d = r.normal(0, 3, (10, 4))
    for mode in ("zero_crossing", "soft"):
        a, fa = extract(d, ExtractionConfig(level=level, mode=mode))
        b, fb = extract(d - level, ExtractionConfig(level=0.0, mode=mode))
        np.testing.assert_array_equal(fa, fb)
        np.testing.assert_allclose(a, b, atol=1e-9, equal_nan=True)


@given(st.integers(0, 2 ** 32 - 1))
def test_soft_extract_continuity(seed):
    r = np.random.default_rng(seed)
    c = random_curve(r, 6, 32, margin=6.0)
    d = vertical_signed_distance(c, (32, 6)).values
    eps = 1e-6
    pert = d + eps * r.uniform(-1, 1, d.shape)
    cfg = ExtractionConfig(s_const=1.0)
    # field slope is one, so a field change of eps moves the centroid by O(eps)
    assert np.max(np.abs(soft_extract(pert, cfg) - soft_extract(d, cfg))) <= 100 * eps


def test_config_validation():
    with pytest.raises(ValueError):
        ExtractionConfig(s_const=0)
    with pytest.raises(ValueError):
        ExtractionConfig(mode="marching")


def test_pixelwise_examples(rng):
    p = np.zeros((10, 1))
    p[7] = 1
    assert pixelwise_extract(p)[0] == 7
    assert pixelwise_extract(np.full((5, 3), 0.2))[0] == 0
    m = rng.uniform(size=(2, 8, 6))
    got = pixelwise_extract(m)
    for k in range(2):
        for x in range(6):
            best, row = -1, None
            for y in range(8):
                if m[k, y, x] > best:
                    best, row = m[k, y, x], y
            assert got[k, x] == row
    with pytest.raises(ValueError):
        pixelwise_extract(np.zeros((0, 3)))
