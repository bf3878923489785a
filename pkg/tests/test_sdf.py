import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from conftest import random_curve, smooth_curve
from sdflayers.sdf import (SignedDistanceField, check_eikonal, euclidean_signed_distance, load_sdf,
                           polyline_signed_distance, rasterize_curve, save_sdf, sign_field, signed_distance,
                           unsigned_distance, vertical_signed_distance)


def edt_oracle(mask):
    """Exact Euclidean distance to the nearest set pixel (independent implementation)."""
    return ndimage.distance_transform_edt(~mask)


def test_rasterize_flat_and_half_up():
    m = rasterize_curve([2, 2, 2], (5, 3))
    assert m[2].all() and m.sum() == 3
    assert rasterize_curve([1.5], (4, 1))[2, 0]
    assert rasterize_curve([2.4999], (4, 1))[2, 0]


def test_rasterize_errors():
    with pytest.raises(ValueError):
        rasterize_curve([1, 2], (5, 3))
    with pytest.raises(ValueError):
        rasterize_curve([5.0], (5, 1))


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 20), st.integers(1, 20))
def test_rasterize_one_pixel_per_column(seed, height, width):
    c = np.random.default_rng(seed).uniform(0, height - 1, width)
    m = rasterize_curve(c, (height, width))
    assert np.all(m.sum(axis=0) == 1)


def test_single_pixel_distances():
    m = np.zeros((3, 3), bool)
    m[1, 1] = True
    for method in ("exact_bruteforce", "danielsson"):
        d = unsigned_distance(m, method)
        np.testing.assert_allclose(d, [[2 ** .5, 1, 2 ** .5], [1, 0, 1], [2 ** .5, 1, 2 ** .5]])


def test_horizontal_line_distance():
    m = np.zeros((7, 5), bool)
    m[3] = True
    expect = np.abs(np.arange(7) - 3)[:, None] * np.ones(5)
    for method in ("exact_bruteforce", "danielsson"):
        np.testing.assert_array_equal(unsigned_distance(m, method), expect)


def test_unsigned_errors():
    with pytest.raises(ValueError, match="no boundary"):
        unsigned_distance(np.zeros((3, 3), bool))
    with pytest.raises(ValueError, match="unknown"):
        unsigned_distance(np.ones((3, 3), bool), "fast")


def test_exact_matches_scipy_oracle(rng):
    for _ in range(20):
        m = rasterize_curve(random_curve(rng, 32, 32), (32, 32))
        extra = rng.uniform(size=m.shape) < 0.01
        m = m | extra
        np.testing.assert_allclose(unsigned_distance(m, "exact_bruteforce"), edt_oracle(m), atol=1e-12)


def test_danielsson_bound_random_masks(rng):
    worst = 0.0
    for _ in range(60):
        m = rasterize_curve(random_curve(rng, 64, 64, 0), (64, 64))
        worst = max(worst, np.abs(unsigned_distance(m) - edt_oracle(m)).max())
    assert worst <= 0.09


def test_sign_field_flat_column():
    c = [2.0]
    d = sign_field(unsigned_distance(rasterize_curve(c, (5, 1))), c)
    np.testing.assert_array_equal(d.values[:, 0], [2, 1, 0, -1, -2])
    assert d.construction == "euclidean"


def test_flat_euclidean_equals_vertical(rng):
    c = np.full(9, 4.0)
    e = euclidean_signed_distance(c, (11, 9))
    v = vertical_signed_distance(c, (11, 9))
    np.testing.assert_array_equal(e.values, v.values)


def test_sign_rule_against_nearest_pixel_search(rng):
    c = np.sort(rng.uniform(2, 13, 12))
    shape = (16, 12)
    d = euclidean_signed_distance(c, shape, "exact_bruteforce").values
    m = rasterize_curve(c, shape)
    by, bx = np.nonzero(m)
    for y in range(shape[0]):
        for x in range(shape[1]):
            dist2 = (by - y) ** 2 + (bx - x) ** 2
            k = np.flatnonzero(dist2 == dist2.min())
            # ties: nearest pixel in the leftmost column
            k = k[np.argmin(bx[k])]
            expect = 1.0 if y <= by[k] else -1.0
            assert np.sign(d[y, x]) == expect or d[y, x] == 0
            assert abs(d[y, x]) == pytest.approx(np.sqrt(dist2.min()))


def test_vertical_values():
    np.testing.assert_array_equal(vertical_signed_distance([2.0], (5, 1)).values[:, 0], [2, 1, 0, -1, -2])


@given(st.integers(0, 2 ** 32 - 1))
def test_vertical_unit_slope_and_eikonal(seed):
    r = np.random.default_rng(seed)
    c = random_curve(r, 16, 20)
    f = vertical_signed_distance(c, (20, 16))
    np.testing.assert_allclose(np.diff(f.values, axis=0), -1.0, atol=1e-12)
    rep = check_eikonal(f)
    assert rep.violating_fraction == 0 and rep.max_vertical_gradient_error <= 1e-12


@given(st.integers(0, 2 ** 32 - 1))
def test_vertical_antisymmetry(seed):
    r = np.random.default_rng(seed)
    h = 21
    c = random_curve(r, 10, h)
    f = vertical_signed_distance(c, (h, 10)).values
    g = vertical_signed_distance((h - 1) - c, (h, 10)).values
    np.testing.assert_allclose(g[::-1], -f, atol=1e-12)


def test_eikonal_flat_euclidean_zero():
    rep = check_eikonal(euclidean_signed_distance(np.full(8, 3.0), (8, 8)))
    assert rep.max_vertical_gradient_error == 0


def test_eikonal_45_degree_polyline():
    x = np.arange(32, dtype=float)
    f = polyline_signed_distance(x + 10, (64, 32))
    rep = check_eikonal(f)
    assert rep.max_vertical_gradient_error == pytest.approx(1 - 1 / np.sqrt(2), abs=1e-3)
    assert 0 < rep.violating_fraction <= 1


def test_polyline_matches_vertical_on_flat():
    c = np.full(6, 2.5)
    np.testing.assert_allclose(polyline_signed_distance(c, (6, 6)).values,
                               vertical_signed_distance(c, (6, 6)).values)


def test_signed_distance_dispatch(rng):
    c = smooth_curve(rng, 16, 16)
    assert signed_distance(c, (16, 16)).construction == "vertical"
    assert signed_distance(c, (16, 16), "euclidean").construction == "euclidean"
    with pytest.raises(ValueError):
        signed_distance(c, (16, 16), "manhattan")


def test_eikonal_needs_two_rows():
    with pytest.raises(ValueError):
        check_eikonal(np.zeros((1, 4)))


def test_field_invariants():
    with pytest.raises(ValueError):
        SignedDistanceField(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        SignedDistanceField(np.zeros((2, 2)), sign_convention="positive_below")


def test_sdf_serialization(tmp_path, rng):
    c = smooth_curve(rng, 8, 8)
    f = euclidean_signed_distance(c, (8, 8))
    save_sdf(f, tmp_path / "f.osk")
    assert "construction = euclidean" in (tmp_path / "f.hdr").read_text()
    g = load_sdf(tmp_path / "f.osk")
    assert g.construction == "euclidean"
    np.testing.assert_allclose(g.values, f.values, rtol=1e-6)
