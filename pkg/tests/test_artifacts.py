import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdflayers.artifacts import KINDS, NoiseConfig, corrupt, shadow_profile, shift_row
from sdflayers.grid import BScan
from sdflayers.phantom import PhantomConfig, generate


@pytest.fixture(scope="module")
def scan():
    return generate(PhantomConfig(seed=3), 1)[0][0].intensities


@pytest.mark.parametrize("kind", KINDS)
def test_region_locality(scan, kind):
    out, _ = corrupt(scan, NoiseConfig(kind=kind, region=(20, 36), seed=1, shadow_mu=28.0))
    assert np.array_equal(out[:, :20], scan[:, :20])
    assert np.array_equal(out[:, 36:], scan[:, 36:])
    assert not np.array_equal(out[:, 20:36], scan[:, 20:36])
    assert out.min() >= 0 and out.max() <= 1


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(scan, kind):
    cfg = NoiseConfig(kind=kind, region=(5, 40), seed=9)
    a, pa = corrupt(scan, cfg)
    b, pb = corrupt(scan, cfg)
    assert np.array_equal(a, b) and pa == pb


def test_bscan_in_bscan_out(scan):
    out, _ = corrupt(BScan(scan), NoiseConfig(kind="speckle"))
    assert isinstance(out, BScan)


def test_speckle_two_valued_binomial(scan):
    cfg = NoiseConfig(kind="speckle", region=(0, 32), speckle_p=0.5, seed=2)
    out, params = corrupt(scan, cfg)
    block = out[:, :32]
    assert set(np.unique(block)) == {scan.min(), scan.max()}
    n = block.size
    frac = np.mean(block == scan.max())
    assert abs(frac - 0.5) <= 3 * np.sqrt(0.25 / n)
    assert params == {"p": 0.5}


def test_speckle_p_validated():
    with pytest.raises(ValueError):
        NoiseConfig(kind="speckle", speckle_p=0.9)


def test_blinking_matches_scan_statistics(scan):
    out, params = corrupt(scan, NoiseConfig(kind="blinking", region=(0, 64), seed=5))
    med, sd = np.median(scan), np.std(scan)
    assert params["median"] == pytest.approx(med)
    assert abs(out.mean() - med) <= 3 * sd / np.sqrt(out.size) + 0.02  # clipping bias at [0, 1]


def test_shadow_centre_attenuated(scan):
    out, params = corrupt(scan, NoiseConfig(kind="shadow", shadow_mu=30.0, shadow_sigma=10.0))
    assert np.all(out[:, 30] <= 1e-3 * scan[:, 30] + 1e-15)
    assert params["mu"] == 30.0
    s = shadow_profile(64, 30.0, 10.0)
    assert s[30] == 1.0 and np.all(s <= 1)


def test_shadow_pdf_mode_integrates_to_one():
    s = shadow_profile(2000, 1000.0, 50.0, mode="pdf")
    assert s.sum() == pytest.approx(1.0, abs=1e-6)


def test_motion_zero_is_identity(scan):
    out, params = corrupt(scan, NoiseConfig(kind="motion", delta_max=0, seed=3))
    assert np.array_equal(out, scan)
    assert set(params["shifts"]) == {0}


def test_motion_rows_are_shifted_copies(scan):
    out, params = corrupt(scan, NoiseConfig(kind="motion", region=(10, 50), delta_max=3, seed=4))
    for y, s in enumerate(params["shifts"]):
        assert abs(s) <= 3
        np.testing.assert_array_equal(out[y, 10:50], shift_row(scan[y, 10:50], s))


def test_motion_too_wide_shift_rejected(scan):
    with pytest.raises(ValueError):
        corrupt(scan, NoiseConfig(kind="motion", region=(0, 3), delta_max=3))


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.integers(-5, 5))
def test_shift_row_preserves_values(row, s):
    row = np.array(row)
    out = shift_row(row, s)
    assert set(out) <= set(row)
    if abs(s) < row.size:
        lo, hi = max(s, 0), row.size + min(s, 0)
        np.testing.assert_array_equal(out[lo:hi], row[lo - s:hi - s])


def test_control_is_copy(scan):
    out, params = corrupt(scan, NoiseConfig(kind="none", region=(0, 8)))
    assert np.array_equal(out, scan) and out is not scan and params == {}


def test_bad_configs(scan):
    with pytest.raises(ValueError):
        NoiseConfig(kind="rain")
    with pytest.raises(ValueError):
        NoiseConfig(region=(5, 5))
    with pytest.raises(ValueError):
        corrupt(scan, NoiseConfig(region=(0, 100)))
