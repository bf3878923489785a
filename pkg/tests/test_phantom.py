import hashlib
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdflayers.phantom import (MARGIN, CorpusWarning, PhantomConfig, as_arrays, corpus_config, export_corpus,
                               generate, load_corpus)


def corpus_hash(samples):
    h = hashlib.sha256()
    for scan, curves in samples:
        h.update(scan.intensities.tobytes())
        h.update(curves.as_array().tobytes())
    return h.hexdigest()


def test_flat_layers_without_wobble():
    cfg = PhantomConfig(smoothness=0, bump_rate=0.0, mean_gap=8.0, min_gap=4.0, texture_noise_sd=0.0, seed=1)
    _, curves = as_arrays(generate(cfg, 5))
    assert np.all(np.ptp(curves, axis=2) == 0)
    np.testing.assert_allclose(np.diff(curves[:, :, 0], axis=1), 8.0)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_layers_ordered_and_inside(seed, n_layers):
    cfg = PhantomConfig(n_layers=n_layers, intensity_levels=tuple(np.linspace(0.1, 0.9, n_layers + 1)), seed=seed)
    _, curves = as_arrays(generate(cfg, 3))
    assert np.all(np.diff(curves, axis=1) >= cfg.min_gap - 1e-9)
    assert curves.min() >= MARGIN - 1e-9 and curves.max() <= cfg.height - 1 - MARGIN + 1e-9


@given(st.integers(0, 10_000))
def test_curvature_bound(seed):
    cfg = PhantomConfig(seed=seed, bump_rate=0.5)
    _, curves = as_arrays(generate(cfg, 4))
    second = np.abs(curves[..., 2:] - 2 * curves[..., 1:-1] + curves[..., :-2])
    assert second.max() <= cfg.curvature_bound() + 1e-9


def test_deterministic_and_seed_sensitive():
    a = corpus_hash(generate(PhantomConfig(seed=7), 10))
    assert a == corpus_hash(generate(PhantomConfig(seed=7), 10))
    assert a != corpus_hash(generate(PhantomConfig(seed=8), 10))


def test_intensities_in_range_and_banded():
    cfg = PhantomConfig(texture_noise_sd=0.0, seed=2)
    scan, curves = generate(cfg, 1)[0]
    a = scan.intensities
    assert a.min() >= 0 and a.max() <= 1
    c = curves.as_array()
    x = 10
    above = int(np.floor(c[0, x])) - 2
    assert a[above, x] == pytest.approx(cfg.intensity_levels[0], abs=1e-6)


def test_generation_fast():
    t = time.perf_counter()
    generate(PhantomConfig(seed=0), 200)
    assert time.perf_counter() - t < 10


def test_export_reload_bit_exact(tmp_path):
    cfg = PhantomConfig(seed=4)
    samples = generate(cfg, 3)
    export_corpus(samples, tmp_path, cfg)
    back = load_corpus(tmp_path, expected_seed=4)
    for (s, c), (s2, c2) in zip(samples, back):
        assert np.array_equal(s.intensities, s2.intensities)
        np.testing.assert_allclose(c.as_array(), c2.as_array(), rtol=0, atol=1e-12)
    assert corpus_config(tmp_path) == cfg


def test_seed_mismatch_warns(tmp_path):
    cfg = PhantomConfig(seed=4)
    export_corpus(generate(cfg, 1), tmp_path, cfg)
    with pytest.warns(CorpusWarning):
        load_corpus(tmp_path, expected_seed=5)


def test_invalid_configs():
    with pytest.raises(ValueError, match="infeasible"):
        PhantomConfig(height=16, n_layers=3, min_gap=6)
    with pytest.raises(ValueError):
        PhantomConfig(mean_gap=2, min_gap=4)
    with pytest.raises(ValueError):
        PhantomConfig(intensity_levels=(0.1, 0.2))
    with pytest.raises(ValueError):
        generate(PhantomConfig(), -1)
