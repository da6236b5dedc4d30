import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sarmonet.errors import DomainError, IngestionError, ParameterError
from sarmonet.speckle import (DatasetSpec, analytic_mean, build_dataset, derive_seed,
                              extract_patches, point_scatterer_scene, sample_speckle,
                              simulate_pair, synth_texture, synthetic_sources)
from sarmonet.stats import ks_statistic, rayleigh_cdf


def test_unit_power_single_look():
    n = sample_speckle(1000, 1000, 1, seed=7).values
    assert 0.995 <= np.mean(n ** 2) <= 1.005


@pytest.mark.parametrize("L", [1, 2, 4])
def test_unit_power_within_3_sigma(L):
    n = sample_speckle(1000, 1000, L, seed=100 + L).values
    sigma = math.sqrt(1.0 / L / 1e6)
    assert abs(np.mean(n ** 2) - 1) < 3 * sigma


def test_single_look_rayleigh_ks():
    n = sample_speckle(1000, 1000, 1, seed=1).values
    assert ks_statistic(n, rayleigh_cdf) < 0.002


def test_speckle_deterministic_and_validated():
    a = sample_speckle(16, 9, 2, seed=4).values
    assert np.array_equal(a, sample_speckle(16, 9, 2, seed=4).values)
    assert not np.array_equal(a, sample_speckle(16, 9, 2, seed=5).values)
    with pytest.raises(ParameterError):
        sample_speckle(0, 5)
    with pytest.raises(ParameterError):
        sample_speckle(5, 5, looks=0)


def test_simulate_pair_examples():
    ones = np.ones((64, 64))
    p = simulate_pair(ones, 1, seed=3)
    assert np.array_equal(p.noisy, sample_speckle(64, 64, 1, seed=3).values)
    z = simulate_pair(np.zeros((8, 8)), 1, seed=3)
    assert not np.any(z.noisy)
    half = simulate_pair(np.full((1000, 1000), 0.5), 1, seed=8)
    assert np.mean(half.noisy ** 2) == pytest.approx(0.25, rel=0.01)
    with pytest.raises(DomainError):
        simulate_pair(-ones, 1, seed=0)
    with pytest.raises(DomainError):
        simulate_pair(2 * ones, 1, seed=0)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_multiplicativity_exact(h, w, seed, L):
    clean = np.random.default_rng(seed).random((h, w))
    p = simulate_pair(clean, L, seed=seed)
    assert np.max(np.abs(p.noisy - p.clean * p.speckle.values)) == 0


def test_textures_basic():
    assert np.all(synth_texture("constant", 8, 8, {"c": 0.5}) == 0.5)
    ramp = synth_texture("ramp", 10, 20)
    assert np.all(np.diff(ramp, axis=1) >= 0)
    assert np.array_equal(synth_texture("gradient", 10, 20), ramp)
    for kind in ("checkerboard", "gamma-texture", "mosaic", "point-scatterers"):
        img = synth_texture(kind, 64, 64, seed=1)
        assert img.min() >= 0 and img.max() <= 1
    with pytest.raises(ParameterError):
        synth_texture("stripes", 8, 8)


def test_point_scatterers_count_poisson():
    h = w = 1000
    img, mask = point_scatterer_scene(h, w, 0.15, 5.0, 1e-3, seed=2)
    # isolation removes a fraction 1 - (1 - p)^8 of the candidates
    lam = 1e-3 * h * w * (1 - 1e-3) ** 8
    assert abs(mask.sum() - lam) < 4 * math.sqrt(lam)
    assert np.all(img[mask] >= 5 * 0.15 - 1e-12)
    assert np.all(img[~mask] == 0.15)
    # isolated: no two flagged pixels are 8-neighbours
    r, c = np.nonzero(mask)
    d = np.max(np.abs(np.stack([r[:, None] - r[None], c[:, None] - c[None]])), axis=0)
    np.fill_diagonal(d, 99)
    assert d.min() > 1


def test_recipe_means():
    srcs = synthetic_sources("constant+gradient+gamma-texture", 9, 128, seed=3)
    for s in srcs:
        mean = analytic_mean(s.kind, s.params)
        tol = 0.02 if s.kind == "gamma-texture" else 1e-9
        assert s.image.mean() == pytest.approx(mean, abs=tol)


def test_tiling_and_split():
    assert len(extract_patches(np.zeros((256, 256)), 64, 64)) == 16
    spec = DatasetSpec(source="synthetic:constant", n_images=1, image_size=256, patch_size=64)
    tr, va = build_dataset(spec)
    assert len(tr) + len(va) == 16
    spec = DatasetSpec(source="synthetic:ramp", n_images=4, image_size=50, patch_size=10,
                       train_frac=0.8, val_frac=0.2)
    tr, va = build_dataset(spec)
    assert (len(tr), len(va)) == (80, 20)
    assert not {r.id for r in tr.records} & {r.id for r in va.records}


def test_dataset_deterministic():
    spec = DatasetSpec(n_images=5, image_size=64, patch_size=32, seed=11)
    a, b = build_dataset(spec), build_dataset(spec)
    for x, y in zip(a, b):
        assert x.noisy.tobytes() == y.noisy.tobytes() and x.clean.tobytes() == y.clean.tobytes()
        assert x.records == y.records
    rec = a[0].records[0]
    assert rec.seed == derive_seed(11, 0, rec.id)


def test_dataset_errors(tmp_path):
    with pytest.raises(ParameterError):
        build_dataset(DatasetSpec(n_images=1, image_size=32, patch_size=64))
    with pytest.raises(ParameterError):
        DatasetSpec(train_frac=0.7, val_frac=0.2)
    with pytest.raises(IngestionError):
        build_dataset(DatasetSpec(source=str(tmp_path / "missing")))
    with pytest.raises(IngestionError):
        build_dataset(DatasetSpec(source=str(tmp_path)))
    (tmp_path / "broken.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(IngestionError, match="broken.pgm"):
        build_dataset(DatasetSpec(source=str(tmp_path), patch_size=2))


def test_directory_source_rgb(tmp_path):
    PIL = pytest.importorskip("PIL.Image")
    rgb = np.zeros((32, 32, 3), np.uint8)
    rgb[..., 0] = 255
    PIL.fromarray(rgb).save(tmp_path / "red.png")
    tr, va = build_dataset(DatasetSpec(source=str(tmp_path), patch_size=16, seed=0))
    clean = np.concatenate([tr.clean, va.clean])
    assert np.allclose(clean, 0.299)
