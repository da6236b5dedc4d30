import numpy as np
import pytest
from hypothesis import given, strategies as st

from sarmonet.detect import (EDGE_BIT, KS_BIT, SKIPPED, DetectConfig, EHMask, combine_eh_mask, detect,
                             half_masks, ks_patch_map, ks_patch_statistics, planted_ratio_scene,
                             touzi_edge_map, validate_populations)
from sarmonet.errors import ParameterError, ShapeError
from sarmonet.speckle import sample_speckle
from sarmonet.stats import GA0_EH, ks_critical_value, ks_statistic, rayleigh_cdf, sample_ga0


def test_half_masks_exclude_centre_line():
    for a, b in half_masks(7):
        assert a.sum() == pytest.approx(1) and b.sum() == pytest.approx(1)
        assert a[3, 3] == 0 and b[3, 3] == 0
        assert not np.any((a > 0) & (b > 0))
        assert (a > 0).sum() == (b > 0).sum() == 21


def test_edge_step_and_constant():
    r = np.ones((20, 20))
    e = touzi_edge_map(r)
    assert np.all(e.response == 1) and not e.flags.any()
    r[:, 10:] = 4.0
    e = touzi_edge_map(r, threshold=1.5)
    assert e.flags[:, 9].all() and e.flags[:, 10].all()
    assert e.response[5, 10] == pytest.approx(4.0)
    assert not e.flags[:, :6].any() and not e.flags[:, 14:].any()


def test_edge_zero_half_is_skipped():
    r = np.ones((15, 15))
    r[:, :8] = 0.0
    e = touzi_edge_map(r)
    assert e.skipped[7, 7] and e.response[7, 7] == SKIPPED and not e.flags[7, 7]


def test_edge_invalid_inputs():
    with pytest.raises(ParameterError):
        touzi_edge_map(np.ones((5, 5)), window=7)
    with pytest.raises(ParameterError):
        touzi_edge_map(np.ones((9, 9)), window=4)
    with pytest.raises(ParameterError):
        touzi_edge_map(-np.ones((9, 9)))
    with pytest.raises(ShapeError):
        touzi_edge_map(np.ones(9))


def test_ks_statistics_match_direct(rng):
    r = sample_speckle(48, 40, 1, seed=0).values
    d = ks_patch_statistics(r, 16)
    assert d.shape == (3, 2)
    assert d[1, 1] == pytest.approx(ks_statistic(r[16:32, 16:32].ravel(), rayleigh_cdf))


def test_ks_partial_patches_never_rejected():
    r = np.full((40, 40), 5.0)
    reject, pix = ks_patch_map(r, 16, 0.01)
    assert reject.all() and pix[:32, :32].all() and not pix[32:].any() and not pix[:, 32:].any()


def test_ks_size_and_power():
    alpha = 0.01
    r = sample_speckle(16 * 60, 16 * 60, 1, seed=1).values
    reject, _ = ks_patch_map(r, 16, alpha)
    assert alpha / 2 <= reject.mean() <= 2 * alpha
    g = sample_ga0(16 * 16 * 100, GA0_EH, seed=2).reshape(160, 160)
    g /= np.sqrt(np.mean(g ** 2))
    assert ks_patch_map(g, 16, alpha)[0].mean() > 0.9


def test_combine_and_provenance():
    e = np.zeros((9, 9), bool)
    e[4, 4] = True
    k = np.zeros((9, 9), bool)
    k[3, 3] = k[0, 8] = True
    m = combine_eh_mask(e, k, DetectConfig(dilation=1))
    assert m.flags[3, 3] and not m.flags[0, 8] and m.flags.sum() == 1
    assert m.provenance[3, 3] == EDGE_BIT | KS_BIT and m.provenance[0, 8] == KS_BIT
    assert m.edge_hit[5, 5] and not m.ks_hit[5, 5]
    m0 = combine_eh_mask(e, k, DetectConfig(dilation=0))
    assert not m0.flags.any()
    mo = combine_eh_mask(e, k, DetectConfig(combine="OR", dilation=0))
    assert mo.flags.sum() == 3
    lines = m.coordinates_csv().splitlines()
    assert lines == ["row,col,edge_hit,ks_hit", "3,3,1,1"]
    with pytest.raises(ShapeError):
        combine_eh_mask(e, k[:8], DetectConfig())


def test_config_validation():
    for bad in (dict(edge_window=6), dict(edge_threshold=1.0), dict(ks_alpha=0), dict(combine="XOR"),
                dict(dilation=-1), dict(ks_patch=1)):
        with pytest.raises(ParameterError):
            DetectConfig(**bad)


def test_pure_speckle_has_few_detections():
    r = sample_speckle(256, 256, 1, seed=3).values
    m = detect(r)
    assert m.flags.mean() <= 2 * 0.01


def test_planted_scene_construction():
    ratio, mask = planted_ratio_scene(128, 128, k=5, density=1e-3, seed=4)
    assert mask.sum() >= 1 and np.all(ratio[mask] == 5)
    r2, m2 = planted_ratio_scene(128, 128, k=5, density=1e-3, seed=4)
    assert np.array_equal(ratio, r2) and np.array_equal(mask, m2)


def test_population_fit_reports():
    sar = sample_ga0(64 * 64, GA0_EH, seed=5).reshape(64, 64)
    mask = np.zeros((64, 64), bool)
    mask[:16, :16] = True
    rep = validate_populations(sar, mask, bins=20)
    assert rep.eh.size == 256 and rep.h.size == 64 * 64 - 256
    assert rep.eh.ks_ga0 < rep.eh.ks_ka
    assert rep.summary_csv().splitlines()[0] == "population,size,ks_ga0,ks_ka,inconclusive"
    assert len(rep.curves_csv().splitlines()) == 1 + 2 * 20
    assert np.sum(rep.h.empirical * np.diff(np.linspace(0, np.percentile(sar, 99.5), 21))) \
        == pytest.approx(1.0)
    empty = validate_populations(sar, np.zeros((64, 64), bool))
    assert empty.inconclusive and empty.eh.ks_ga0 is None
    assert "1" in empty.summary_csv().splitlines()[1].split(",")[-1]
    with pytest.raises(ShapeError):
        validate_populations(sar, mask[:10])


@given(st.integers(0, 1000), st.sampled_from(["AND", "OR"]), st.integers(0, 2))
def test_mask_is_subset_property(seed, combine, dilation):
    r = np.random.default_rng(seed).rayleigh(2 ** -0.5, (32, 32))
    cfg = DetectConfig(combine=combine, dilation=dilation)
    m = detect(r, cfg)
    assert isinstance(m, EHMask) and m.flags.shape == r.shape
    if combine == "AND":
        assert np.all(m.flags <= (m.edge_hit & m.ks_hit))
    else:
        assert np.array_equal(m.flags, m.edge_hit | m.ks_hit)


@given(st.integers(0, 1000))
def test_edge_response_at_least_one(seed):
    r = np.random.default_rng(seed).random((16, 16)) + 0.01
    e = touzi_edge_map(r)
    assert np.all(e.response >= 1)
    # ratio of means is scale invariant
    assert np.allclose(touzi_edge_map(3 * r).response, e.response)
