import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from _fd import check
from sarmonet.errors import DegenerateInputError, ShapeError
from sarmonet.loss import (EPS_DIV, LossWeights, SoftRatioHistogram, grad_loss, image_gradient,
                           kl_loss, l2_loss, total_loss)
from sarmonet.speckle import sample_speckle
from sarmonet.stats import kl_divergence, rayleigh_reference


def _pair(rng, shape=(2, 1, 8, 8)):
    x = 0.2 + rng.random(shape)
    return x + 0.1 * rng.standard_normal(shape), x


def test_l2_value_and_gradient(rng):
    xhat, x = _pair(rng)
    v, g = l2_loss(xhat, x)
    assert v == pytest.approx(np.mean((xhat - x) ** 2))
    assert check(lambda: l2_loss(xhat, x)[0], xhat, g) < 1e-4
    assert l2_loss(x, x)[0] == 0


def test_image_gradient_replicate_boundary():
    a = np.arange(12.0).reshape(3, 4)
    gh, gv = image_gradient(a)
    assert np.array_equal(gh, [[1, 1, 1, 0]] * 3)
    assert np.array_equal(gv, [[4] * 4, [4] * 4, [0] * 4])


def test_grad_loss_examples():
    x = np.zeros((4, 4))
    assert grad_loss(x + 3.0, x)[0] == 0  # constant offset has no gradient
    xhat = np.zeros((4, 4))
    xhat[:, 2:] = 1.0  # one vertical step, 4 rows of unit differences
    assert grad_loss(xhat, x)[0] == pytest.approx(4 / 16)


@pytest.mark.parametrize("shape", [(2, 1, 8, 8), (5, 7)])
def test_grad_loss_gradient(rng, shape):
    xhat, x = _pair(rng, shape)
    v, g = grad_loss(xhat, x)
    assert check(lambda: grad_loss(xhat, x)[0], xhat, g) < 1e-4


def test_soft_histogram_is_normalized(rng):
    h = SoftRatioHistogram()
    r = np.concatenate([rng.random(1000) * 5, [0.0, 4.0, 10.0]])
    P, _, _ = h.masses(r)
    assert P.sum() == pytest.approx(1.0) and np.all(P >= 0)
    # a value on a bin centre goes entirely to that bin
    c = 0.5 * (h.edges[10] + h.edges[11])
    P, _, _ = h.masses(np.array([c]))
    assert P[10] == pytest.approx(1.0)


def test_kl_small_for_true_speckle():
    y = sample_speckle(256, 256, 1, seed=0).values.astype(np.float64)
    v, _ = kl_loss(np.ones_like(y), y)
    assert 0 <= v < 0.02
    bad, _ = kl_loss(np.ones_like(y), 0.3 * y)
    assert bad > 10 * v


def _kl_case(seed):
    rng = np.random.default_rng(seed)
    x = 0.5 + rng.random((2, 1, 64, 64))
    y = x * sample_speckle(128, 64, 1, seed=rng).values.reshape(2, 1, 64, 64)
    xhat = x * (1 + 0.05 * rng.standard_normal(x.shape))
    return xhat, y


@pytest.mark.parametrize("pooling", ["batch", "patch"])
def test_kl_gradient_end_to_end(pooling):
    xhat, y = _kl_case(1)
    v, g = kl_loss(xhat, y, pooling=pooling)
    assert check(lambda: kl_loss(xhat, y, pooling=pooling)[0], xhat, g, n=60) < 1e-3


def test_kl_natural_log_matches_base2_metric():
    xhat, y = _kl_case(2)
    v, _ = kl_loss(xhat, y)
    h = SoftRatioHistogram()
    P, _, _ = h.masses(y / xhat)
    ref = rayleigh_reference(h.edges)
    from sarmonet.stats import Histogram
    base2 = kl_divergence(Histogram.from_masses(h.edges, P), ref)
    assert v == pytest.approx(base2 * np.log(2), rel=1e-9)


def test_kl_eps_div_guard():
    y = np.ones((4, 4))
    xhat = np.full((4, 4), 0.5)
    xhat[0, 0] = 0.0
    v, g = kl_loss(xhat, y)
    assert np.isfinite(v) and g[0, 0] == 0
    assert np.all(g[xhat <= EPS_DIV] == 0)
    with pytest.raises(DegenerateInputError):
        kl_loss(xhat, np.zeros((4, 4)))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        l2_loss(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        grad_loss(np.zeros(3), np.zeros(3))


def test_total_loss_combines_terms():
    xhat, y = _kl_case(3)
    x = xhat * 1.02
    w = LossWeights(lambda_kl=0.3, lambda_grad=2.0)
    br, g = total_loss(xhat, x, y, w)
    assert br.total == pytest.approx(br.l2 + 0.3 * br.kl + 2.0 * br.grad)
    g_ref = l2_loss(xhat, x)[1] + 0.3 * kl_loss(xhat, y)[1] + 2.0 * grad_loss(xhat, x)[1]
    assert np.allclose(g, g_ref)
    assert check(lambda: total_loss(xhat, x, y, w)[0].total, xhat, g, n=40) < 1e-3


def test_variants_toggle_terms():
    xhat, y = _kl_case(4)
    x = xhat * 0.97
    for name, (k, gr) in {"L2": (0, 0), "Lkl": (1, 0), "Lgrad": (0, 1), "L": (1, 1)}.items():
        br, _ = total_loss(xhat, x, y, LossWeights.variant(name, lambda_kl=1.0))
        assert (br.kl != 0) == bool(k) and (br.grad != 0) == bool(gr) and br.l2 > 0
    with pytest.raises(ValueError):
        LossWeights.variant("L3")
    with pytest.raises(ValueError):
        LossWeights(lambda_kl=-1)


@given(arrays(np.float64, (6, 7), elements=st.floats(0.01, 3)),
       arrays(np.float64, (6, 7), elements=st.floats(0.01, 3)))
def test_terms_nonnegative_and_zero_at_target(a, b):
    assert l2_loss(a, b)[0] >= 0 and grad_loss(a, b)[0] >= 0
    assert l2_loss(a, a)[0] == 0 and grad_loss(a, a)[0] == 0
    assert not np.any(grad_loss(a, a)[1])
    assert kl_loss(a, b)[0] >= -1e-12
