import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import gaussian_kde

from conftest import central_grad, rel_error
from poseconsensus.heatmap import (
    DegenerateHeatmapError,
    GaussianRenderer,
    HeatmapConfig,
    SoftArgmax,
    ToyRefiner,
    bias_analysis,
    gaussian_kde_1d,
    hard_argmax,
    heatmap_loss,
    normalize,
    peak_scale,
    render_gaussian,
    silverman_bandwidth,
    soft_argmax,
    soft_argmax_backward,
    to_one_based,
    to_zero_based,
)


def one_hot(p, q, l_x=8, l_y=6):
    h = np.zeros((l_y, l_x))
    h[q - 1, p - 1] = 1.0
    return h


# -- rendering ---------------------------------------------------------------------


def test_render_peak_and_falloff():
    cfg = HeatmapConfig()
    h = render_gaussian([[20.0, 30.0]], cfg)[0]
    assert tuple(hard_argmax(h)) == (20, 30)
    assert h[29, 19] == pytest.approx(1 / (2 * np.pi * 3))
    assert h[29, 20] / h[29, 19] == pytest.approx(0.84648, abs=1e-5)
    assert h[29, 20] / h[29, 19] == pytest.approx(np.exp(-1 / 6), rel=1e-14)


def test_render_same_location_same_map():
    h = render_gaussian([[10.3, 5.2], [10.3, 5.2]])
    np.testing.assert_array_equal(h[0], h[1])


def test_render_off_grid_and_shape():
    h = render_gaussian(np.array([[[-10.0, 100.0]] * 3] * 2), HeatmapConfig(16, 12, 2.0))
    assert h.shape == (2, 3, 12, 16)
    assert (h >= 0).all() and np.isfinite(h).all()
    with pytest.raises(ValueError):
        render_gaussian([[np.nan, 1.0]])


def test_config_validation():
    with pytest.raises(ValueError):
        HeatmapConfig(sigma2=0)
    with pytest.raises(ValueError):
        HeatmapConfig(l_x=0)


def test_peak_scale_gives_unit_peak():
    cfg = HeatmapConfig(32, 32, 2.5)
    assert (render_gaussian([[10.0, 11.0]], cfg) * peak_scale(cfg)).max() == pytest.approx(1.0)


# -- normalize and soft-argmax -------------------------------------------------------


def test_normalize_examples():
    np.testing.assert_allclose(normalize(np.ones((4, 5))), np.full((4, 5), 1 / 20))
    rng = np.random.default_rng(0)
    h = normalize(rng.random((6, 7)))
    assert h.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(normalize(h), h, rtol=1e-15)
    np.testing.assert_allclose(normalize(7 * h), h, rtol=1e-15)
    with pytest.raises(DegenerateHeatmapError):
        normalize(np.zeros((3, 3)))


def test_soft_argmax_examples():
    np.testing.assert_array_equal(soft_argmax(one_hot(5, 2)), [5.0, 2.0])
    np.testing.assert_allclose(soft_argmax(np.ones((64, 64))), [32.5, 32.5])
    h = render_gaussian([[32.0, 32.0]])[0]
    np.testing.assert_allclose(soft_argmax(h), [32.0, 32.0], atol=1e-6)
    with pytest.raises(DegenerateHeatmapError):
        soft_argmax(np.zeros((4, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_soft_argmax_inside_raster_hull(seed):
    rng = np.random.default_rng(seed)
    l_y, l_x = rng.integers(1, 20, size=2)
    h = rng.random((l_y, l_x)) ** 4
    h[rng.integers(l_y), rng.integers(l_x)] += 1e-3
    x, y = soft_argmax(h)
    assert 1 <= x <= l_x and 1 <= y <= l_y


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(-5, 5), st.integers(-5, 5))
def test_soft_argmax_shift_equivariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    h = np.zeros((30, 30))
    h[10:15, 12:16] = rng.random((5, 4)) + 0.1
    moved = np.roll(np.roll(h, dy, axis=0), dx, axis=1)
    np.testing.assert_allclose(soft_argmax(moved), soft_argmax(h) + [dx, dy], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 7))
def test_soft_equals_hard_on_one_hot(p, q):
    h = one_hot(p, q, 9, 7)
    np.testing.assert_array_equal(soft_argmax(h), hard_argmax(h))


def test_unbiased_for_interior_gaussians():
    rng = np.random.default_rng(1)
    centers = rng.uniform(7, 58, size=(500, 2))
    h = render_gaussian(centers[:, None])[:, 0]
    assert np.abs(soft_argmax(h) - centers).max() < 1e-3


def test_coordinate_converters():
    np.testing.assert_array_equal(to_zero_based([1.0, 5.5]), [0.0, 4.5])
    np.testing.assert_array_equal(to_one_based(to_zero_based([3.0, 2.0])), [3.0, 2.0])
    np.testing.assert_array_equal(SoftArgmax(zero_based=True).fit_transform(one_hot(1, 1)[None, None]), [[[0, 0]]])


def test_transformers_roundtrip():
    pose = np.array([[[12.0, 20.0], [40.0, 33.0]]])
    maps = GaussianRenderer(size=64, sigma2=3.0).fit_transform(pose)
    np.testing.assert_allclose(SoftArgmax().fit_transform(maps), pose, atol=1e-6)


# -- soft-argmax backward --------------------------------------------------------------


def test_soft_argmax_backward_matches_closed_form():
    rng = np.random.default_rng(2)
    h = rng.random((5, 6)) + 0.1
    S = h.sum()
    x = soft_argmax(h)[0]
    g = soft_argmax_backward(h, [1.0, 0.0])
    np.testing.assert_allclose(g, np.broadcast_to((np.arange(1, 7) - x) / S, (5, 6)), rtol=1e-12)


def test_soft_argmax_backward_examples():
    rng = np.random.default_rng(3)
    h = rng.random((2, 3, 5, 6)) + 0.1
    up = rng.normal(size=(2, 3, 2))
    np.testing.assert_array_equal(soft_argmax_backward(h, np.zeros_like(up)), 0.0)
    np.testing.assert_allclose(soft_argmax_backward(h, 3.5 * up), 3.5 * soft_argmax_backward(h, up), rtol=1e-12)


def test_soft_argmax_backward_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(20):
        h = rng.random((rng.integers(2, 7), rng.integers(2, 7))) + 0.05
        up = rng.normal(size=2)
        num = central_grad(lambda: float(soft_argmax(h) @ up), h)
        assert rel_error(soft_argmax_backward(h, up), num) < 1e-6


def test_hard_argmax_tie_break():
    h = np.zeros((4, 4))
    h[2, 1] = h[1, 3] = 1.0
    np.testing.assert_array_equal(hard_argmax(h), [4, 2])


# -- loss ------------------------------------------------------------------------------


def test_heatmap_loss_examples():
    cfg = HeatmapConfig(2, 2, 3.0)
    pose = np.array([[1.2, 1.7]])
    target = render_gaussian(pose, cfg)
    assert heatmap_loss(target, pose, cfg) == 0.0
    assert heatmap_loss(target + 1.0, pose, cfg) == pytest.approx(4.0)
    assert heatmap_loss(target + 2.0, pose, cfg) == pytest.approx(16.0)
    assert heatmap_loss(target * peak_scale(cfg), pose, cfg, peak_normalized=True) == pytest.approx(0.0, abs=1e-30)
    with pytest.raises(ValueError):
        heatmap_loss(np.zeros((1, 3, 3)), pose, cfg)


def test_heatmap_loss_gradient():
    rng = np.random.default_rng(5)
    cfg = HeatmapConfig(6, 5, 2.0)
    pose = rng.uniform(1, 5, size=(2, 3, 2))
    for _ in range(20):
        P = rng.random((2, 3, 5, 6))
        _, g = heatmap_loss(P, pose, cfg, grad=True)
        assert rel_error(g, central_grad(lambda: heatmap_loss(P, pose, cfg), P)) < 1e-4


# -- bias analysis -------------------------------------------------------------------------


def test_bias_zero_for_interior_integer_centers():
    rng = np.random.default_rng(6)
    centers = rng.integers(7, 58, size=(50, 4, 2)).astype(float)
    rep = bias_analysis(render_gaussian(centers))
    assert rep.norms.max() < 1e-3
    assert rep.fraction_below(1.0) == 1.0
    assert len(rep.biases) == 4 and rep.biases[0].shape == (50, 2)


def test_bias_constructed_asymmetric_map():
    # peak at raster (3, 2); the mean is computed by hand from the masses below
    h = np.zeros((4, 5))
    h[1, 2] = 4.0   # (x, y) = (3, 2)
    h[1, 4] = 2.0   # (5, 2)
    h[3, 0] = 2.0   # (1, 4)
    m = np.array([(4 * 3 + 2 * 5 + 2 * 1) / 8, (4 * 2 + 2 * 2 + 2 * 4) / 8])
    rep = bias_analysis(h[None, None])
    np.testing.assert_allclose(rep.biases[0][0], m - [3, 2], atol=1e-15)


def test_bias_mirror_symmetry():
    rng = np.random.default_rng(7)
    h = rng.random((1, 1, 6, 7))
    h[0, 0, 2, 3] = 5.0
    b = bias_analysis(h).biases[0][0]
    bm = bias_analysis(h[..., ::-1]).biases[0][0]
    np.testing.assert_allclose(bm, [-b[0], b[1]], atol=1e-12)


def test_kde_matches_scipy_with_silverman_bandwidth():
    rng = np.random.default_rng(8)
    x = rng.gamma(2.0, 0.3, size=400)
    grid, dens, h = gaussian_kde_1d(x)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-6)
    # scipy's bw_method is a factor on the sample std
    ref = gaussian_kde(x, bw_method=h / x.std(ddof=1))(grid)
    np.testing.assert_allclose(dens, ref, rtol=1e-10, atol=1e-12)


def test_silverman_rule():
    x = np.array([0.0, 1.0, 2.0, 3.0, 10.0])
    iqr = 3.0 - 1.0
    expected = 0.9 * min(x.std(ddof=1), iqr / 1.34) * 5 ** -0.2
    assert silverman_bandwidth(x) == pytest.approx(expected)


# -- toy refiner -------------------------------------------------------------------------------


def test_refiner_zero_params_gives_half():
    Y, _ = ToyRefiner(np.zeros((2, 3, 3)), np.zeros(2)).forward(np.random.default_rng(0).random((2, 5, 5)))
    np.testing.assert_array_equal(Y, 0.5)


def test_refiner_identity_preserves_order():
    k = np.zeros((1, 3, 3))
    k[0, 1, 1] = 1.0
    X = np.random.default_rng(9).normal(size=(1, 6, 6))
    Y, _ = ToyRefiner(k, np.zeros(1)).forward(X)
    np.testing.assert_array_equal(np.argsort(Y.ravel()), np.argsort(X.ravel()))
    assert ((Y > 0) & (Y < 1)).all()


def test_identity_like_keeps_unit_peak_location():
    cfg = HeatmapConfig(32, 32, 3.0)
    pose = np.array([[[10.4, 20.7], [15.0, 9.2]]])
    X = render_gaussian(pose, cfg) * peak_scale(cfg)
    Y, _ = ToyRefiner.identity_like(2).forward(X)
    assert np.abs(soft_argmax(Y) - pose).max() < 0.5


def test_refiner_gradients():
    rng = np.random.default_rng(10)
    for _ in range(20):
        n = int(rng.integers(1, 3))
        ref = ToyRefiner(rng.normal(size=(n, 3, 3)), rng.normal(size=n))
        X = rng.normal(size=(2, n, 4, 5))
        W = rng.normal(size=(2, n, 4, 5))

        def f():
            return float((ref.forward(X)[0] * W).sum())

        grads, dX = ref.backward(W, ref.forward(X)[1])
        assert rel_error(dX, central_grad(f, X)) < 1e-4
        assert rel_error(grads["kernel"], central_grad(f, ref.kernel)) < 1e-4
        assert rel_error(grads["bias"], central_grad(f, ref.bias)) < 1e-4
