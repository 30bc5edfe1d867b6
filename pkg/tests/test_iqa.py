import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fanet import iqa
from fanet.errors import DegenerateInputError, RejectedInputError
from fanet.imageops import GrayImage, gaussian_blur


@pytest.fixture(scope="module")
def noise_img():
    # Gaussian white noise, well inside [0, 1]
    return np.clip(0.5 + 0.1 * np.random.default_rng(42).normal(size=(128, 128)), 0.0, 1.0)


@pytest.fixture(scope="module")
def textured_img():
    rng = np.random.default_rng(7)
    base = gaussian_blur(rng.random((96, 96)), 2.0)
    base = (base - base.min()) / (base.max() - base.min())
    return 0.1 + 0.35 * base + 0.02 * rng.random((96, 96))


# -- MSCN --------------------------------------------------------------------

def test_mscn_of_constant_image_is_zero():
    assert not iqa.mscn_map(np.full((40, 40), 0.6)).any()


def test_mscn_checkerboard_is_balanced():
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)
    m = iqa.mscn_map(board)
    assert abs(m.mean()) <= 1e-6
    assert m.shape == (8, 8)


def test_mscn_of_noise_has_near_unit_spread(noise_img):
    assert 0.8 <= iqa.mscn_map(noise_img).std() <= 1.2


@pytest.mark.parametrize("window", [4, 0, 41])
def test_mscn_rejects_bad_window(window):
    with pytest.raises(RejectedInputError):
        iqa.mscn_map(np.random.default_rng(0).random((40, 40)), window)


# -- GGD / AGGD ----------------------------------------------------------------

def test_ggd_fit_gaussian_samples():
    x = np.random.default_rng(1).normal(size=100_000)
    assert 1.9 <= iqa.fit_ggd(x).alpha <= 2.1


def test_ggd_fit_laplacian_samples():
    x = np.random.default_rng(2).laplace(size=100_000)
    assert 0.95 <= iqa.fit_ggd(x).alpha <= 1.05


def test_ggd_fit_two_point_hits_upper_clamp():
    x = np.tile([-1.0, 1.0], 50)
    assert iqa.fit_ggd(x).alpha == iqa.ALPHA_MAX


@pytest.mark.parametrize("alpha", [0.7, 1.0, 2.0, 4.0])
def test_ggd_round_trip_recovers_shape(alpha):
    x = stats.gennorm(beta=alpha, scale=0.3).rvs(size=100_000, random_state=123)
    fit = iqa.fit_ggd(x)
    assert abs(fit.alpha - alpha) <= 0.1 * alpha
    assert fit.sigma == pytest.approx(np.sqrt(np.mean(x**2)))


def test_ggd_fit_errors():
    with pytest.raises(DegenerateInputError):
        iqa.fit_ggd(np.zeros(100))
    with pytest.raises(RejectedInputError):
        iqa.fit_ggd(np.ones(63))


def test_shape_solver_inverts_moment_ratio():
    for alpha in [0.06, 0.3, 1.0, 2.5, 9.0]:
        rho = float(np.exp(iqa._log_rho(alpha)))
        assert iqa.solve_shape(rho) == pytest.approx(alpha, rel=1e-9)


def test_aggd_symmetric_gaussian():
    x = np.random.default_rng(3).normal(size=100_000)
    fit = iqa.fit_aggd(x)
    assert fit.sigma_left == pytest.approx(fit.sigma_right, rel=0.05)
    assert abs(fit.mean) < 0.02
    assert not fit.one_sided


def test_aggd_shifted_samples_have_positive_mean():
    x = np.random.default_rng(4).normal(size=10_000) + 10.0
    assert iqa.fit_aggd(x).mean > 0


def test_aggd_mirror_swaps_scales_and_negates_mean():
    x = stats.skewnorm(a=3.0).rvs(size=5000, random_state=5)
    a, b = iqa.fit_aggd(x), iqa.fit_aggd(-x)
    assert b.sigma_left == a.sigma_right
    assert b.sigma_right == a.sigma_left
    assert b.mean == -a.mean
    assert b.alpha == a.alpha


def test_aggd_one_sided_is_flagged():
    x = np.abs(np.random.default_rng(6).normal(size=500)) + 0.1
    fit = iqa.fit_aggd(x)
    assert fit.one_sided
    assert fit.sigma_left == iqa.ONE_SIDED_SIGMA
    assert np.isfinite([fit.alpha, fit.mean, fit.sigma_right]).all()


# -- BRISQUE -------------------------------------------------------------------

def test_brisque_constant_image_degenerates_without_nan():
    f = iqa.brisque_features(np.full((64, 64), 0.3))
    assert f.shape == (36,)
    assert np.isfinite(f).all()
    assert f[0] == iqa.ALPHA_MAX and f[18] == iqa.ALPHA_MAX


def test_brisque_rotation_swaps_orientations(textured_img):
    a = iqa.brisque_features(textured_img)
    b = iqa.brisque_features(np.rot90(textured_img))
    for s in (0, 18):
        horiz_a, vert_a = a[s + 2 : s + 6], a[s + 6 : s + 10]
        horiz_b, vert_b = b[s + 2 : s + 6], b[s + 6 : s + 10]
        np.testing.assert_allclose(horiz_a, vert_b, rtol=0, atol=1e-9)
        np.testing.assert_allclose(vert_a, horiz_b, rtol=0, atol=1e-9)
        np.testing.assert_allclose(a[s : s + 2], b[s : s + 2], rtol=0, atol=1e-9)


@pytest.mark.xfail(strict=True, reason="7x7 self-normalization makes MSCN of white noise "
                   "sub-Gaussian (alpha ~2.9), outside the stated [1.7, 2.3]")
def test_brisque_noise_mscn_shape(noise_img):
    assert 1.7 <= iqa.brisque_features(noise_img)[0] <= 2.3


def test_mscn_noise_shape_tends_to_gaussian_with_wider_windows():
    x = np.random.default_rng(0).normal(size=(512, 512))
    a7 = iqa.fit_ggd(iqa.mscn_map(x, 7)).alpha
    a21 = iqa.fit_ggd(iqa.mscn_map(x, 21)).alpha
    assert 2.6 <= a7 <= 3.2
    assert 1.7 <= a21 <= 2.3
    assert a21 < a7


def test_brisque_invariant_to_offset(textured_img):
    a = iqa.brisque_features(textured_img)
    b = iqa.brisque_features(textured_img + 0.3)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-6)


def test_brisque_rejects_tiny_image():
    with pytest.raises(RejectedInputError):
        iqa.brisque_features(np.random.default_rng(0).random((12, 40)))


# -- BIQI ----------------------------------------------------------------------

def test_biqi_constant_image():
    f = iqa.biqi_features(np.full((48, 48), 0.7))
    assert f.shape == (18,)
    assert np.isfinite(f).all()
    assert np.all(f[0::2] == iqa.ALPHA_MAX) and not f[1::2].any()


def test_biqi_contrast_doubling(textured_img):
    a = iqa.biqi_features(textured_img)
    b = iqa.biqi_features(2.0 * textured_img)
    np.testing.assert_allclose(b[1::2], 2.0 * a[1::2], rtol=1e-6)
    np.testing.assert_allclose(b[0::2], a[0::2], rtol=0, atol=1e-6)


def test_biqi_noise_shapes_are_interior(noise_img):
    alphas = iqa.biqi_features(noise_img)[0::2]
    assert np.all((alphas > iqa.ALPHA_MIN) & (alphas < iqa.ALPHA_MAX))


def test_biqi_rejects_tiny_image():
    with pytest.raises(RejectedInputError):
        iqa.biqi_features(np.ones((7, 20)))


def test_wavelet_filters():
    assert iqa.CDF97_LOW.sum() == pytest.approx(1.0, abs=1e-9)
    assert iqa.CDF97_HIGH.sum() == pytest.approx(0.0, abs=1e-9)
    bands = iqa.wavelet_subbands(np.random.default_rng(0).random((64, 48)), 3)
    assert [b[0].shape for b in bands] == [(32, 24), (16, 12), (8, 6)]


# -- GM-LOG --------------------------------------------------------------------

def test_gmlog_constant_image_puts_all_mass_in_bin_zero():
    f = iqa.gmlog_features(np.full((40, 40), 0.2))
    expected = np.zeros(10)
    expected[0] = 1.0
    for k in range(4):
        np.testing.assert_array_equal(f[10 * k : 10 * k + 10], expected)


def test_gmlog_step_edge_has_more_high_gradient_mass():
    const = np.full((64, 64), 0.5)
    edge = np.zeros((64, 64))
    edge[:, 32:] = 1.0
    top_edge = iqa.gmlog_features(edge)[5:10].sum()
    top_const = iqa.gmlog_features(const)[5:10].sum()
    assert top_edge > top_const


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.integers(32, 60), w=st.integers(32, 60))
def test_gmlog_histograms_each_sum_to_one(seed, h, w):
    img = np.random.default_rng(seed).random((h, w))
    f = iqa.gmlog_features(img)
    for k in range(4):
        assert f[10 * k : 10 * k + 10].sum() == pytest.approx(1.0, abs=1e-9)


# -- full vector -----------------------------------------------------------------

def test_quality_vector_dimension(textured_img):
    q = iqa.quality_feature_vector(textured_img)
    assert q.vector.shape == (94,)
    assert (len(q.biqi), len(q.gmlog), len(q.brisque)) == (18, 40, 36)
    np.testing.assert_array_equal(q.vector[:18], q.biqi)
    np.testing.assert_array_equal(q.vector[58:], q.brisque)


def test_quality_vector_is_pure(textured_img):
    assert iqa.quality_features(textured_img).tobytes() == iqa.quality_features(textured_img.copy()).tobytes()


def test_quality_vector_sees_blur(textured_img):
    blurred = gaussian_blur(textured_img, 3.0)
    assert np.linalg.norm(iqa.quality_features(textured_img) - iqa.quality_features(blurred)) > 0


def test_quality_vector_accepts_color_via_luma():
    rng = np.random.default_rng(9)
    rgb = rng.random((40, 44, 3))
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    np.testing.assert_array_equal(iqa.quality_features(rgb), iqa.quality_features(luma))
    np.testing.assert_array_equal(iqa.quality_features(GrayImage(luma)), iqa.quality_features(luma))


def test_quality_vector_rejects_small_image():
    with pytest.raises(RejectedInputError):
        iqa.quality_features(np.zeros((31, 64)))


def _fuzz_image(kind, seed, h, w):
    rng = np.random.default_rng(seed)
    if kind == "random":
        return rng.random((h, w))
    if kind == "constant":
        return np.full((h, w), rng.random())
    if kind == "saturated":
        return (rng.random((h, w)) > 0.5).astype(float)
    if kind == "impulse":
        img = np.zeros((h, w))
        img[rng.integers(h), rng.integers(w)] = 1.0
        return img
    if kind == "ones":
        return np.ones((h, w))
    raise AssertionError(kind)


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(["random", "constant", "saturated", "impulse", "ones"]),
       seed=st.integers(0, 2**32 - 1), h=st.integers(32, 56), w=st.integers(32, 56))
def test_quality_features_never_nan(kind, seed, h, w):
    f = iqa.quality_features(_fuzz_image(kind, seed, h, w))
    assert f.shape == (94,)
    assert np.isfinite(f).all()
