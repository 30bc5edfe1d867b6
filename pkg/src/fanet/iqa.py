"""No-reference image-quality features (94 values per image).

Three natural-scene-statistics descriptors, concatenated as
``[biqi (18) | gmlog (40) | brisque (36)]``.

Fixed recipe choices:

* MSCN: 7x7 Gaussian window, sigma 7/6, stabilizer C = 1/255, symmetric
  ("reflect") borders.
* Second scale: 2x2 block average.
* GGD/AGGD: moment matching; the shape equation is bracketed on a
  log-spaced lookup table over [0.05, 10] and refined by bisection.
* Wavelets: CDF 9/7 analysis pair (coefficients in ``CDF97_LOW`` /
  ``CDF97_HIGH``), separable, whole-sample symmetric borders, 3 levels;
  the lowpass branch keeps even samples and the highpass branch odd ones.
* GM-LOG: Prewitt gradient magnitude, zero-mean 5x5 LoG with sigma 0.5,
  joint normalization by a Gaussian-weighted (sigma 1) local energy plus
  0.2/255, 10 uniform bins on [0, ``GM_RANGE``] and [0, ``LOG_RANGE``]
  (values beyond the range land in the last bin).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import gammaln

from . import kernels
from .errors import DegenerateInputError, RejectedInputError
from .imageops import GrayImage, as_gray, half_scale

ALPHA_MIN = 0.05
ALPHA_MAX = 10.0
MSCN_WINDOW = 7
MSCN_C = 1.0 / 255.0
ONE_SIDED_SIGMA = 1e-6

BIQI_DIM, GMLOG_DIM, BRISQUE_DIM = 18, 40, 36
QUALITY_DIM = BIQI_DIM + GMLOG_DIM + BRISQUE_DIM

CDF97_LOW = np.array([
    0.026748757411, -0.016864118443, -0.078223266529, 0.266864118443, 0.602949018236,
    0.266864118443, -0.078223266529, -0.016864118443, 0.026748757411,
])
CDF97_HIGH = np.array([
    0.091271763114, -0.057543526229, -0.591271763114, 1.115087052457,
    -0.591271763114, -0.057543526229, 0.091271763114,
])

GMLOG_BINS = 10
GM_RANGE = 0.8
LOG_RANGE = 2.0
GMLOG_SIGMA = 0.5
GMLOG_EPS = 0.2 / 255.0


# --------------------------------------------------------------------------
# generalized Gaussian fitting

def _log_rho(alpha):
    """log of Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)), increasing in a."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return 2.0 * gammaln(2.0 / alpha) - gammaln(1.0 / alpha) - gammaln(3.0 / alpha)


_ALPHA_TABLE = np.geomspace(ALPHA_MIN, ALPHA_MAX, 400)
_LOG_RHO_TABLE = _log_rho(_ALPHA_TABLE)


def solve_shape(rho):
    """Invert the GGD moment ratio; results are clamped to [ALPHA_MIN, ALPHA_MAX]."""
    if not np.isfinite(rho) or rho <= 0:
        return ALPHA_MIN
    target = np.log(rho)
    if target <= _LOG_RHO_TABLE[0]:
        return ALPHA_MIN
    if target >= _LOG_RHO_TABLE[-1]:
        return ALPHA_MAX
    k = int(np.searchsorted(_LOG_RHO_TABLE, target))
    lo, hi = _ALPHA_TABLE[k - 1], _ALPHA_TABLE[k]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _log_rho(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GgdParams:
    alpha: float
    sigma: float


@dataclass(frozen=True)
class AggdParams:
    alpha: float
    sigma_left: float
    sigma_right: float
    mean: float
    one_sided: bool = False


def _ggd(x):
    x = np.asarray(x, dtype=np.float64).ravel()
    second = np.mean(x * x)
    if second == 0.0:
        raise DegenerateInputError("all-zero samples cannot be fitted")
    first = np.mean(np.abs(x))
    return GgdParams(solve_shape(first * first / second), float(np.sqrt(second)))


def fit_ggd(samples):
    """Moment-matching generalized Gaussian fit (needs at least 64 samples)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 64:
        raise RejectedInputError(f"GGD fit needs at least 64 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("samples must be finite")
    return _ggd(x)


def _aggd(x):
    x = np.asarray(x, dtype=np.float64).ravel()
    second = np.mean(x * x)
    if second == 0.0:
        raise DegenerateInputError("all-zero samples cannot be fitted")
    left, right = x[x < 0], x[x > 0]
    one_sided = left.size == 0 or right.size == 0
    sl = np.sqrt(np.mean(left * left)) if left.size else ONE_SIDED_SIGMA
    sr = np.sqrt(np.mean(right * right)) if right.size else ONE_SIDED_SIGMA
    gamma_hat = sl / sr
    r_hat = np.mean(np.abs(x)) ** 2 / second
    r_norm = r_hat * (gamma_hat**3 + 1.0) * (gamma_hat + 1.0) / (gamma_hat**2 + 1.0) ** 2
    alpha = solve_shape(r_norm)
    mean = (sr - sl) * np.exp(gammaln(2.0 / alpha) - 0.5 * (gammaln(1.0 / alpha) + gammaln(3.0 / alpha)))
    return AggdParams(alpha, float(sl), float(sr), float(mean), one_sided)


def fit_aggd(samples):
    """Asymmetric generalized Gaussian fit with separate left/right scales.

    A side without samples gets scale ``ONE_SIDED_SIGMA`` and the result is
    flagged ``one_sided``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 64:
        raise RejectedInputError(f"AGGD fit needs at least 64 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("samples must be finite")
    return _aggd(x)


def _ggd_or_degenerate(x):
    try:
        return _ggd(x)
    except DegenerateInputError:
        return GgdParams(ALPHA_MAX, 0.0)


def _aggd_or_degenerate(x):
    try:
        return _aggd(x)
    except DegenerateInputError:
        return AggdParams(ALPHA_MAX, 0.0, 0.0, 0.0, True)


# --------------------------------------------------------------------------
# BRISQUE

def _gaussian_window(size, sigma):
    r = size // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    return g / g.sum()


def _smooth(img, taps):
    out = ndimage.correlate1d(img, taps, axis=0, mode="reflect")
    return ndimage.correlate1d(out, taps, axis=1, mode="reflect")


def mscn_map(img, window=MSCN_WINDOW):
    """Mean-subtracted contrast-normalized coefficients ``(I - mu) / (sigma + C)``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise RejectedInputError("mscn_map expects a 2-D array")
    if window % 2 == 0 or window < 1:
        raise RejectedInputError("window must be a positive odd integer")
    if window > min(img.shape):
        raise RejectedInputError(f"window {window} exceeds image side {min(img.shape)}")
    if img.max() == img.min():
        return np.zeros_like(img)
    taps = _gaussian_window(window, window / 6.0)
    img = img - img.mean()
    mu = _smooth(img, taps)
    var = _smooth(img * img, taps) - mu * mu
    sigma = np.sqrt(np.abs(var))
    return (img - mu) / (sigma + MSCN_C)


def pair_products(mscn):
    """Products of each coefficient with its right, lower, lower-right and lower-left neighbor."""
    return (
        mscn[:, :-1] * mscn[:, 1:],
        mscn[:-1, :] * mscn[1:, :],
        mscn[:-1, :-1] * mscn[1:, 1:],
        mscn[:-1, 1:] * mscn[1:, :-1],
    )


def brisque_features(img):
    """36 values: per scale, GGD (alpha, sigma^2) of MSCN plus AGGD
    (alpha, mean, sigma_l^2, sigma_r^2) of the four pairwise products."""
    x = np.asarray(img.pixels if isinstance(img, GrayImage) else img, dtype=np.float64)
    if x.ndim != 2:
        raise RejectedInputError("brisque_features expects a 2-D image")
    if min(x.shape) // 2 < MSCN_WINDOW:
        raise RejectedInputError(f"image {x.shape} too small for two-scale BRISQUE")
    feats = []
    for scale in range(2):
        m = mscn_map(x)
        g = _ggd_or_degenerate(m)
        feats += [g.alpha, g.sigma**2]
        for prod in pair_products(m):
            a = _aggd_or_degenerate(prod)
            feats += [a.alpha, a.mean, a.sigma_left**2, a.sigma_right**2]
        if scale == 0:
            x = half_scale(x)
    return np.array(feats)


# --------------------------------------------------------------------------
# BIQI

def _analysis(x, axis):
    low = ndimage.correlate1d(x, CDF97_LOW, axis=axis, mode="mirror")
    high = ndimage.correlate1d(x, CDF97_HIGH, axis=axis, mode="mirror")
    sl = [slice(None)] * 2
    sh = [slice(None)] * 2
    sl[axis] = slice(0, None, 2)
    sh[axis] = slice(1, None, 2)
    return low[tuple(sl)], high[tuple(sh)]


def wavelet_subbands(img, levels=3):
    """Detail subbands ``[(horizontal, vertical, diagonal), ...]`` finest level first."""
    x = np.asarray(img, dtype=np.float64)
    # constant input: every detail band is exactly zero
    x = np.zeros_like(x) if x.max() == x.min() else x - x.mean()
    out = []
    for _ in range(levels):
        lo_c, hi_c = _analysis(x, axis=1)
        ll, lh = _analysis(lo_c, axis=0)   # lh: lowpass across columns, highpass across rows
        hl, hh = _analysis(hi_c, axis=0)
        out.append((lh, hl, hh))
        x = ll
    return out


def biqi_features(img):
    """18 values: (alpha, sigma) of a GGD fit for 3 levels x 3 orientations."""
    x = np.asarray(img.pixels if isinstance(img, GrayImage) else img, dtype=np.float64)
    if x.ndim != 2:
        raise RejectedInputError("biqi_features expects a 2-D image")
    if min(x.shape) < 2**3:
        raise RejectedInputError(f"image {x.shape} too small for a 3-level decomposition")
    feats = []
    for bands in wavelet_subbands(x, 3):
        for band in bands:
            g = _ggd_or_degenerate(band)
            feats += [g.alpha, g.sigma]
    return np.array(feats)


# --------------------------------------------------------------------------
# GM-LOG

_PREWITT_X = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0


def _log_kernel(sigma, radius=2):
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    yy, xx = np.meshgrid(t, t, indexing="ij")
    r2 = xx**2 + yy**2
    k = (r2 - 2.0 * sigma**2) / sigma**4 * np.exp(-r2 / (2.0 * sigma**2))
    return k - k.mean()


_LOG_KERNEL = _log_kernel(GMLOG_SIGMA)


def gmlog_maps(img):
    """Jointly normalized gradient-magnitude and |LoG| maps."""
    x = np.asarray(img, dtype=np.float64)
    x = np.zeros_like(x) if x.max() == x.min() else x - x.mean()
    gx = ndimage.correlate(x, _PREWITT_X, mode="reflect")
    gy = ndimage.correlate(x, _PREWITT_X.T, mode="reflect")
    gm = np.sqrt(gx * gx + gy * gy)
    lg = ndimage.correlate(x, _LOG_KERNEL, mode="reflect")
    energy = ndimage.gaussian_filter(gm * gm + lg * lg, 1.0, mode="reflect", truncate=3.0)
    norm = np.sqrt(np.maximum(energy, 0.0)) + GMLOG_EPS
    return gm / norm, np.abs(lg) / norm


def _quantize(values, top):
    idx = np.floor(values / top * GMLOG_BINS).astype(np.int64)
    return np.clip(idx, 0, GMLOG_BINS - 1)


def _normalized(v):
    s = v.sum()
    return v / s if s > 0 else v


def gmlog_features(img):
    """40 values: GM marginal, LOG marginal, then the two conditional
    dependency profiles, each a 10-bin histogram summing to 1."""
    x = np.asarray(img.pixels if isinstance(img, GrayImage) else img, dtype=np.float64)
    if x.ndim != 2:
        raise RejectedInputError("gmlog_features expects a 2-D image")
    gm, lg = gmlog_maps(x)
    joint = kernels.joint_histogram(_quantize(gm, GM_RANGE), _quantize(lg, LOG_RANGE), GMLOG_BINS, GMLOG_BINS)
    joint /= joint.sum()
    p_gm = joint.sum(axis=1)
    p_lg = joint.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gm_given_lg = np.where(p_lg[None, :] > 0, joint / p_lg[None, :], 0.0)
        lg_given_gm = np.where(p_gm[:, None] > 0, joint / p_gm[:, None], 0.0)
    q_gm = _normalized(gm_given_lg.mean(axis=1))
    q_lg = _normalized(lg_given_gm.mean(axis=0))
    return np.concatenate([p_gm, p_lg, q_gm, q_lg])


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QualityFeatures:
    biqi: np.ndarray
    gmlog: np.ndarray
    brisque: np.ndarray

    def __post_init__(self):
        dims = (len(self.biqi), len(self.gmlog), len(self.brisque))
        if dims != (BIQI_DIM, GMLOG_DIM, BRISQUE_DIM):
            raise RejectedInputError(f"quality feature blocks have dims {dims}")

    @property
    def vector(self):
        v = np.concatenate([self.biqi, self.gmlog, self.brisque])
        assert v.shape == (QUALITY_DIM,)
        return v


def quality_feature_vector(img):
    px = as_gray(img)
    return QualityFeatures(biqi_features(px), gmlog_features(px), brisque_features(px))


def quality_features(img):
    """The 94-value vector for one image."""
    return quality_feature_vector(img).vector


# declared per-pixel operation count of the three descriptors (filters,
# products and moment sums over both scales), used for system FLOP budgets
IQA_OPS_PER_PIXEL = 400


def iqa_flops(height, width):
    return IQA_OPS_PER_PIXEL * int(height) * int(width)
