"""Loss terms with analytic gradients: MSE, windowed SSIM / cSSIM and a
fixed random-convolution perceptual distance.

SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the
window fits inside the plane, with ``C1 = (0.01 L)^2`` and ``C2 = (0.03 L)^2``.
"""

from __future__ import annotations

import numpy as np

from .engine import conv2d, conv2d_backward, relu

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MAG_EPS = 1e-12


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


_G = gaussian_window()


def _filt(x: np.ndarray) -> np.ndarray:
    """Valid separable Gaussian filter over the last two axes."""
    y = np.lib.stride_tricks.sliding_window_view(x, SSIM_WIN, axis=-1) @ _G
    return np.lib.stride_tricks.sliding_window_view(y, SSIM_WIN, axis=-2) @ _G


def _filt_adjoint(m: np.ndarray, shape) -> np.ndarray:
    hh, ww = shape[-2:]
    ho, wo = m.shape[-2:]
    tmp = np.zeros(m.shape[:-2] + (hh, wo))
    for k in range(SSIM_WIN):
        tmp[..., k:k + ho, :] += _G[k] * m
    out = np.zeros(m.shape[:-2] + (hh, ww))
    for k in range(SSIM_WIN):
        out[..., :, k:k + wo] += _G[k] * tmp
    return out


def ssim(x: np.ndarray, y: np.ndarray, data_range, grad: bool = False):
    """Mean SSIM of each plane in stacks ``x``, ``y`` of shape ``(..., H, W)``.

    ``data_range`` broadcasts against the leading axes. Returns the per-plane
    values, plus d(value)/dx when ``grad`` is set.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if x.shape[-1] < SSIM_WIN or x.shape[-2] < SSIM_WIN:
        raise ValueError(f"ssim: {SSIM_WIN}x{SSIM_WIN} window larger than plane {x.shape[-2:]}")
    rng_ = np.asarray(data_range, dtype=np.float64)[..., None, None]
    c1 = (SSIM_K1 * rng_) ** 2
    c2 = (SSIM_K2 * rng_) ** 2

    mx, my = _filt(x), _filt(y)
    sxx, syy, sxy = _filt(x * x), _filt(y * y), _filt(x * y)
    vx, vy, cxy = sxx - mx * mx, syy - my * my, sxy - mx * my
    a1, a2 = 2 * mx * my + c1, 2 * cxy + c2
    b1, b2 = mx * mx + my * my + c1, vx + vy + c2
    smap = a1 * a2 / (b1 * b2)
    npix = smap.shape[-1] * smap.shape[-2]
    val = smap.sum(axis=(-2, -1)) / npix
    if not grad:
        return val

    d_mx = 2 * my * a2 / (b1 * b2) - 2 * mx * a1 * a2 / (b1 * b1 * b2)
    d_vx = -a1 * a2 / (b1 * b2 * b2)
    d_cxy = 2 * a1 / (b1 * b2)
    g_mx = (d_mx - 2 * mx * d_vx - my * d_cxy) / npix
    g_sxx = d_vx / npix
    g_sxy = d_cxy / npix
    dx = _filt_adjoint(g_mx, x.shape) + 2 * x * _filt_adjoint(g_sxx, x.shape) + y * _filt_adjoint(g_sxy, x.shape)
    return val, dx


def plane_range(target: np.ndarray) -> np.ndarray:
    """Per-plane dynamic range ``max |target|`` for complex planes ``(P, H, W)``; 1 for silent planes."""
    r = np.abs(target).max(axis=(-2, -1))
    return np.where(r > 0, r, 1.0)


def cssim_planes(pred: np.ndarray, target: np.ndarray, data_range=None, grad: bool = False):
    """Mean of real- and imaginary-part SSIM over complex planes ``(P, H, W)``.

    With ``grad`` also returns d(mean cSSIM)/d(pred.real) and d/d(pred.imag).
    """
    if data_range is None:
        data_range = plane_range(target)
    n = pred.shape[0]
    if not grad:
        s_re = ssim(pred.real, target.real, data_range)
        s_im = ssim(pred.imag, target.imag, data_range)
        return float(np.mean((s_re + s_im) / 2.0))
    s_re, g_re = ssim(pred.real, target.real, data_range, grad=True)
    s_im, g_im = ssim(pred.imag, target.imag, data_range, grad=True)
    return float(np.mean((s_re + s_im) / 2.0)), g_re / (2 * n), g_im / (2 * n)


def mse(pred: np.ndarray, target: np.ndarray, reduction: str = "mean"):
    """Squared error over all real components; returns ``(value, d/dpred)``."""
    diff = pred - target
    if reduction == "mean":
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    if reduction == "sum":
        return float(np.sum(diff * diff)), 2.0 * diff
    raise ValueError(f"unknown reduction {reduction!r}")


def magnitude(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    return np.sqrt(re * re + im * im + MAG_EPS * MAG_EPS)


class PerceptualExtractor:
    """Fixed 3x3/stride-2 conv stack 1->8->16->16 with ReLU.

    Weights are standard normal draws scaled by ``1 / fan_in``; biases zero.
    """

    channels = (1, 8, 16, 16)
    min_size = 16

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.weights = []
        for cin, cout in zip(self.channels[:-1], self.channels[1:]):
            fan_in = cin * 9
            self.weights.append((rng.standard_normal((cout, cin, 3, 3)) / fan_in, np.zeros(cout)))

    def _check(self, planes):
        if planes.shape[-1] < self.min_size or planes.shape[-2] < self.min_size:
            raise ValueError(f"perceptual features need planes >= {self.min_size}x{self.min_size}, got {planes.shape[-2:]}")

    def features(self, planes: np.ndarray, keep: bool = False):
        """Feature maps for real planes ``(P, H, W)``; with ``keep`` also the caches."""
        planes = np.asarray(planes, dtype=np.float64)
        self._check(planes)
        h = planes[:, None]
        caches = []
        for w, b in self.weights:
            z, c = conv2d(h, w, b)
            caches.append((c, z))
            h = relu(z)
        return (h, caches) if keep else h

    def preactivations(self, planes: np.ndarray) -> np.ndarray:
        """First-layer pre-activations (linear in the input)."""
        w, b = self.weights[0]
        return conv2d(np.asarray(planes, dtype=np.float64)[:, None], w, b)[0]

    def loss(self, pred: np.ndarray, target: np.ndarray, grad: bool = False):
        """Mean absolute feature difference; with ``grad`` also d/dpred."""
        fp, caches = self.features(pred, keep=True)
        ft = self.features(target)
        diff = fp - ft
        val = float(np.mean(np.abs(diff)))
        if not grad:
            return val
        d = np.sign(diff) / diff.size
        for (c, z), _ in zip(reversed(caches), self.weights[::-1]):
            d = d * (z > 0)
            d, _, _ = conv2d_backward(d, c)
        return val, d[:, 0]
