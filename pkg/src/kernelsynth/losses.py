"""SSIM and the MSE + SSIM training loss, both with analytic gradients."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .core import Image
from .errors import SizeMismatch

__all__ = ["ssim", "ssim_and_grad", "loss", "gaussian_window_matrix"]

WINDOW_SIGMA = 1.5
WINDOW_RADIUS = 5  # 11 x 11 window
K1, K2 = 0.01, 0.03


@lru_cache(maxsize=16)
def gaussian_window_matrix(n: int) -> np.ndarray:
    """Matrix ``A`` with ``A @ v`` the 11-tap Gaussian smoothing of ``v``.

    Borders are handled by half-sample symmetric extension, so the window
    works for any image size.
    """
    a = gaussian_filter1d(np.eye(n), WINDOW_SIGMA, axis=0, mode="reflect",
                          truncate=WINDOW_RADIUS / WINDOW_SIGMA)
    a.flags.writeable = False
    return a


def _pixels(x):
    return x.pixels if isinstance(x, Image) else np.asarray(x, dtype=float)


def _data_range(target: np.ndarray, data_range) -> float:
    if data_range is not None:
        if data_range <= 0:
            raise ValueError("data_range must be positive")
        return float(data_range)
    r = float(target.max() - target.min())
    return r if r > 0 else 1.0


def _ssim_terms(a, b, data_range):
    if a.shape != b.shape:
        raise SizeMismatch(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    g = gaussian_window_matrix(a.shape[0])

    def smooth(x):
        return g @ x @ g.T

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = smooth(a), smooth(b)
    s_aa, s_bb, s_ab = smooth(a * a), smooth(b * b), smooth(a * b)
    cov = s_ab - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + c1
    a2 = 2 * cov + c2
    b1 = mu_a ** 2 + mu_b ** 2 + c1
    b2 = (s_aa - mu_a ** 2) + (s_bb - mu_b ** 2) + c2
    return g, mu_a, mu_b, a1, a2, b1, b2


def ssim(a, b, data_range: float | None = None) -> float:
    """Mean local SSIM (11 x 11 Gaussian window, sigma 1.5).

    ``data_range`` defaults to the value range of ``b``.
    """
    a, b = _pixels(a), _pixels(b)
    *_, a1, a2, b1, b2 = _ssim_terms(a, b, _data_range(b, data_range))
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_and_grad(a, b, data_range: float | None = None):
    """SSIM and its gradient with respect to ``a``."""
    a, b = _pixels(a), _pixels(b)
    g, mu_a, mu_b, a1, a2, b1, b2 = _ssim_terms(a, b, _data_range(b, data_range))
    den = b1 * b2
    s_map = a1 * a2 / den
    m = a.size
    d_mu = (2 * mu_b * (a2 - a1) / den - 2 * mu_a * s_map * (1 / b1 - 1 / b2)) / m
    d_sab = 2 * a1 / den / m
    d_saa = -s_map / b2 / m

    def smooth_t(x):
        return g.T @ x @ g

    grad = smooth_t(d_mu) + b * smooth_t(d_sab) + 2 * a * smooth_t(d_saa)
    return float(np.mean(s_map)), grad


def loss(pred, target, w_ssim: float = 0.1, data_range: float | None = None):
    """``MSE + w_ssim * (1 - SSIM)`` and its gradient with respect to ``pred``.

    Returns ``(value, grad, parts)`` where ``parts`` holds the ``mse`` and
    ``ssim`` terms for logging.
    """
    p, t = _pixels(pred), _pixels(target)
    if p.shape != t.shape:
        raise SizeMismatch(f"prediction {p.shape} and target {t.shape} differ")
    diff = p - t
    mse = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    if not w_ssim:
        return mse, grad, {"mse": mse, "ssim": ssim(p, t, data_range)}
    s, g_s = ssim_and_grad(p, t, data_range)
    return mse + w_ssim * (1.0 - s), grad - w_ssim * g_s, {"mse": mse, "ssim": s}
