"""Wire-phantom MTF estimation, MTF fidelity and image-quality metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .core import Image
from .errors import BandOutOfRange, FormatError, NoPeak, RoiOutOfBounds, SizeMismatch
from .losses import ssim
from .mtf import KernelMtfProfile, eval_profile

__all__ = [
    "MtfCurve",
    "estimate_mtf",
    "profile_curve",
    "roi_half_width_for",
    "mtf_fidelity",
    "image_metrics",
    "autocorrelation_fwhm",
    "write_curve_csv",
    "read_curve_csv",
]

SOURCES = ("input", "target", "direct", "proposed", "estimated")


@dataclass(frozen=True, eq=False)
class MtfCurve:
    """Sampled radial MTF; frequencies in lp/cm, strictly increasing from 0."""

    freqs: np.ndarray
    values: np.ndarray
    dfov_cm: float
    source: str = "estimated"

    def __post_init__(self):
        f = np.array(self.freqs, dtype=float)
        v = np.array(self.values, dtype=float)
        if f.ndim != 1 or f.shape != v.shape or f.size < 2:
            raise ValueError("MTF curve needs matching 1D frequency and value arrays")
        if f[0] != 0.0 or np.any(np.diff(f) <= 0):
            raise ValueError("MTF frequencies must start at 0 and increase strictly")
        if self.source not in SOURCES:
            raise ValueError(f"unknown curve source {self.source!r}")
        f.flags.writeable = v.flags.writeable = False
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "values", v)

    def __call__(self, f):
        return np.interp(f, self.freqs, self.values)


def _border_ring(a: np.ndarray, width: int = 2) -> np.ndarray:
    mask = np.ones(a.shape, bool)
    mask[width:-width, width:-width] = False
    return a[mask]


def estimate_mtf(wire_image: Image, roi_half_width: int = 16, window: str = "none") -> MtfCurve:
    """Estimate the MTF from the image of a point-like wire.

    Procedure: locate the peak, crop a ``2 h + 1`` square ROI around it,
    subtract the median of the ROI border ring, optionally apply a 2D Hann
    window, take the DFT magnitude, average it in radial bins one ROI
    frequency step wide, and scale so the DC bin is 1.
    """
    if window not in ("none", "hann"):
        raise ValueError(f"window must be 'none' or 'hann', got {window!r}")
    px = wire_image.pixels
    n = wire_image.size
    h = int(roi_half_width)
    if h < 2:
        raise ValueError("roi_half_width must be at least 2")
    peak = np.max(np.abs(px))
    floor = 3.0 * np.std(_border_ring(px)) if n > 4 else 0.0
    if peak <= floor:
        raise NoPeak(f"peak |pixel| {peak:.3g} is not above the noise floor {floor:.3g}")
    r, c = np.unravel_index(np.argmax(np.abs(px)), px.shape)
    if r - h < 0 or c - h < 0 or r + h >= n or c + h >= n:
        raise RoiOutOfBounds(f"ROI of half width {h} around ({r}, {c}) leaves the {n}x{n} image")
    roi = px[r - h: r + h + 1, c - h: c + h + 1].copy()
    roi -= np.median(_border_ring(roi, 2))
    side = 2 * h + 1
    if window == "hann":
        w = np.hanning(side)
        roi *= np.outer(w, w)
    mag = np.abs(sfft.fft2(roi))
    k = sfft.fftfreq(side) * side  # integer frequency indices
    radius = np.hypot(k[:, None], k[None, :])
    bins = np.rint(radius).astype(int)
    nbins = side // 2 + 1
    keep = bins < nbins
    sums = np.bincount(bins[keep], weights=mag[keep], minlength=nbins)
    counts = np.bincount(bins[keep], minlength=nbins)
    idx = np.arange(nbins)
    filled = counts > 0
    prof = np.interp(idx, idx[filled], sums[filled] / counts[filled])
    if prof[0] == 0:
        raise NoPeak("wire ROI has zero net signal")
    df = 1.0 / (side * wire_image.spacing_cm)
    return MtfCurve(idx * df, prof / prof[0], wire_image.dfov_cm, "estimated")


def roi_half_width_for(image: Image, half_width_cm: float = 0.6) -> int:
    """ROI half width in pixels covering a fixed physical extent.

    A fixed physical ROI keeps the background-estimation error comparable
    across DFOVs, since the wire response shrinks in pixels as DFOV grows.
    """
    return max(2, int(round(half_width_cm / image.spacing_cm)))


def profile_curve(profile: KernelMtfProfile, dfov_cm: float, f_max: float,
                  samples: int = 513, source: str = "target") -> MtfCurve:
    """Reference curve sampled from a kernel profile on ``[0, f_max]``."""
    f = np.linspace(0.0, f_max, samples)
    return MtfCurve(f, eval_profile(profile, f), dfov_cm, source)


def mtf_fidelity(estimated: MtfCurve, reference: MtfCurve, band) -> float:
    """RMSE between two curves on the union of their samples inside ``band``."""
    lo, hi = map(float, band)
    top = min(estimated.freqs[-1], reference.freqs[-1])
    if lo < 0 or hi <= lo or hi > top * (1 + 1e-12):
        raise BandOutOfRange(f"band [{lo}, {hi}] not inside the common support [0, {top}]")
    f = np.union1d(estimated.freqs, reference.freqs)
    f = np.union1d(f[(f >= lo) & (f <= hi)], [lo, hi])
    d = estimated(f) - reference(f)
    return float(np.sqrt(np.mean(d * d)))


def image_metrics(pred: Image, target: Image) -> dict:
    """MSE, PSNR (target value range as peak) and SSIM."""
    p, t = pred.pixels, target.pixels
    if p.shape != t.shape:
        raise SizeMismatch(f"prediction {p.shape} and target {t.shape} differ")
    mse = float(np.mean((p - t) ** 2))
    rng = float(t.max() - t.min()) or 1.0
    psnr = float("inf") if mse == 0 else float(10 * np.log10(rng * rng / mse))
    return {"mse": mse, "psnr": psnr, "ssim": ssim(p, t)}


def autocorrelation_fwhm(noise_images, upsample: int = 8) -> float:
    """FWHM in pixels of the mean noise autocorrelation along the row axis.

    The autocorrelation is the inverse transform of the averaged periodogram,
    band-limited interpolated by zero padding the spectrum ``upsample`` times.
    """
    imgs = [getattr(x, "pixels", x) for x in noise_images]
    n = imgs[0].shape[0]
    power = np.mean([np.abs(sfft.fft2(a - a.mean())) ** 2 for a in imgs], axis=0)
    # the ACF along axis 1 through lag 0 is the 1D inverse of the column-summed power
    line = sfft.fftshift(power.sum(axis=0))
    m = n * upsample
    padded = np.zeros(m)
    start = m // 2 - n // 2
    padded[start: start + n] = line
    acf = np.real(sfft.ifft(sfft.ifftshift(padded)))
    acf = acf / acf[0]
    half = acf[: m // 2]
    below = np.nonzero(half < 0.5)[0]
    if below.size == 0:
        raise ValueError("autocorrelation never falls below half maximum")
    j = below[0]
    x = (j - 1) + (acf[j - 1] - 0.5) / (acf[j - 1] - acf[j])
    return 2.0 * x / upsample


def write_curve_csv(path, curve: MtfCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_lp_per_cm", "mtf"])
        for f, v in zip(curve.freqs, curve.values):
            w.writerow([repr(float(f)), repr(float(v))])


def read_curve_csv(path, dfov_cm: float = 1.0, source: str = "estimated") -> MtfCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["freq_lp_per_cm", "mtf"]:
        raise FormatError(f"{path}: expected header 'freq_lp_per_cm,mtf'")
    data = np.array(rows[1:], dtype=float)
    return MtfCurve(data[:, 0], data[:, 1], dfov_cm, source)
