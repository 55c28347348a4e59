"""Synthetic test objects, kernel-shaped noise and training-pair simulation.

Random numbers come from numpy's ``PCG64`` bit generator seeded through
``SeedSequence``, so every generator here is a pure function of its
parameters and seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .core import FrequencyGrid, Image, read_ksim, write_ksim
from .errors import FormatError
from .mtf import DEFAULT_INPUT_MTF, KernelMtfProfile, eval_profile

__all__ = [
    "SHEPP_LOGAN_ELLIPSES",
    "NoiseModel",
    "render_ellipses",
    "shepp_logan",
    "random_ellipses",
    "wire_phantom",
    "water_phantom",
    "noise_power_spectrum",
    "shaped_noise",
    "kernel_filtered",
    "make_training_pair",
    "simulate_pair",
    "simulate_pairs",
    "write_manifest",
    "read_manifest",
]

# (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees);
# modified Shepp-Logan with the contrast-enhanced intensities, values in [0, 1]
SHEPP_LOGAN_ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def pixel_coordinates(n: int):
    """Pixel-center coordinates on [-1, 1]; x grows right, y grows up."""
    c = (2.0 * np.arange(n) + 1.0 - n) / n
    return c[None, :], -c[:, None]


def render_ellipses(n: int, ellipses) -> np.ndarray:
    """Sum the intensities of all ellipses containing each pixel center."""
    x, y = pixel_coordinates(n)
    out = np.zeros((n, n))
    for amp, a, b, x0, y0, phi in ellipses:
        t = np.deg2rad(phi)
        dx, dy = x - x0, y - y0
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        out += np.where((u / a) ** 2 + (v / b) ** 2 <= 1.0, amp, 0.0)
    return out


def shepp_logan(n: int, dfov_cm: float, window=(0.0, 1.0), ellipses=None) -> Image:
    """Analytic 10-ellipse Shepp-Logan slice.

    Native values lie in [0, 1] and are mapped linearly onto ``window``.
    """
    if n < 16:
        raise ValueError("Shepp-Logan phantom needs n >= 16")
    base = render_ellipses(n, SHEPP_LOGAN_ELLIPSES if ellipses is None else ellipses)
    lo, hi = window
    return Image(lo + (hi - lo) * base, dfov_cm)


def random_ellipses(n: int, dfov_cm: float, seed, count: int = 12) -> Image:
    """Randomized ellipse phantom: a body ellipse plus ``count`` inserts.

    Used to give training sets more structural variety than a single
    Shepp-Logan slice. Values stay in [0, 1].
    """
    rng = _rng(seed)
    body = (0.5, rng.uniform(0.75, 0.95), rng.uniform(0.75, 0.95), 0.0, 0.0, rng.uniform(-20, 20))
    inserts = []
    for _ in range(count):
        a, b = rng.uniform(0.02, 0.3, size=2)
        r = rng.uniform(0.0, 0.6)
        theta = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(-0.35, 0.45)
        inserts.append((amp, a, b, r * np.cos(theta), r * np.sin(theta), rng.uniform(0, 180)))
    px = np.clip(render_ellipses(n, [body, *inserts]), 0.0, 1.0)
    return Image(px, dfov_cm)


def wire_phantom(n: int, dfov_cm: float, amplitude: float = 1.0) -> Image:
    """Single-pixel point source at ``(n // 2, n // 2)`` on a zero background."""
    if n < 32:
        raise ValueError("wire phantom needs n >= 32")
    px = np.zeros((n, n))
    px[n // 2, n // 2] = amplitude
    return Image(px, dfov_cm)


@dataclass(frozen=True)
class NoiseModel:
    """Kernel-shaped stationary noise with ``NPS(f) ~ f**ramp * M(f)**2``.

    ``sigma`` is the pixel standard deviation that noise shaped by
    ``shaping_profile`` has in expectation. Noise for other kernels drawn with
    the same model (see :func:`make_training_pair`) keeps the same underlying
    quantum level, so sharper kernels come out noisier.
    """

    sigma: float = 0.0
    shaping_profile: KernelMtfProfile = field(default_factory=lambda: DEFAULT_INPUT_MTF)
    ramp_exponent: float = 1.0

    def __post_init__(self):
        if self.sigma < 0 or not np.isfinite(self.sigma):
            raise ValueError("noise sigma must be finite and >= 0")


def noise_power_spectrum(grid: FrequencyGrid, profile: KernelMtfProfile,
                         ramp_exponent: float = 1.0) -> np.ndarray:
    """Unnormalized NPS shape on the full DFT grid, zero at DC."""
    f = grid.radial
    with np.errstate(divide="ignore"):
        ramp = np.where(f > 0, f ** ramp_exponent, 0.0)
    nps = ramp * eval_profile(profile, f) ** 2
    nps[0, 0] = 0.0
    return nps


def _noise_scale(grid: FrequencyGrid, model: NoiseModel) -> float:
    # expected pixel variance of F^T(c sqrt(NPS) F w), w white, is c^2 sum(NPS) / N^2
    total = noise_power_spectrum(grid, model.shaping_profile, model.ramp_exponent).sum()
    if total == 0:
        return 0.0
    return model.sigma * grid.size / np.sqrt(total)


def _draw_shaped(grid: FrequencyGrid, profile, ramp_exponent, scale, rng) -> np.ndarray:
    n = grid.size
    white = rng.standard_normal((n, n))
    if scale == 0.0:
        return np.zeros((n, n))
    amp = np.sqrt(noise_power_spectrum(grid, profile, ramp_exponent))[:, : n // 2 + 1]
    spec = sfft.rfft2(white, norm="ortho") * (scale * amp)
    return sfft.irfft2(spec, s=(n, n), norm="ortho")


def shaped_noise(grid: FrequencyGrid, model: NoiseModel, seed) -> Image:
    """Zero-mean Gaussian noise with the model's NPS and expected std ``sigma``."""
    scale = _noise_scale(grid, model)
    px = _draw_shaped(grid, model.shaping_profile, model.ramp_exponent, scale, _rng(seed))
    return Image(px, grid.dfov_cm)


def water_phantom(n: int, dfov_cm: float, model: NoiseModel, seed,
                  disk_value: float = 0.0, background: float = -1000.0,
                  diameter_fraction: float = 0.9) -> Image:
    """Uniform disk of diameter ``diameter_fraction * n`` plus shaped noise."""
    if n < 32:
        raise ValueError("water phantom needs n >= 32")
    px = np.where(disk_mask(n, diameter_fraction), disk_value, background)
    noise = shaped_noise(FrequencyGrid(n, dfov_cm), model, seed)
    return Image(px + noise.pixels, dfov_cm)


def disk_mask(n: int, diameter_fraction: float = 0.9) -> np.ndarray:
    """Pixels whose centers lie inside the centered disk."""
    c = np.arange(n) - (n - 1) / 2.0
    return np.hypot(c[:, None], c[None, :]) <= diameter_fraction * n / 2.0


def kernel_filtered(image: Image, profile: KernelMtfProfile) -> Image:
    """Noise-free image as seen through a kernel: ``F^T M F image``."""
    n = image.size
    m = eval_profile(profile, image.grid.radial)[:, : n // 2 + 1]
    spec = sfft.rfft2(image.pixels, norm="ortho") * m
    return image.with_pixels(sfft.irfft2(spec, s=(n, n), norm="ortho"))


def make_training_pair(ground_truth: Image, input_mtf: KernelMtfProfile,
                       target_mtf: KernelMtfProfile, model: NoiseModel, seed):
    """Simulate an (input-kernel, target-kernel) image pair of one scene.

    Each image is the ground truth filtered by its kernel MTF plus
    independent kernel-shaped noise. Both noise fields share the model's
    normalization, so the target noise is stronger when the target kernel
    passes more high frequencies.
    """
    grid = ground_truth.grid
    scale = _noise_scale(grid, model)
    rng_in, rng_tg = (np.random.Generator(np.random.PCG64(s))
                      for s in np.random.SeedSequence(seed).spawn(2))
    noisy = []
    for profile, rng in ((input_mtf, rng_in), (target_mtf, rng_tg)):
        clean = kernel_filtered(ground_truth, profile).pixels
        noise = _draw_shaped(grid, profile, model.ramp_exponent, scale, rng)
        noisy.append(Image(clean + noise, grid.dfov_cm))
    return noisy[0], noisy[1]


def simulate_pair(index: int, n: int, dfov_list, input_mtf: KernelMtfProfile,
                  target_mtf: KernelMtfProfile, model: NoiseModel, seed=0,
                  phantom: str = "random") -> dict:
    """Pair ``index`` of a round-robin dataset over ``dfov_list``.

    The scene is drawn from ``(seed, index, 0)`` and the noise from
    ``(seed, index, 1)``, so pairs can be generated in any order or in
    parallel. ``phantom="random"`` uses :func:`random_ellipses`,
    ``"shepp-logan"`` the fixed slice.
    """
    if phantom not in ("random", "shepp-logan"):
        raise ValueError(f"unknown phantom {phantom!r}")
    dfovs = [float(d) for d in dfov_list]
    if not dfovs:
        raise ValueError("need at least one DFOV")
    dfov = dfovs[index % len(dfovs)]
    if phantom == "random":
        gt = random_ellipses(n, dfov, [int(seed), index, 0])
    else:
        gt = shepp_logan(n, dfov)
    y, t = make_training_pair(gt, input_mtf, target_mtf, model, [int(seed), index, 1])
    return {"input": y, "target": t, "dfov_cm": dfov, "index": index}


def simulate_pairs(count: int, n: int, dfov_list, input_mtf: KernelMtfProfile,
                   target_mtf: KernelMtfProfile, model: NoiseModel, seed=0,
                   phantom: str = "random", workers: int = 1) -> list:
    """``count`` pairs from :func:`simulate_pair`, in index order."""
    if count < 0:
        raise ValueError("count must be >= 0")

    def one(i):
        return simulate_pair(i, n, dfov_list, input_mtf, target_mtf, model, seed, phantom)

    if workers <= 1:
        return [one(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(count)))


def write_manifest(path, pairs, extra: dict | None = None) -> None:
    """Write a dataset manifest.

    ``pairs`` holds dicts with keys ``input_path``, ``target_path``,
    ``dfov_cm`` and ``seed``; paths are stored relative to the manifest.
    """
    path = Path(path)
    base = path.parent.resolve()
    rows = []
    for p in pairs:
        row = dict(p)
        for key in ("input_path", "target_path"):
            q = Path(row[key]).resolve()
            row[key] = str(q.relative_to(base)) if q.is_relative_to(base) else str(q)
        rows.append(row)
    path.write_text(json.dumps({"version": 1, **(extra or {}), "pairs": rows}, indent=2))


def read_manifest(path, load: bool = True):
    """Read a manifest; with ``load`` also read the referenced images.

    Returns a list of dicts with absolute paths and, when loading, ``input``
    and ``target`` images.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
        pairs = obj["pairs"]
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a dataset manifest ({exc})") from exc
    out = []
    for p in pairs:
        row = dict(p)
        for key in ("input_path", "target_path"):
            q = Path(row[key])
            row[key] = str(q if q.is_absolute() else path.parent / q)
        if load:
            row["input"] = read_ksim(row["input_path"])
            row["target"] = read_ksim(row["target_path"])
            if row["input"].dfov_cm != float(row["dfov_cm"]) or row["target"].dfov_cm != float(row["dfov_cm"]):
                raise FormatError(f"{path}: DFOV in manifest disagrees with image headers")
        out.append(row)
    return out
