"""Images, spectra, the DFOV-aware frequency grid and the orthonormal FFT.

All images are square, real and stored as float64. Spectra use the standard
DFT index order (DC at ``[0, 0]``) and orthonormal scaling, so the forward
transform is unitary and its adjoint is its inverse.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import FormatError, NonRealResult

__all__ = [
    "Image",
    "Spectrum",
    "FrequencyGrid",
    "fft2",
    "ifft2",
    "frequency_at",
    "read_ksim",
    "write_ksim",
]

_IMAG_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """Square real-valued slice with its display field-of-view.

    Parameters
    ----------
    pixels : array_like, shape (N, N)
        Pixel values, row-major. Copied to a read-only float64 array.
    dfov_cm : float
        Physical width of the slice in cm. Pixel spacing is ``dfov_cm / N``.
    """

    pixels: np.ndarray
    dfov_cm: float

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.shape[0] != px.shape[1] or px.shape[0] < 1:
            raise ValueError(f"image must be square 2D, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite pixels")
        dfov = float(self.dfov_cm)
        if not np.isfinite(dfov) or dfov <= 0:
            raise ValueError(f"dfov_cm must be positive, got {self.dfov_cm!r}")
        object.__setattr__(self, "pixels", _frozen(px))
        object.__setattr__(self, "dfov_cm", dfov)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def spacing_cm(self) -> float:
        return self.dfov_cm / self.size

    @property
    def grid(self) -> "FrequencyGrid":
        return FrequencyGrid(self.size, self.dfov_cm)

    def with_pixels(self, pixels) -> "Image":
        """New image on the same grid."""
        return Image(pixels, self.dfov_cm)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Complex N x N DFT coefficients, DC at index (0, 0)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128, copy=True)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"spectrum must be square 2D, got shape {v.shape}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def symmetry_error(self) -> float:
        """Max deviation from ``S[u, v] == conj(S[-u, -v])``."""
        v = self.values
        mirrored = np.conj(np.roll(v[::-1, ::-1], 1, axis=(0, 1)))
        return float(np.max(np.abs(v - mirrored), initial=0.0))


@dataclass(frozen=True)
class FrequencyGrid:
    """Maps DFT indices of an N x N image with a given DFOV to lp/cm."""

    size: int
    dfov_cm: float

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"grid size must be a positive integer, got {self.size!r}")
        if not np.isfinite(self.dfov_cm) or self.dfov_cm <= 0:
            raise ValueError(f"dfov_cm must be positive, got {self.dfov_cm!r}")
        object.__setattr__(self, "size", int(self.size))
        object.__setattr__(self, "dfov_cm", float(self.dfov_cm))

    @property
    def spacing_cm(self) -> float:
        return self.dfov_cm / self.size

    @property
    def nyquist(self) -> float:
        """Maximum axial frequency N / (2 DFOV) in lp/cm."""
        return self.size / (2.0 * self.dfov_cm)

    @cached_property
    def axis(self) -> np.ndarray:
        """Signed 1D frequencies (lp/cm) in DFT order."""
        return _frozen(sfft.fftfreq(self.size, d=self.spacing_cm))

    @cached_property
    def radial(self) -> np.ndarray:
        """Radial frequency ``sqrt(fu**2 + fv**2)`` for every DFT index."""
        fu = self.axis
        return _frozen(np.hypot(fu[:, None], fu[None, :]))

    def matches(self, image: Image) -> bool:
        return image.size == self.size and image.dfov_cm == self.dfov_cm


def frequency_at(grid: FrequencyGrid, u: int, v: int) -> float:
    """Radial spatial frequency in lp/cm of DFT index ``(u, v)``."""
    n = grid.size
    if not (0 <= u < n and 0 <= v < n):
        raise IndexError(f"index ({u}, {v}) outside 0..{n - 1}")
    return float(grid.radial[u, v])


def fft2(image: Image) -> Spectrum:
    """Unitary 2D DFT of an image."""
    return Spectrum(sfft.fft2(image.pixels, norm="ortho"))


def ifft2(spectrum: Spectrum, dfov_cm: float = 1.0) -> Image:
    """Inverse unitary DFT; refuses spectra whose inverse is not real.

    The residual imaginary part is dropped only when it is below ``1e-9``
    times the largest real magnitude.
    """
    out = sfft.ifft2(spectrum.values, norm="ortho")
    imag = np.max(np.abs(out.imag), initial=0.0)
    real = np.max(np.abs(out.real), initial=0.0)
    if imag > _IMAG_TOL * real or (real == 0.0 and imag > 0.0):
        raise NonRealResult(
            f"inverse transform has imaginary part {imag:.3g} "
            f"(real magnitude {real:.3g}); spectrum is not conjugate-symmetric"
        )
    return Image(out.real, dfov_cm)


# KSIM v1: b"KSIM", u8 version, u32 N, f64 dfov_cm, N*N f32 pixels (all little-endian)
_KSIM_MAGIC = b"KSIM"
_KSIM_HEADER = struct.Struct("<4sBId")


def write_ksim(path, image: Image) -> None:
    path = Path(path)
    header = _KSIM_HEADER.pack(_KSIM_MAGIC, 1, image.size, image.dfov_cm)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.pixels.astype("<f4").tobytes())


def read_ksim(path) -> Image:
    data = Path(path).read_bytes()
    if len(data) < _KSIM_HEADER.size:
        raise FormatError(f"{path}: truncated KSIM header")
    magic, version, n, dfov = _KSIM_HEADER.unpack_from(data)
    if magic != _KSIM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise FormatError(f"{path}: unsupported KSIM version {version}")
    expected = _KSIM_HEADER.size + 4 * n * n
    if n < 1 or len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for N={n}, got {len(data)}")
    px = np.frombuffer(data, dtype="<f4", offset=_KSIM_HEADER.size).reshape(n, n)
    return Image(px.astype(np.float64), dfov)
