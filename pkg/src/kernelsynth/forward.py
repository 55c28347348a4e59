"""The diagonalized kernel-synthesis operator and its closed-form solves.

``H = F^T diag(lam) F`` with a real, index-symmetric multiplier ``lam``, so
``H`` is self-adjoint and every regularized least-squares problem built from
it is solved bin-by-bin in the Fourier domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .core import FrequencyGrid, Image
from .errors import DfovMismatch, SingularSystem, SizeMismatch
from .mtf import DEFAULT_EPS, KernelMtfProfile, TransferFilter, forward_filter

__all__ = [
    "ForwardOperator",
    "make_operator",
    "apply_h",
    "apply_h_adjoint",
    "direct_ratio_synthesis",
    "tikhonov_init",
    "dc_step",
    "dc_step_grad_z",
    "identity_operator",
]

# smallest filter value for which an unregularized solve is allowed
_MIN_LAMBDA = 1e-8


def _rfft(a):
    return sfft.rfft2(a, norm="ortho")


def _irfft(spec, n):
    return sfft.irfft2(spec, s=(n, n), norm="ortho")


def _check(grid: FrequencyGrid, img: Image, what: str):
    if img.size != grid.size:
        raise SizeMismatch(f"{what} is {img.size}x{img.size}, operator grid is {grid.size}")
    if img.dfov_cm != grid.dfov_cm:
        raise DfovMismatch(f"{what} has DFOV {img.dfov_cm} cm, operator grid has {grid.dfov_cm} cm")


@dataclass(frozen=True, eq=False)
class ForwardOperator:
    """Kernel-synthesis forward model ``y = H x`` for one grid.

    Filter values are sampled once here; all solves reuse the half-spectrum
    copies cached on first use.
    """

    filter: TransferFilter

    @property
    def grid(self) -> FrequencyGrid:
        return self.filter.grid

    @property
    def size(self) -> int:
        return self.filter.grid.size

    @cached_property
    def half(self) -> np.ndarray:
        """Filter values on the ``rfft2`` half plane."""
        return np.ascontiguousarray(self.filter.values[:, : self.size // 2 + 1])

    @cached_property
    def half_sq(self) -> np.ndarray:
        return self.half * self.half

    @cached_property
    def min_value(self) -> float:
        return float(self.filter.values.min())

    def check_lambda(self, lam: float):
        if lam < 0 or not np.isfinite(lam):
            raise ValueError(f"regularization weight must be finite and >= 0, got {lam}")
        if lam == 0 and self.min_value <= _MIN_LAMBDA:
            raise SingularSystem(
                f"lambda == 0 but the filter reaches {self.min_value:.3g}; "
                "the unregularized solve is ill-posed"
            )

    def filter_image(self, x: Image, what: str = "image") -> Image:
        _check(self.grid, x, what)
        return x.with_pixels(_irfft(self.half * _rfft(x.pixels), self.size))

    # spectral building blocks shared by the unrolled solver

    def spectrum(self, x: Image, what: str = "image") -> np.ndarray:
        _check(self.grid, x, what)
        return _rfft(x.pixels)

    def to_image(self, spec: np.ndarray) -> np.ndarray:
        return _irfft(spec, self.size)

    def solve_spectrum(self, data_term: np.ndarray, z_spec, lam: float) -> np.ndarray:
        """``(data_term + lam * Z) / (lam_filter**2 + lam)`` on the half plane."""
        num = data_term if z_spec is None else data_term + lam * z_spec
        return num / (self.half_sq + lam)


def make_operator(input_mtf: KernelMtfProfile, target_mtf: KernelMtfProfile,
                  grid: FrequencyGrid, eps: float = DEFAULT_EPS) -> ForwardOperator:
    """Forward model taking target-kernel images to input-kernel images."""
    return ForwardOperator(forward_filter(input_mtf, target_mtf, grid, eps))


def apply_h(op: ForwardOperator, x: Image) -> Image:
    """``H x = F^T (lam * F x)``."""
    return op.filter_image(x, "x")


def apply_h_adjoint(op: ForwardOperator, y: Image) -> Image:
    """``H^T y``. The multiplier is real and index-symmetric, so this is ``H y``."""
    return op.filter_image(y, "y")


def direct_ratio_synthesis(y: Image, ratio: TransferFilter) -> Image:
    """One-shot MTF-ratio kernel conversion ``F^T (ratio * F y)``.

    No noise control: every frequency where the ratio exceeds one amplifies
    the input noise by the same factor.
    """
    return ForwardOperator(ratio).filter_image(y, "y")


def tikhonov_init(op: ForwardOperator, y: Image, lambda0: float) -> Image:
    """Regularized deconvolution ``(H^T H + lambda0 I)^-1 H^T y``."""
    op.check_lambda(lambda0)
    spec = op.spectrum(y, "y")
    return y.with_pixels(op.to_image(op.solve_spectrum(op.half * spec, None, lambda0)))


def dc_step(op: ForwardOperator, y: Image, z: Image, lambda_k: float) -> Image:
    """Exact minimizer of ``||y - H x||^2 + lambda_k ||x - z||^2``.

    Uses the fused form ``(lam * F y + lambda_k * F z) / (lam**2 + lambda_k)``,
    which equals ``F(H^T y + lambda_k z) / (lam**2 + lambda_k)``.
    """
    op.check_lambda(lambda_k)
    y_spec = op.spectrum(y, "y")
    z_spec = op.spectrum(z, "z")
    return y.with_pixels(op.to_image(op.solve_spectrum(op.half * y_spec, z_spec, lambda_k)))


def dc_step_grad_z(op: ForwardOperator, upstream: Image, lambda_k: float) -> Image:
    """Vector-Jacobian product of ``dc_step`` with respect to ``z``.

    The map ``z -> dc_step(y, z, lambda_k)`` is affine with the symmetric
    linear part ``F^T (lambda_k / (lam**2 + lambda_k)) F``.
    """
    op.check_lambda(lambda_k)
    spec = op.spectrum(upstream, "upstream")
    return upstream.with_pixels(op.to_image(lambda_k * spec / (op.half_sq + lambda_k)))


def identity_operator(grid: FrequencyGrid) -> ForwardOperator:
    return ForwardOperator(TransferFilter(grid, np.ones((grid.size, grid.size))))

