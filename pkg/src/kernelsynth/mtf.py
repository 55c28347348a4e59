"""Parametric kernel MTF profiles and the transfer filters built from them.

Two parametric families stand in for vendor kernels:

* ``smooth_gaussian``: ``M(f) = exp(-(f/f0)**p)``
* ``sharp_boosted``: the same envelope multiplied by a mid-frequency bump
  ``1 + beta * (f/fb)**2 * exp(1 - (f/fb)**2)`` that peaks at ``1 + beta``
  when ``f == fb``.

A ``tabulated`` profile linearly interpolates measured samples.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FrequencyGrid
from .errors import DivisionBlowup, FormatError

__all__ = [
    "KernelMtfProfile",
    "TransferFilter",
    "smooth_gaussian",
    "sharp_boosted",
    "tabulated",
    "flat_profile",
    "DEFAULT_INPUT_MTF",
    "DEFAULT_TARGET_MTF",
    "DEFAULT_EPS",
    "eval_profile",
    "sample_on_grid",
    "ratio_filter",
    "forward_filter",
    "load_profile",
    "save_profile",
]

DEFAULT_EPS = 1e-4

FAMILIES = ("SmoothGaussian", "SharpBoosted", "Tabulated")
_REQUIRED = {
    "SmoothGaussian": ("f0", "p"),
    "SharpBoosted": ("f0", "p", "beta", "f_beta"),
    "Tabulated": ("f", "mtf"),
}


@dataclass(frozen=True)
class KernelMtfProfile:
    """Radial MTF of a reconstruction kernel, ``M(0) == 1``."""

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown MTF family {self.family!r}; expected one of {FAMILIES}")
        missing = [k for k in _REQUIRED[self.family] if k not in self.params]
        if missing:
            raise ValueError(f"{self.family} profile missing parameters {missing}")
        params = dict(self.params)
        if self.family == "Tabulated":
            f = np.asarray(params["f"], dtype=float)
            m = np.asarray(params["mtf"], dtype=float)
            if f.ndim != 1 or f.shape != m.shape or f.size == 0:
                raise ValueError("tabulated profile needs equal-length 1D f and mtf samples")
            if f[0] != 0.0 or np.any(np.diff(f) <= 0):
                raise ValueError("tabulated frequencies must start at 0 and increase strictly")
            if m[0] != 1.0 or np.any(m < 0) or not np.all(np.isfinite(m)):
                raise ValueError("tabulated MTF must be finite, non-negative and 1 at f=0")
            params = {"f": tuple(f.tolist()), "mtf": tuple(m.tolist())}
        else:
            params = {k: float(v) for k, v in params.items()}
            if params["f0"] <= 0 or params["p"] <= 0:
                raise ValueError("f0 and p must be positive")
            if self.family == "SharpBoosted" and (params["beta"] < 0 or params["f_beta"] <= 0):
                raise ValueError("boost needs beta >= 0 and f_beta > 0")
        object.__setattr__(self, "params", params)

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    def __call__(self, f):
        return eval_profile(self, f)

    def to_dict(self) -> dict:
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        return {"family": self.family, "params": params}


def smooth_gaussian(f0: float = 6.0, p: float = 2.2) -> KernelMtfProfile:
    return KernelMtfProfile("SmoothGaussian", {"f0": f0, "p": p})


def sharp_boosted(f0: float = 11.0, p: float = 2.5, beta: float = 0.25,
                  f_beta: float = 6.0) -> KernelMtfProfile:
    return KernelMtfProfile("SharpBoosted", {"f0": f0, "p": p, "beta": beta, "f_beta": f_beta})


def tabulated(f, mtf) -> KernelMtfProfile:
    return KernelMtfProfile("Tabulated", {"f": f, "mtf": mtf})


def flat_profile() -> KernelMtfProfile:
    """``M(f) == 1`` everywhere; the identity kernel."""
    return tabulated([0.0], [1.0])


DEFAULT_INPUT_MTF = smooth_gaussian()
DEFAULT_TARGET_MTF = sharp_boosted()


def eval_profile(profile: KernelMtfProfile, f):
    """Evaluate ``M(f)`` for scalar or array ``f >= 0`` (lp/cm)."""
    fa = np.asarray(f, dtype=float)
    if np.any(fa < 0) or np.any(np.isnan(fa)):
        raise ValueError("MTF frequencies must be non-negative")
    par = profile.params
    if profile.family == "Tabulated":
        out = np.interp(fa, par["f"], par["mtf"])
    else:
        out = np.exp(-((fa / par["f0"]) ** par["p"]))
        if profile.family == "SharpBoosted":
            r2 = (fa / par["f_beta"]) ** 2
            out = out * (1.0 + par["beta"] * r2 * np.exp(1.0 - r2))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class TransferFilter:
    """Real non-negative spectral multiplier sampled on a frequency grid."""

    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        n = self.grid.size
        if v.shape != (n, n):
            raise ValueError(f"filter shape {v.shape} does not match grid size {n}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("filter values must be finite and non-negative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.grid.size


def sample_on_grid(profile: KernelMtfProfile, grid: FrequencyGrid) -> TransferFilter:
    """Sample a radial profile at every DFT index of ``grid``."""
    return TransferFilter(grid, eval_profile(profile, grid.radial))


def _wiener_ratio(num, den, eps):
    return num * den / (den * den + eps)


def ratio_filter(input_mtf: KernelMtfProfile, target_mtf: KernelMtfProfile,
                 grid: FrequencyGrid, eps: float = DEFAULT_EPS) -> TransferFilter:
    """Regularized target/input MTF ratio ``Mt Mi / (Mi**2 + eps)``.

    This is the one-shot synthesis filter of the direct MTF-ratio method.
    With ``eps == 0`` it is exactly ``Mt / Mi`` and any zero of ``Mi`` on the
    grid raises ``DivisionBlowup``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    mi = eval_profile(input_mtf, grid.radial)
    mt = eval_profile(target_mtf, grid.radial)
    if eps == 0 and np.any(mi == 0):
        raise DivisionBlowup("input MTF vanishes on the grid and eps == 0")
    return TransferFilter(grid, _wiener_ratio(mt, mi, eps))


def forward_filter(input_mtf: KernelMtfProfile, target_mtf: KernelMtfProfile,
                   grid: FrequencyGrid, eps: float = DEFAULT_EPS) -> TransferFilter:
    """Spectral multiplier of the forward model mapping sharp to smooth images.

    ``y = H x`` takes the target-kernel image ``x`` to the input-kernel image
    ``y``, so its multiplier is ``Mi / Mt`` in the same regularized form.
    """
    return ratio_filter(target_mtf, input_mtf, grid, eps)


def load_profile(path) -> KernelMtfProfile:
    """Read a profile from JSON ``{"family", "params"}`` or a two-column CSV.

    The CSV form has header ``f_lp_per_cm,mtf`` and is loaded as a tabulated
    profile.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["f_lp_per_cm", "mtf"]:
            raise FormatError(f"{path}: expected header 'f_lp_per_cm,mtf'")
        try:
            f, m = zip(*((float(a), float(b)) for a, b in rows[1:]))
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        return tabulated(f, m)
    try:
        obj = json.loads(path.read_text())
        return KernelMtfProfile(obj["family"], obj.get("params", {}))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a profile definition ({exc})") from exc


def save_profile(path, profile: KernelMtfProfile) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        if profile.family != "Tabulated":
            raise ValueError("only tabulated profiles serialize to CSV")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f_lp_per_cm", "mtf"])
            w.writerows(zip(profile.params["f"], profile.params["mtf"]))
    else:
        path.write_text(json.dumps(profile.to_dict(), indent=2))


def amplification_bound(target_mtf: KernelMtfProfile, eps: float, f_max: float) -> float:
    """Upper bound on ``ratio_filter`` values for ``eps > 0`` up to ``f_max``."""
    f = np.linspace(0.0, f_max, 4097)
    return float(np.max(eval_profile(target_mtf, f))) / (2.0 * math.sqrt(eps))
