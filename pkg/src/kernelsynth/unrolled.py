"""Unrolled alternating minimization with a shared learned projection.

For ``k = 0 .. K-1``::

    z_k     = CNN(x_k)
    x_{k+1} = argmin_x ||y - H x||^2 + lam_k ||x - z_k||^2

starting from the Tikhonov solution ``x_0`` with ``lam_k = lambda0 * decay**k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .core import Image
from .denoiser import DenoiserParams, _backward, _forward
from .errors import TapeMismatch
from .forward import ForwardOperator

__all__ = [
    "UnrollConfig",
    "UnrollTape",
    "lambda_schedule",
    "synthesize",
    "synthesize_with_tape",
    "replay_tape",
    "backprop_unrolls",
]

INITS = ("tikhonov", "input")


@dataclass(frozen=True)
class UnrollConfig:
    """Unroll count, regularization schedule and initializer.

    ``decay_per="unroll"`` decays the weight inside one forward pass. The
    alternative ``"epoch"`` keeps it constant across unrolls and decays it
    with the training epoch stored in ``epoch``.
    """

    unrolls: int = 5
    lambda0: float = 0.5
    decay: float = 0.9
    init: str = "tikhonov"
    decay_per: str = "unroll"
    epoch: int = 0

    def __post_init__(self):
        if int(self.unrolls) != self.unrolls or self.unrolls < 0:
            raise ValueError("unrolls must be a non-negative integer")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.decay_per not in ("unroll", "epoch"):
            raise ValueError("decay_per must be 'unroll' or 'epoch'")

    def lambdas(self) -> list:
        return lambda_schedule(self)


def lambda_schedule(cfg: UnrollConfig) -> list:
    """Per-unroll weights, each rounded once from exact decimal arithmetic.

    ``0.5 * 0.9**3`` in binary floating point is ``0.36450000000000005``;
    evaluating the power in decimal gives the nearest double to 0.3645.
    """
    l0 = Decimal(repr(float(cfg.lambda0)))
    d = Decimal(repr(float(cfg.decay)))
    if cfg.decay_per == "epoch":
        return [float(l0 * d ** cfg.epoch)] * cfg.unrolls
    return [float(l0 * d ** k) for k in range(cfg.unrolls)]


@dataclass(eq=False)
class UnrollTape:
    """Everything the reverse sweep needs from one forward pass."""

    lambdas: list
    y_data: np.ndarray  # Lambda * F y on the half plane
    iterates: list  # x_0 .. x_K
    denoised: list  # z_0 .. z_{K-1}
    records: list  # activation record of each projection step
    signature: tuple | None
    dfov_cm: float

    def __len__(self):
        return len(self.records)


def _project(params, x: np.ndarray, dfov: float, record: bool):
    if isinstance(params, DenoiserParams):
        return _forward(params, x, record)
    if params is None:
        return x, None
    return params(Image(x, dfov)).pixels, None


def _run(y: Image, op: ForwardOperator, params, cfg: UnrollConfig, record: bool):
    lams = cfg.lambdas()
    y_data = op.half * op.spectrum(y, "y")
    if cfg.init == "tikhonov":
        op.check_lambda(cfg.lambda0)
        x = op.to_image(op.solve_spectrum(y_data, None, cfg.lambda0))
    else:
        x = y.pixels.copy()
    iterates, denoised, records = [x], [], []
    for lam in lams:
        op.check_lambda(lam)
        z, rec = _project(params, x, y.dfov_cm, record)
        x = op.to_image(op.solve_spectrum(y_data, op.spectrum(Image(z, y.dfov_cm), "z"), lam))
        if record:
            iterates.append(x)
            denoised.append(z)
            records.append(rec)
    sig = params.signature if isinstance(params, DenoiserParams) else None
    tape = UnrollTape(lams, y_data, iterates, denoised, records, sig, y.dfov_cm) if record else None
    return Image(x, y.dfov_cm), tape


def synthesize(y: Image, op: ForwardOperator, params, cfg: UnrollConfig = UnrollConfig()) -> Image:
    """Synthesize the target-kernel image from input-kernel image ``y``.

    ``params`` is a trained :class:`DenoiserParams`, any callable mapping an
    :class:`Image` to an :class:`Image`, or ``None`` for the identity.
    """
    return _run(y, op, params, cfg, record=False)[0]


def synthesize_with_tape(y: Image, op: ForwardOperator, params,
                         cfg: UnrollConfig = UnrollConfig()):
    """:func:`synthesize` that also returns the :class:`UnrollTape`."""
    return _run(y, op, params, cfg, record=True)


def replay_tape(tape: UnrollTape, op: ForwardOperator) -> Image:
    """Recompute the data-consistency steps from the recorded projections."""
    x = tape.iterates[0]
    for lam, z in zip(tape.lambdas, tape.denoised):
        x = op.to_image(op.solve_spectrum(tape.y_data, op.spectrum(Image(z, tape.dfov_cm), "z"), lam))
    return Image(x, tape.dfov_cm)


def backprop_unrolls(tape: UnrollTape, op: ForwardOperator, params: DenoiserParams,
                     loss_grad, through_dc: bool = True) -> DenoiserParams:
    """Gradient of the loss with respect to the shared denoiser parameters.

    Per-unroll gradients are summed because one parameter set serves every
    unroll. With ``through_dc=False`` the data-consistency step is treated as
    the identity in the reverse sweep (straight-through). The gradient that
    reaches ``x_0`` is dropped: the initializer has no parameters.
    """
    if len(tape) and tape.signature != params.signature:
        raise TapeMismatch("unroll tape was recorded with differently shaped parameters")
    g = np.asarray(getattr(loss_grad, "pixels", loss_grad), dtype=np.float64)
    total = params.zeros_like()
    for k in range(len(tape) - 1, -1, -1):
        lam = tape.lambdas[k]
        if through_dc:
            g = op.to_image(lam * op.spectrum(Image(g, tape.dfov_cm), "gradient") / (op.half_sq + lam))
        gp, g = _backward(params, tape.records[k], g)
        for acc, part in zip(total.arrays(), gp.arrays()):
            acc += part
    return total
