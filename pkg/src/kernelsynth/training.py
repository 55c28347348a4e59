"""Training loop for the shared projection network.

Two modes share one loop. ``model_based`` trains the network inside the
unrolled solver, backpropagating through every unroll. ``direct_learning``
trains the same network to map the input-kernel image straight to the target
(no operator, no data consistency), the pure image-to-image baseline.

Parameters are updated with Adam::

    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g**2
    p <- p - lr * (m / (1 - b1**t)) / (sqrt(v / (1 - b2**t)) + eps)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import FrequencyGrid, Image
from .denoiser import DenoiserParams, _backward, _forward, init_params, save_checkpoint
from .errors import EmptyDataset, TrainingDiverged
from .forward import ForwardOperator, make_operator
from .losses import loss
from .mtf import DEFAULT_EPS, DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF, KernelMtfProfile
from .unrolled import UnrollConfig, backprop_unrolls, synthesize, synthesize_with_tape

__all__ = [
    "MODES",
    "TrainConfig",
    "Adam",
    "OperatorFactory",
    "predict",
    "sample_loss",
    "evaluate_loss",
    "train",
    "write_training_log",
    "read_training_log",
]

MODES = ("model_based", "direct_learning")
LOG_FIELDS = ("epoch", "mean_loss", "mean_mse", "mean_ssim")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings.

    ``epochs=30`` is the desk-scale default; the full-size recipe uses 500.
    ``backprop_through_dc=False`` treats the data-consistency step as the
    identity in the reverse sweep. ``checkpoint_every`` > 0 writes a
    checkpoint every that many epochs when a checkpoint path is given.
    """

    epochs: int = 30
    learning_rate: float = 1e-4
    batch_size: int = 4
    w_ssim: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    mode: str = "model_based"
    backprop_through_dc: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.w_ssim < 0:
            raise ValueError("w_ssim must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam constants")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


class Adam:
    """Adam over the flattened parameter vector."""

    def __init__(self, cfg: TrainConfig, size: int):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: DenoiserParams, grads: DenoiserParams) -> DenoiserParams:
        c = self.cfg
        g = grads.flat()
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        m_hat = self.m / (1 - c.beta1 ** self.t)
        v_hat = self.v / (1 - c.beta2 ** self.t)
        if c.learning_rate == 0:
            return params
        return params.with_flat(params.flat() - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps))


class OperatorFactory:
    """Builds and caches one forward operator per (size, DFOV)."""

    def __init__(self, input_mtf: KernelMtfProfile = DEFAULT_INPUT_MTF,
                 target_mtf: KernelMtfProfile = DEFAULT_TARGET_MTF, eps: float = DEFAULT_EPS):
        self.input_mtf = input_mtf
        self.target_mtf = target_mtf
        self.eps = eps
        self._cache = {}

    def __call__(self, size: int, dfov_cm: float) -> ForwardOperator:
        key = (int(size), float(dfov_cm))
        if key not in self._cache:
            grid = FrequencyGrid(*key)
            self._cache[key] = make_operator(self.input_mtf, self.target_mtf, grid, self.eps)
        return self._cache[key]


def _as_pairs(dataset) -> list:
    pairs = []
    for item in dataset:
        if isinstance(item, dict):
            pairs.append((item["input"], item["target"]))
        else:
            y, t = item
            pairs.append((y, t))
    if not pairs:
        raise EmptyDataset("training set has no pairs")
    return pairs


def predict(y: Image, params: DenoiserParams, mode: str, op_factory=None,
            ucfg: UnrollConfig = UnrollConfig()) -> Image:
    """Inference for either training mode."""
    if mode == "direct_learning":
        return y.with_pixels(_forward(params, y.pixels, record=False)[0])
    if mode != "model_based":
        raise ValueError(f"mode must be one of {MODES}")
    return synthesize(y, op_factory(y.size, y.dfov_cm), params, ucfg)


def sample_loss(y: Image, target: Image, params: DenoiserParams, tcfg: TrainConfig,
                ucfg: UnrollConfig, op_factory=None, need_grad: bool = True):
    """Loss of one pair and, with ``need_grad``, its parameter gradient."""
    if tcfg.mode == "direct_learning":
        z, rec = _forward(params, y.pixels, need_grad)
        value, g, parts = loss(z, target, tcfg.w_ssim)
        grads = _backward(params, rec, g)[0] if need_grad else None
        return value, parts, grads
    op = op_factory(y.size, y.dfov_cm)
    if not need_grad:
        x = synthesize(y, op, params, ucfg)
        value, _, parts = loss(x, target, tcfg.w_ssim)
        return value, parts, None
    x, tape = synthesize_with_tape(y, op, params, ucfg)
    value, g, parts = loss(x, target, tcfg.w_ssim)
    grads = backprop_unrolls(tape, op, params, g, tcfg.backprop_through_dc)
    return value, parts, grads


def evaluate_loss(dataset, params: DenoiserParams, tcfg: TrainConfig,
                  ucfg: UnrollConfig = UnrollConfig(), op_factory=None) -> dict:
    """Mean loss, MSE and SSIM over a dataset without updating anything."""
    rows = [sample_loss(y, t, params, tcfg, ucfg, op_factory, need_grad=False)
            for y, t in _as_pairs(dataset)]
    return {
        "mean_loss": float(np.mean([r[0] for r in rows])),
        "mean_mse": float(np.mean([r[1]["mse"] for r in rows])),
        "mean_ssim": float(np.mean([r[1]["ssim"] for r in rows])),
    }


def train(dataset, op_factory, tcfg: TrainConfig = TrainConfig(),
          ucfg: UnrollConfig = UnrollConfig(), seed=0, init: DenoiserParams | None = None,
          start_epoch: int = 0, checkpoint_path=None, log_path=None, progress=None):
    """Minibatch Adam training.

    Each epoch visits the pairs in an order drawn from ``(seed, epoch)``, so a
    run resumed at ``start_epoch`` replays the same shuffles it would have
    seen. Gradients within a batch are summed in a fixed order and averaged.
    Log rows are computed during the epoch, from the parameters current at
    each sample. Returns ``(params, log)``.
    """
    pairs = _as_pairs(dataset)
    params = init.copy() if init is not None else init_params(seed=seed)
    if tcfg.mode == "model_based" and op_factory is None:
        raise ValueError("model_based training needs an operator factory")
    opt = Adam(tcfg, params.size)
    log = []
    for epoch in range(start_epoch, start_epoch + tcfg.epochs):
        u = replace(ucfg, epoch=epoch) if ucfg.decay_per == "epoch" else ucfg
        order = np.random.default_rng([int(seed), epoch]).permutation(len(pairs))
        values, mses, ssims = [], [], []
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start: start + tcfg.batch_size]
            total = None
            for i in batch:
                y, t = pairs[i]
                try:
                    with np.errstate(over="raise", invalid="raise"):
                        value, parts, grads = sample_loss(y, t, params, tcfg, u, op_factory)
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"overflow at epoch {epoch}, pair {i}: {exc}") from exc
                if not np.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, pair {i}")
                values.append(value)
                mses.append(parts["mse"])
                ssims.append(parts["ssim"])
                if total is None:
                    total = grads
                else:
                    for acc, part in zip(total.arrays(), grads.arrays()):
                        acc += part
            for a in total.arrays():
                a /= len(batch)
            try:
                with np.errstate(over="raise", invalid="raise"):
                    params = opt.step(params, total)
            except (FloatingPointError, ValueError) as exc:
                raise TrainingDiverged(f"parameter update failed at epoch {epoch}: {exc}") from exc
        row = {"epoch": epoch, "mean_loss": float(np.mean(values)),
               "mean_mse": float(np.mean(mses)), "mean_ssim": float(np.mean(ssims))}
        log.append(row)
        if log_path is not None:
            write_training_log(log_path, [row], append=epoch > start_epoch or start_epoch > 0)
        if progress is not None:
            progress(row)
        params.meta.update({"mode": tcfg.mode, "epoch": epoch})
        every = tcfg.checkpoint_every
        if checkpoint_path is not None and every and (epoch + 1 - start_epoch) % every == 0:
            save_checkpoint(checkpoint_path, params)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params)
    return params, log


def write_training_log(path, rows, append: bool = False) -> None:
    """CSV with columns ``epoch, mean_loss, mean_mse, mean_ssim``."""
    path = Path(path)
    fresh = not append or not path.exists()
    with open(path, "w" if fresh else "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([int(r["epoch"])] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])


def read_training_log(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]), **{k: float(r[k]) for k in LOG_FIELDS[1:]}} for r in rows]
