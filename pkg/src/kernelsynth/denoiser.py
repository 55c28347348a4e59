"""The projection step: a small residual CNN with hand-written gradients.

``z = x + conv_L(relu(... relu(conv_1(x))))`` with 3 x 3 kernels and reflect
padding, so every layer keeps the image size. Convolutions are evaluated as
im2col matrix products over blocks of rows to keep the column buffer small.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .core import Image
from .errors import FormatError, ShapeMismatch, TapeMismatch

__all__ = [
    "DenoiserParams",
    "ActivationRecord",
    "init_params",
    "denoise",
    "denoise_forward",
    "denoise_backward",
    "baseline_denoiser",
    "save_checkpoint",
    "load_checkpoint",
]

KERNEL = 3
DEFAULT_WIDTHS = (1, 16, 16, 1)
_ROW_BLOCK = 16


@dataclass
class DenoiserParams:
    """Weights ``(out, in, 3, 3)`` and biases ``(out,)`` of every layer.

    One instance is shared by all unrolls of the solver.
    """

    weights: list
    biases: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias vector per weight tensor")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        prev = 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
                raise ShapeMismatch(f"layer {k}: weight shape {w.shape} is not (out, in, 3, 3)")
            if w.shape[1] != prev:
                raise ShapeMismatch(f"layer {k}: expects {w.shape[1]} input channels, gets {prev}")
            if b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {k}: bias shape {b.shape} does not match {w.shape[0]} outputs")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")
            prev = w.shape[0]
        if prev != 1:
            raise ShapeMismatch("last layer must produce a single channel")

    @property
    def widths(self) -> tuple:
        return (1,) + tuple(w.shape[0] for w in self.weights)

    @property
    def signature(self) -> tuple:
        return tuple(w.shape for w in self.weights)

    def arrays(self) -> list:
        """Parameter arrays in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "DenoiserParams":
        vec = np.asarray(vec, dtype=np.float64)
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(vec[pos: pos + a.size].reshape(a.shape))
            pos += a.size
        if pos != vec.size:
            raise ShapeMismatch(f"flat vector has {vec.size} entries, parameters need {pos}")
        return DenoiserParams(arrays[0::2], arrays[1::2], dict(self.meta))

    def zeros_like(self) -> "DenoiserParams":
        return DenoiserParams([np.zeros_like(w) for w in self.weights],
                              [np.zeros_like(b) for b in self.biases], dict(self.meta))

    def copy(self) -> "DenoiserParams":
        return DenoiserParams([w.copy() for w in self.weights],
                              [b.copy() for b in self.biases], dict(self.meta))

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(widths=DEFAULT_WIDTHS, seed=0, zero_last: bool = True) -> DenoiserParams:
    """Fan-in scaled uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``.

    With ``zero_last`` the output layer starts at zero so the network begins
    as the identity map.
    """
    widths = tuple(int(w) for w in widths)
    if widths[0] != 1 or widths[-1] != 1 or len(widths) < 2:
        raise ShapeMismatch("widths must start and end with one channel")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    weights, biases = [], []
    for k, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (cin * KERNEL * KERNEL))
        w = rng.uniform(-bound, bound, size=(cout, cin, KERNEL, KERNEL))
        if zero_last and k == len(widths) - 2:
            w = np.zeros_like(w)
        weights.append(w)
        biases.append(np.zeros(cout))
    return DenoiserParams(weights, biases, {"init_seed": seed})


def _pad(a):
    return np.pad(a, ((0, 0), (1, 1), (1, 1)), mode="reflect")


def _pad_adjoint(g):
    """Adjoint of one-pixel reflect padding on the last two axes."""
    n = g.shape[1] - 2
    h = g[:, 1:-1, :].copy()
    h[:, 1, :] += g[:, 0, :]
    h[:, n - 2, :] += g[:, n + 1, :]
    out = h[:, :, 1:-1].copy()
    out[:, :, 1] += h[:, :, 0]
    out[:, :, n - 2] += h[:, :, n + 1]
    return out


def _blocks(xp, rows_out, cols_out):
    """Yield ``(r0, r1, cols)`` im2col buffers over blocks of output rows."""
    c = xp.shape[0]
    buf = np.empty((c, KERNEL, KERNEL, _ROW_BLOCK, cols_out))
    for r0 in range(0, rows_out, _ROW_BLOCK):
        r1 = min(rows_out, r0 + _ROW_BLOCK)
        h = r1 - r0
        for a in range(KERNEL):
            for b in range(KERNEL):
                buf[:, a, b, :h] = xp[:, r0 + a: r1 + a, b: b + cols_out]
        yield r0, r1, buf[:, :, :, :h].reshape(c * KERNEL * KERNEL, -1)


def _correlate_narrow(xp, w):
    """Few output channels: one GEMM per tap stack, then shifted sums (no im2col)."""
    c, hp, wp = xp.shape
    rows, cols = hp - 2, wp - 2
    o = w.shape[0]
    taps = w.transpose(2, 3, 0, 1).reshape(KERNEL * KERNEL * o, c)
    y = (taps @ xp.reshape(c, -1)).reshape(KERNEL, KERNEL, o, hp, wp)
    out = y[0, 0, :, :rows, :cols].copy()
    for a in range(KERNEL):
        for b in range(KERNEL):
            if a or b:
                out += y[a, b, :, a: a + rows, b: b + cols]
    return out


def _correlate(xp, w):
    """Valid 3 x 3 cross-correlation of padded ``(C, H, W)`` with ``(O, C, 3, 3)``."""
    rows, cols = xp.shape[1] - 2, xp.shape[2] - 2
    if w.shape[0] < w.shape[1]:
        return _correlate_narrow(xp, w)
    wm = w.reshape(w.shape[0], -1)
    out = np.empty((w.shape[0], rows, cols))
    for r0, r1, col in _blocks(xp, rows, cols):
        out[:, r0:r1] = (wm @ col).reshape(-1, r1 - r0, cols)
    return out


def _weight_grad(xp, g):
    """``dW[o, c, a, b] = sum_ij g[o, i, j] xp[c, i + a, j + b]``."""
    rows, cols = g.shape[1], g.shape[2]
    acc = np.zeros((g.shape[0], xp.shape[0] * KERNEL * KERNEL))
    for r0, r1, col in _blocks(xp, rows, cols):
        acc += g[:, r0:r1].reshape(g.shape[0], -1) @ col.T
    return acc.reshape(g.shape[0], xp.shape[0], KERNEL, KERNEL)


def _input_grad(w, g):
    """Gradient with respect to the padded input of :func:`_correlate`."""
    gp = np.pad(g, ((0, 0), (2, 2), (2, 2)))
    return _correlate(gp, np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)))


@dataclass(eq=False)
class ActivationRecord:
    """Padded layer inputs and pre-activations retained for the backward pass."""

    signature: tuple
    size: int
    padded_inputs: list
    pre_activations: list


def _forward(params: DenoiserParams, px: np.ndarray, record: bool):
    a = px[None]
    padded, pres = [], []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        ap = _pad(a)
        pre = _correlate(ap, w)
        pre += b[:, None, None]
        if record:
            padded.append(ap)
            pres.append(pre)
            a = pre if k == last else np.maximum(pre, 0.0)
        else:
            a = pre if k == last else np.maximum(pre, 0.0, out=pre)
    z = px + a[0]
    tape = ActivationRecord(params.signature, px.shape[0], padded, pres) if record else None
    return z, tape


def _check_input(x: Image):
    if x.size < 8:
        raise ShapeMismatch(f"denoiser needs images of at least 8x8, got {x.size}")


def denoise(params: DenoiserParams, x: Image) -> Image:
    """Inference-only forward pass."""
    _check_input(x)
    return x.with_pixels(_forward(params, x.pixels, record=False)[0])


def denoise_forward(params: DenoiserParams, x: Image):
    """``z = x + CNN(x)`` and the activation record needed for backprop."""
    _check_input(x)
    z, tape = _forward(params, x.pixels, record=True)
    return x.with_pixels(z), tape


def _backward(params: DenoiserParams, tape: ActivationRecord, upstream: np.ndarray):
    if tape.signature != params.signature or len(tape.padded_inputs) != len(params.weights):
        raise TapeMismatch("activation record was produced with differently shaped parameters")
    if upstream.shape != (tape.size, tape.size):
        raise TapeMismatch(f"upstream shape {upstream.shape} does not match recorded {tape.size}")
    g = upstream[None]
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    last = len(params.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * (tape.pre_activations[k] > 0)
        gw[k] = _weight_grad(tape.padded_inputs[k], g)
        gb[k] = g.sum(axis=(1, 2))
        g = _pad_adjoint(_input_grad(params.weights[k], g))
    return DenoiserParams(gw, gb), upstream + g[0]


def denoise_backward(params: DenoiserParams, tape: ActivationRecord, upstream: Image):
    """Gradients of ``<upstream, z>`` with respect to the parameters and ``x``.

    The residual connection contributes ``upstream`` itself to ``grad_x``.
    """
    grads, gx = _backward(params, tape, upstream.pixels)
    return grads, upstream.with_pixels(gx)


def baseline_denoiser(kind: str, x: Image, sigma_px: float | None = None) -> Image:
    """Untrained plug-in denoisers: ``"identity"`` or spectral ``"gaussian"``."""
    kind = kind.lower()
    if kind == "identity":
        return x
    if kind != "gaussian":
        raise ValueError(f"unknown baseline denoiser {kind!r}")
    if sigma_px is None or sigma_px <= 0:
        raise ValueError("gaussian baseline needs sigma_px > 0")
    n = x.size
    fr = sfft.rfftfreq(n)
    fc = sfft.fftfreq(n)
    h = np.exp(-2.0 * np.pi ** 2 * sigma_px ** 2 * (fc[:, None] ** 2 + fr[None, :] ** 2))
    return x.with_pixels(sfft.irfft2(sfft.rfft2(x.pixels) * h, s=(n, n)))


# KSNN v1: b"KSNN", u8 version, u32 header length, JSON header, f32 arrays W0, b0, W1, b1, ...
_KSNN_MAGIC = b"KSNN"
_KSNN_HEAD = struct.Struct("<4sBI")


def save_checkpoint(path, params: DenoiserParams, extra: dict | None = None) -> None:
    header = {
        "widths": list(params.widths),
        "kernel_size": KERNEL,
        "activation": "relu",
        "output": "linear",
        "residual": True,
        "padding": "reflect",
        "layer_order": "W0,b0,W1,b1,... (W as out,in,kh,kw)",
        **params.meta,
        **(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_KSNN_HEAD.pack(_KSNN_MAGIC, 1, len(blob)))
        fh.write(blob)
        for a in params.arrays():
            fh.write(a.astype("<f4").tobytes())


def load_checkpoint(path) -> DenoiserParams:
    data = Path(path).read_bytes()
    if len(data) < _KSNN_HEAD.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, hlen = _KSNN_HEAD.unpack_from(data)
    if magic != _KSNN_MAGIC or version != 1:
        raise FormatError(f"{path}: not a KSNN v1 checkpoint")
    try:
        header = json.loads(data[_KSNN_HEAD.size: _KSNN_HEAD.size + hlen])
        widths = [int(w) for w in header["widths"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})") from exc
    template = init_params(widths, seed=0)
    raw = np.frombuffer(data, dtype="<f4", offset=_KSNN_HEAD.size + hlen)
    if raw.size != template.size:
        raise FormatError(f"{path}: {raw.size} weights stored, architecture needs {template.size}")
    params = template.with_flat(raw.astype(np.float64))
    params.meta = {k: v for k, v in header.items() if k not in ("widths",)}
    return params
