import numpy as np
import pytest

from kernelsynth.core import FrequencyGrid, Image
from kernelsynth.denoiser import baseline_denoiser, denoise, init_params
from kernelsynth.errors import SingularSystem, TapeMismatch
from kernelsynth.evaluation import estimate_mtf, mtf_fidelity, profile_curve, roi_half_width_for
from kernelsynth.forward import dc_step, identity_operator, make_operator, tikhonov_init
from kernelsynth.losses import loss
from kernelsynth.mtf import DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF, TransferFilter
from kernelsynth.forward import ForwardOperator
from kernelsynth.phantoms import kernel_filtered, wire_phantom
from kernelsynth.unrolled import (UnrollConfig, backprop_unrolls, replay_tape, synthesize,
                                  synthesize_with_tape)

from conftest import random_image, rel_l2


def default_op(n, dfov=10.0, eps=1e-4):
    return make_operator(DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF, FrequencyGrid(n, dfov), eps)


def test_lambda_schedule_exact():
    assert UnrollConfig().lambdas() == [0.5, 0.45, 0.405, 0.3645, 0.32805]
    assert UnrollConfig(unrolls=0).lambdas() == []
    assert UnrollConfig(decay=1.0, unrolls=3).lambdas() == [0.5, 0.5, 0.5]


def test_lambda_schedule_per_epoch():
    cfg = UnrollConfig(decay_per="epoch", epoch=2, unrolls=3)
    assert cfg.lambdas() == [0.405, 0.405, 0.405]


@pytest.mark.parametrize("kw", [dict(unrolls=-1), dict(lambda0=0.0), dict(decay=0.0),
                                dict(decay=1.5), dict(init="zeros"), dict(decay_per="batch")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        UnrollConfig(**kw)


def test_zero_unrolls_is_tikhonov(rng):
    op = default_op(32)
    y = random_image(rng, 32)
    out = synthesize(y, op, init_params(seed=3, zero_last=False), UnrollConfig(unrolls=0))
    np.testing.assert_array_equal(out.pixels, tikhonov_init(op, y, 0.5).pixels)


def test_input_init_with_zero_unrolls_returns_input(rng):
    y = random_image(rng, 16)
    out = synthesize(y, default_op(16), None, UnrollConfig(unrolls=0, init="input"))
    np.testing.assert_array_equal(out.pixels, y.pixels)


def test_scalar_recursion_unit_filter(rng):
    y = random_image(rng, 16)
    op = identity_operator(y.grid)
    cfg = UnrollConfig(unrolls=4)
    _, tape = synthesize_with_tape(y, op, None, cfg)
    x = y.pixels / 1.5
    np.testing.assert_allclose(tape.iterates[0], x, atol=1e-14)
    for k, lam in enumerate(cfg.lambdas()):
        x = (y.pixels + lam * x) / (1 + lam)
        np.testing.assert_allclose(tape.iterates[k + 1], x, atol=1e-13)


def test_spectral_recursion_oracle(rng):
    n = 64
    op = default_op(n)
    y = random_image(rng, n)
    cfg = UnrollConfig()
    _, tape = synthesize_with_tape(y, op, None, cfg)
    lam_f = op.filter.values
    ys = np.fft.fft2(y.pixels)
    xs = lam_f * ys / (lam_f ** 2 + 0.5)
    for k, lam in enumerate(cfg.lambdas()):
        xs = (lam_f * ys + lam * xs) / (lam_f ** 2 + lam)
        assert rel_l2(tape.iterates[k + 1], np.fft.ifft2(xs).real) < 1e-10


def test_each_step_is_dc_step(rng):
    n = 16
    op = default_op(n)
    y = random_image(rng, n)
    params = init_params(seed=5, zero_last=False)
    cfg = UnrollConfig(unrolls=3)
    _, tape = synthesize_with_tape(y, op, params, cfg)
    for k, lam in enumerate(cfg.lambdas()):
        z = denoise(params, Image(tape.iterates[k], y.dfov_cm))
        np.testing.assert_array_equal(z.pixels, tape.denoised[k])
        ref = dc_step(op, y, z, lam)
        assert rel_l2(tape.iterates[k + 1], ref) < 1e-13


def test_identity_denoiser_approaches_deconvolution():
    n = 32
    grid = FrequencyGrid(n, 10.0)
    vals = 0.4 + 0.6 * np.exp(-grid.radial / 3.0)
    op = ForwardOperator(TransferFilter(grid, vals))
    y = Image(np.random.default_rng(0).standard_normal((n, n)), 10.0)
    exact = np.fft.ifft2(np.fft.fft2(y.pixels) / vals).real
    _, tape = synthesize_with_tape(y, op, None, UnrollConfig(unrolls=20))
    dist = [rel_l2(x, exact) for x in tape.iterates]
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_tape_length_replay_and_purity(rng):
    y = random_image(rng, 16)
    op = default_op(16)
    params = init_params(seed=2, zero_last=False)
    out, tape = synthesize_with_tape(y, op, params, UnrollConfig(unrolls=3))
    assert len(tape) == 3 and len(tape.iterates) == 4
    np.testing.assert_array_equal(replay_tape(tape, op).pixels, out.pixels)
    np.testing.assert_array_equal(synthesize(y, op, params, UnrollConfig(unrolls=3)).pixels, out.pixels)


def test_callable_denoiser():
    y = random_image(np.random.default_rng(1), 16)
    op = default_op(16)
    a = synthesize(y, op, lambda x: baseline_denoiser("identity", x))
    b = synthesize(y, op, None)
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_singular_operator_with_zero_lambda_rejected():
    grid = FrequencyGrid(16, 10.0)
    vals = np.ones((16, 16))
    vals[3, 4] = vals[-3, -4] = 0.0
    op = ForwardOperator(TransferFilter(grid, vals))
    y = Image(np.zeros((16, 16)), 10.0)
    # lambda must stay positive, so only the config can be invalid here
    with pytest.raises(ValueError):
        UnrollConfig(lambda0=0.0)
    synthesize(y, op, None, UnrollConfig(unrolls=2))
    with pytest.raises(SingularSystem):
        op.check_lambda(0.0)


def test_backprop_zero_unrolls_gives_zero_grads(rng):
    y = random_image(rng, 16)
    op = default_op(16)
    params = init_params(seed=1, zero_last=False)
    _, tape = synthesize_with_tape(y, op, params, UnrollConfig(unrolls=0))
    grads = backprop_unrolls(tape, op, params, np.ones((16, 16)))
    assert not np.any(grads.flat())


def test_backprop_linear_in_loss_grad(rng):
    y = random_image(rng, 16)
    op = default_op(16)
    params = init_params(seed=1, zero_last=False)
    _, tape = synthesize_with_tape(y, op, params, UnrollConfig(unrolls=2))
    g = rng.standard_normal((16, 16))
    one = backprop_unrolls(tape, op, params, g).flat()
    two = backprop_unrolls(tape, op, params, 2 * g).flat()
    np.testing.assert_allclose(two, 2 * one, rtol=1e-12, atol=1e-15)


def test_backprop_rejects_foreign_params(rng):
    y = random_image(rng, 16)
    op = default_op(16)
    _, tape = synthesize_with_tape(y, op, init_params(seed=1), UnrollConfig(unrolls=1))
    with pytest.raises(TapeMismatch):
        backprop_unrolls(tape, op, init_params((1, 8, 1)), np.ones((16, 16)))


def _fd_check(through_dc):
    rng = np.random.default_rng(7)
    n = 8
    op = default_op(n, 5.0)
    y = Image(rng.random((n, n)), 5.0)
    t = Image(rng.random((n, n)), 5.0)
    params = init_params(seed=11, zero_last=False)
    cfg = UnrollConfig(unrolls=2)

    def value(p):
        return loss(synthesize(y, op, p, cfg), t, 0.1)[0]

    x, tape = synthesize_with_tape(y, op, params, cfg)
    grads = backprop_unrolls(tape, op, params, loss(x, t, 0.1)[1], through_dc).flat()
    base = params.flat()
    errs = []
    for i in rng.choice(base.size, 30, replace=False):
        h = 1e-6
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        fd = (value(params.with_flat(up)) - value(params.with_flat(dn))) / (2 * h)
        errs.append(abs(fd - grads[i]) / max(abs(fd), abs(grads[i]), 1e-8))
    return max(errs)


def test_end_to_end_finite_differences():
    assert _fd_check(True) < 1e-3


def test_straight_through_differs_from_exact():
    assert _fd_check(False) > 1e-3


def test_dfov_consistency_identity_denoiser():
    # one underlying point object seen at two DFOVs; per-DFOV operators
    errs = []
    for dfov in (10.0, 20.0):
        n = 256
        grid = FrequencyGrid(n, dfov)
        wire = kernel_filtered(wire_phantom(n, dfov), DEFAULT_INPUT_MTF)
        op = make_operator(DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF, grid, 1e-4)
        out = synthesize(wire, op, None)
        est = estimate_mtf(out, roi_half_width_for(out))
        ref = profile_curve(DEFAULT_TARGET_MTF, dfov, grid.nyquist * 1.5)
        # common physical band: 0.6 x the coarser grid's Nyquist
        errs.append(mtf_fidelity(est, ref, (0.0, 0.6 * FrequencyGrid(n, 20.0).nyquist)))
    assert abs(errs[0] - errs[1]) <= 0.2 * max(errs)
