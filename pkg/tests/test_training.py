import numpy as np
import pytest

from kernelsynth.denoiser import init_params, load_checkpoint
from kernelsynth.errors import EmptyDataset, TrainingDiverged
from kernelsynth.mtf import DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF
from kernelsynth.phantoms import NoiseModel, simulate_pairs
from kernelsynth.training import (Adam, OperatorFactory, TrainConfig, evaluate_loss, predict,
                                  read_training_log, train)
from kernelsynth.unrolled import UnrollConfig


def pairs(count=4, n=32, sigma=0.01, seed=0, dfovs=(5.0, 10.0)):
    return simulate_pairs(count, n, dfovs, DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF,
                          NoiseModel(sigma), seed=seed)


def test_adam_first_step_moves_by_lr():
    params = init_params((1, 4, 1), seed=0)
    grads = params.with_flat(np.linspace(-1, 1, params.size) + 0.05)
    new = Adam(TrainConfig(learning_rate=0.01), params.size).step(params, grads)
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(new.flat() - params.flat(), -0.01 * np.sign(grads.flat()), rtol=1e-5)


@pytest.mark.parametrize("kw", [dict(learning_rate=-1.0), dict(w_ssim=-0.1), dict(mode="unet"),
                                dict(batch_size=0), dict(beta1=1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train([], OperatorFactory(), TrainConfig(epochs=1))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_pair_loss_decreases(seed):
    data = pairs(1, 32, seed=seed)
    tcfg = TrainConfig(epochs=10, batch_size=1)
    _, log = train(data, OperatorFactory(), tcfg, UnrollConfig(), seed=seed)
    losses = [r["mean_loss"] for r in log]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_zero_learning_rate_keeps_params():
    init = init_params(seed=4)
    params, _ = train(pairs(2), OperatorFactory(), TrainConfig(epochs=2, learning_rate=0.0),
                      UnrollConfig(unrolls=2), init=init)
    np.testing.assert_array_equal(params.flat(), init.flat())


def test_direct_learning_starts_as_identity():
    data = pairs(2)
    params = init_params(seed=0)
    y = data[0]["input"]
    np.testing.assert_array_equal(predict(y, params, "direct_learning").pixels, y.pixels)
    tcfg = TrainConfig(epochs=1, learning_rate=0.0, mode="direct_learning")
    _, log = train(data, None, tcfg, seed=0)
    ref = np.mean([np.mean((d["input"].pixels - d["target"].pixels) ** 2) for d in data])
    assert log[0]["mean_mse"] == pytest.approx(ref, rel=1e-12)


def test_training_is_deterministic():
    tcfg = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=2)
    a, la = train(pairs(4), OperatorFactory(), tcfg, UnrollConfig(unrolls=2), seed=3)
    b, lb = train(pairs(4), OperatorFactory(), tcfg, UnrollConfig(unrolls=2), seed=3)
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert la == lb


def test_resume_continues_epochs(tmp_path):
    log_path = tmp_path / "log.csv"
    ckpt = tmp_path / "model.ksnn"
    tcfg = TrainConfig(epochs=2, learning_rate=1e-3)
    ucfg = UnrollConfig(unrolls=1)
    params, _ = train(pairs(2), OperatorFactory(), tcfg, ucfg, checkpoint_path=ckpt, log_path=log_path)
    resumed = load_checkpoint(ckpt)
    assert resumed.meta["epoch"] == 1
    train(pairs(2), OperatorFactory(), tcfg, ucfg, init=resumed, start_epoch=2, log_path=log_path)
    assert [r["epoch"] for r in read_training_log(log_path)] == [0, 1, 2, 3]


def test_divergence_guard():
    data = pairs(1)
    bad = init_params(seed=0, zero_last=False)
    bad = bad.with_flat(bad.flat() * 1e150)
    with pytest.raises(TrainingDiverged):
        train(data, OperatorFactory(), TrainConfig(epochs=1), UnrollConfig(unrolls=2), init=bad)


def test_evaluate_loss_matches_epoch_zero_with_no_updates():
    data = pairs(3)
    tcfg = TrainConfig(epochs=1, learning_rate=0.0)
    ucfg = UnrollConfig(unrolls=2)
    params = init_params(seed=0)
    _, log = train(data, OperatorFactory(), tcfg, ucfg, init=params)
    ev = evaluate_loss(data, params, tcfg, ucfg, OperatorFactory())
    assert ev["mean_loss"] == pytest.approx(log[0]["mean_loss"], rel=1e-12)


def test_operator_factory_caches():
    fac = OperatorFactory()
    assert fac(32, 5.0) is fac(32, 5.0)
    assert fac(32, 5.0) is not fac(32, 10.0)
