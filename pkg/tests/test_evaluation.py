import numpy as np
import pytest

from kernelsynth.core import FrequencyGrid, Image
from kernelsynth.errors import BandOutOfRange, NoPeak, RoiOutOfBounds, SizeMismatch
from kernelsynth.evaluation import (MtfCurve, estimate_mtf, image_metrics, mtf_fidelity,
                                    profile_curve, read_curve_csv, roi_half_width_for,
                                    write_curve_csv)
from kernelsynth.losses import ssim
from kernelsynth.mtf import DEFAULT_INPUT_MTF, DEFAULT_TARGET_MTF, eval_profile, smooth_gaussian
from kernelsynth.phantoms import NoiseModel, kernel_filtered, shaped_noise, wire_phantom


def test_identity_wire_gives_flat_curve():
    curve = estimate_mtf(wire_phantom(64, 10.0), 16)
    assert np.max(np.abs(curve.values - 1.0)) < 1e-6
    assert curve.freqs[0] == 0.0
    assert curve.freqs[1] == pytest.approx(1.0 / (33 * 10.0 / 64))


@pytest.mark.parametrize("dfov", [5.0, 10.0, 20.0])
def test_known_profile_recovered(dfov):
    g = FrequencyGrid(256, dfov)
    wire = kernel_filtered(wire_phantom(256, dfov), DEFAULT_INPUT_MTF)
    curve = estimate_mtf(wire, roi_half_width_for(wire))
    ref = profile_curve(DEFAULT_INPUT_MTF, dfov, 1.5 * g.nyquist)
    assert mtf_fidelity(curve, ref, (0, 0.8 * g.nyquist)) < 0.02


def test_amplitude_invariance():
    wire = kernel_filtered(wire_phantom(128, 10.0), DEFAULT_TARGET_MTF)
    a = estimate_mtf(wire, 12)
    for c in (0.01, 3.0, 1e4):
        b = estimate_mtf(wire.with_pixels(c * wire.pixels), 12)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-10)


def test_shift_covariance():
    wire = kernel_filtered(wire_phantom(128, 10.0), DEFAULT_TARGET_MTF)
    a = estimate_mtf(wire, 12)
    b = estimate_mtf(wire.with_pixels(np.roll(wire.pixels, (7, -11), axis=(0, 1))), 12)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-10)


def test_no_peak_and_roi_errors():
    with pytest.raises(NoPeak):
        estimate_mtf(Image(np.zeros((64, 64)), 10.0), 8)
    px = np.zeros((64, 64))
    px[3, 3] = 1.0
    with pytest.raises(RoiOutOfBounds):
        estimate_mtf(Image(px, 10.0), 8)


def test_mtf_fidelity_basics():
    f = np.linspace(0, 5, 11)
    a = MtfCurve(f, np.exp(-f), 10.0)
    b = MtfCurve(f, np.exp(-f) + 0.1, 10.0, "target")
    assert mtf_fidelity(a, a, (0, 5)) == 0.0
    assert mtf_fidelity(a, b, (1, 4)) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(BandOutOfRange):
        mtf_fidelity(a, b, (0, 6))
    with pytest.raises(BandOutOfRange):
        mtf_fidelity(a, b, (3, 2))


def test_curve_validation():
    with pytest.raises(ValueError):
        MtfCurve([0.1, 0.2], [1, 1], 10.0)
    with pytest.raises(ValueError):
        MtfCurve([0, 0.2], [1, 1], 10.0, "mystery")


def test_curve_csv(tmp_path):
    c = profile_curve(smooth_gaussian(), 10.0, 5.0, 33)
    write_curve_csv(tmp_path / "c.csv", c)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "freq_lp_per_cm,mtf"
    d = read_curve_csv(tmp_path / "c.csv", 10.0)
    np.testing.assert_array_equal(c.values, d.values)


def test_mid_frequency_boost_detected():
    n, dfov = 256, 10.0
    g = FrequencyGrid(n, dfov)
    h = roi_half_width_for(Image(np.zeros((n, n)), dfov))
    smooth = estimate_mtf(kernel_filtered(wire_phantom(n, dfov), DEFAULT_INPUT_MTF), h)
    sharp = estimate_mtf(kernel_filtered(wire_phantom(n, dfov), DEFAULT_TARGET_MTF), h)
    sel = (smooth.freqs > 0) & (smooth.freqs < g.nyquist)
    assert np.max(sharp.values[sel] / smooth.values[sel]) > 1.0


def test_image_metrics_identical(rng):
    t = Image(rng.random((16, 16)), 10.0)
    m = image_metrics(t, t)
    assert m["mse"] == 0.0 and m["psnr"] == float("inf") and m["ssim"] == pytest.approx(1.0)


def test_image_metrics_offset():
    t = np.zeros((16, 16))
    t[0, 0] = 1.0
    m = image_metrics(Image(t + 0.1, 1.0), Image(t, 1.0))
    assert m["mse"] == pytest.approx(0.01)
    assert m["psnr"] == pytest.approx(20.0)


def test_image_metrics_naive_oracle(rng):
    p, t = rng.random((16, 16)), rng.random((16, 16))
    total = 0.0
    for i in range(16):
        for j in range(16):
            total += (p[i, j] - t[i, j]) ** 2
    mse = total / 256
    m = image_metrics(Image(p, 1.0), Image(t, 1.0))
    rng_t = t.max() - t.min()
    assert m["mse"] == pytest.approx(mse, rel=1e-12)
    assert m["psnr"] == pytest.approx(10 * np.log10(rng_t ** 2 / mse), rel=1e-12)
    assert m["ssim"] == ssim(p, t)
    with pytest.raises(SizeMismatch):
        image_metrics(Image(p, 1.0), Image(t[:8, :8], 1.0))
