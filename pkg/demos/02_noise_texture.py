"""
Noise texture across fields of view
===================================

Kernel-shaped noise has a fixed grain size in centimetres. On a fixed
matrix size the grain therefore covers more pixels at small DFOV, which is
why a pixel-domain network trained at one DFOV sees unfamiliar texture at
another.
"""

from kernelsynth import DEFAULT_INPUT_MTF, FrequencyGrid, NoiseModel
from kernelsynth.evaluation import autocorrelation_fwhm
from kernelsynth.phantoms import shaped_noise

n = 256
model = NoiseModel(10.0, DEFAULT_INPUT_MTF)

for dfov in (5.0, 10.0, 20.0):
    grid = FrequencyGrid(n, dfov)
    fields = [shaped_noise(grid, model, seed) for seed in range(30)]
    px = autocorrelation_fwhm(fields)
    print(f"DFOV {dfov:4.1f} cm: grain FWHM {px:5.2f} px = {px * grid.spacing_cm:.4f} cm, "
          f"std {fields[0].pixels.std():.2f}")
