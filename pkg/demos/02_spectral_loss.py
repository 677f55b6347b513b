#!/usr/bin/env python3
"""The visual (spectral) loss and why it needs help.

The loss compares standardized log-magnitude spectra, so it ignores
where structure sits.  A circularly shifted copy scores zero, and
a gradient step lowers the loss without necessarily lowering pixel error.
"""

import numpy as np

from irguide import Rng, psnr, visual_loss, visual_loss_grad
from irguide.datasets import synth_thermal_dataset
from irguide.degradation import DegradationModel, degrade, upsample_bicubic

hr = synth_thermal_dataset(1, 64, Rng(3))[0]
print("shifted copy:    visual loss %.2e" % visual_loss(hr, np.roll(hr, (5, 11), axis=(0, 1))))

sr = upsample_bicubic(degrade(hr, DegradationModel()), 4)
print("bicubic:         visual loss %.4f, psnr %.2f dB" % (visual_loss(hr, sr), psnr(hr, sr)))

# plain gradient descent on the spectral loss alone
x = sr.copy()
for _ in range(200):
    x -= 20.0 * visual_loss_grad(hr, x)
print("after descent:   visual loss %.4f, psnr %.2f dB" % (visual_loss(hr, x), psnr(hr, np.clip(x, 0, 1))))
