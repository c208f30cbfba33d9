"""Detecting one spike from its 7 lowest Fourier coefficients (cut-off f = 3).

Run: python demos/superres.py
"""

import numpy as np

from tspacing import SuperResolutionModel, run_test, synthesize_observation

model = SuperResolutionModel(f=3)
t0 = np.array([2.0, 0.5])  # position x0 and phase theta0
print(f"kl order m = {model.kl_order()}, manifold dimension d = {model.dim}")
for amp in (0.0, 2.0, 4.0, 6.0):
    rng = np.random.default_rng(1)
    obs = synthesize_observation(model, gamma=1.0, sigma=1.0, t0=t0, rng=rng, lambda0=amp)
    rep = run_test(model, obs.payload, sigma=1.0, rng=rng)
    x1 = rep.t1[0]
    print(f"amplitude {amp:3.1f}: x1 = {x1:.3f} (x0 = {t0[0]}), "
          f"p = {rep.p_spacing:.3g}, p_t = {rep.p_tspacing:.3g}, sigma_hat = {rep.sigma_hat:.3f}")
