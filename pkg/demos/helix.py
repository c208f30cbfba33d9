"""The conditioned field is singular at its pole but has direction-dependent radial limits.

Run: python demos/helix.py
"""

import numpy as np

from tspacing import ConditionalField, SphereTensorModel, find_maxima, helix_limit, omega

model = SphereTensorModel(3, 3)
rng = np.random.default_rng(4)
Y = model.sample_noise(rng)
rec = find_maxima(model, Y, rng=rng)
cf = ConditionalField(model, Y, rec.t1)
F = model.frame(rec.t1)

print(f"t1 = {np.round(rec.t1, 4)}, lambda1 = {rec.lambda1:.4f}")
print("direction  eps=1e-1    eps=1e-2    eps=1e-3    limit")
for ang in np.linspace(0, np.pi, 5, endpoint=False):
    h = np.cos(ang) * F[0] + np.sin(ang) * F[1]
    vals = [cf.value(model.manifold.exp(rec.t1, h, e)[None, :])[0] for e in (1e-1, 1e-2, 1e-3)]
    print(f"{ang:8.3f}  " + "  ".join(f"{v:10.6f}" for v in vals) + f"  {helix_limit(model, Y, rec.t1, h):10.6f}")

ev = omega(model, Y, rec.t1).eigenvalues
print(f"\nThe limits sweep [{ev[0]:.6f}, {ev[-1]:.6f}], the eigenvalue range of Omega;")
print(f"the second knot is lambda2 = {rec.lambda2:.6f}"
      + (" (the pole limit wins)" if isinstance(rec.t2, str) else " (an interior maximum wins)"))
