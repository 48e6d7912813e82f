"""
Killed Brownian motion on an interval
=====================================

Dirichlet heat kernels on (0, 1): two series, the survival probability,
and how fast the conditioned law forgets its starting point.
"""

import numpy as np

from fvspine import DomainSpec, KernelEvaluator

unit = DomainSpec.interval(0.0, 1.0)
ke = KernelEvaluator(unit)

# Image sums converge fast for small t, sine series for large t.
# They should agree to round-off wherever both are evaluated.
for t in (0.05, 0.3, 2.0):
    a = ke.heat_kernel(t, 0.3, 0.6, method="image")
    b = ke.heat_kernel(t, 0.3, 0.6, method="spectral")
    print(f"t={t:<5} image={a:.15f}  spectral={b:.15f}")

# Probability of surviving to t from the centre.
for t in (0.1, 0.5, 1.0, 2.0):
    print(f"P(survive to {t}) from 0.5 = {ke.survival(t, 0.5):.6f}")

# %%
# Conditioned on survival, the law at time t approaches (pi/2) sin(pi y)
# whatever the start.  Track the worst relative error on a grid.
ys = np.linspace(0, 1, 401)[1:-1]
qsd = np.pi / 2 * np.sin(np.pi * ys)
for t in (0.5, 1, 2, 5):
    worst = max(np.max(np.abs(ke.conditioned_density(t, x, ys) / qsd - 1)) for x in (0.1, 0.5))
    print(f"t={t}: max relative gap to the limit {worst:.2e}")

# %%
# The kernel reweighted by exp(lambda t) phi(y) / phi(x) is a probability
# density: Brownian motion conditioned never to die.  Its invariant law is
# 2 sin^2(pi y), which puts less mass near the walls than sin does.
print("mass within 0.05 of a wall:",
      f"sin law {ke.qsd_cdf(0.05) * 2:.4f},",
      f"sin^2 law {ke.h_stationary_cdf(0.05) * 2:.4f}")
