"""
Why discrete steps need a bridge correction
===========================================

A walk that only checks its position on a time grid misses the excursions
out of the domain between grid points, and so survives too often.
"""

import math

from fvspine import DomainSpec, KernelEvaluator
from fvspine.experiments import killed_walk_survival
from fvspine.rng import RngStream
from fvspine.sampler import crossing_probability

unit = DomainSpec.interval(0.0, 1.0)
exact = KernelEvaluator(unit).survival(1.0, 0.5)
trials = 20_000
se = math.sqrt(exact * (1 - exact) / trials)

# Chance that a bridge between two interior points touched the wall.
print("bridge 0.1 -> 0.1 over 0.01:", crossing_probability(0.1, 0.1, 0.01, unit),
      "(exp(-2) =", round(math.exp(-2), 6), ")")

for dt in (1e-2, 1e-3):
    plain = killed_walk_survival(RngStream(1, 0), unit, 0.5, 1.0, dt, trials, False)
    fixed = killed_walk_survival(RngStream(1, 1), unit, 0.5, 1.0, dt, trials, True)
    print(f"dt={dt:g}: exact {exact:.4f}  grid-only {plain:.4f} ({(plain - exact) / se:+.1f} SE)"
          f"  corrected {fixed:.4f} ({(fixed - exact) / se:+.1f} SE)")
