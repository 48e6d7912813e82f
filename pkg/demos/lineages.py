"""
Particles, lineages and the spine
=================================

Run one Fleming-Viot population, follow each particle's ancestry backwards
and find the common ancestral line of everyone alive at the end.
"""

import numpy as np

from fvspine import DomainSpec, EngineConfig, InitialMeasure, run
from fvspine.genealogy import branch_counts, dhp, spine

cfg = EngineConfig(n=8, T=10.0, dt=1e-3, domain=DomainSpec.interval(0.0, 1.0),
                   initial=InitialMeasure.uniform_on_box((0.25, 0.75)), seed=7,
                   storage_dt=1e-2)
result = run(cfg, replica=0)
log, store = result.log, result.store
print(f"{len(log)} killings in [0, {cfg.T}]")
print("first events (time, dying -> target):")
for k in range(5):
    print(f"  {log.times[k]:.3f}  {log.dying[k]} -> {log.target[k]}")

# %%
# A lineage never jumps: before a killing it runs along the particle that
# was copied, afterwards along the copy.
path = dhp(log, store, 0, cfg.T)
print("carriers of particle 0's lineage (from, to, particle):")
for a, b, who in path.carrier[-4:]:
    print(f"  [{a:.3f}, {b:.3f}] on {who}")
steps = np.abs(np.diff(path.values[:, 0])) / np.sqrt(cfg.storage_dt)
print(f"largest step along it: {steps.max():.2f} standard deviations")

# %%
# Every lineage shares a prefix; it ends where the last two ancestral
# lines merge.  With few particles this happens well before T.
sp = spine(log, store)
print("spine complete:", sp.complete, " coalescence time:", round(sp.coalescence_time, 3))

# Killings whose target descends from each founder: one family usually takes over.
print("events per founding family:", branch_counts(log))
