"""
The spine is not a typical particle
===================================

At n = 200 the genealogy takes longer to coalesce than the run lasts, so
this script uses a small population and long horizon to get complete
spines quickly, then compares where they sit at mid-horizon with where a
uniformly chosen particle sits at that time.  Expect noisy numbers at
this size.
"""

import numpy as np

from fvspine import DomainSpec, EngineConfig, InitialMeasure, KernelEvaluator, run
from fvspine.analysis import ks_distance, vanishing_exponent, face_distances
from fvspine.engine import tagged_particle
from fvspine.genealogy import spine

unit = DomainSpec.interval(0.0, 1.0)
ke = KernelEvaluator(unit)
cfg = EngineConfig(n=10, T=16.0, dt=1e-3, domain=unit,
                   initial=InitialMeasure.uniform_on_box((0.25, 0.75)), seed=11,
                   storage_dt=1e-2)
query = cfg.T / 2

spine_x, tagged_x, coal, pooled = [], [], [], []
for r in range(150):
    res = run(cfg, r)
    sp = spine(res.log, res.store)
    coal.append(sp.coalescence_time)
    if sp.complete and sp.coalescence_time >= query:
        spine_x.append(sp.path.value_at(query)[0])
    now = res.store.positions[res.store.row_at(query)]
    tagged_x.append(now[tagged_particle(cfg, r), 0])
    pooled.append(face_distances(now, unit))

print(f"coalescence times: median {np.median(coal):.2f}, kept {len(spine_x)} of {len(coal)}")
for name, xs in (("spine", spine_x), ("tagged", tagged_x)):
    h = ks_distance(xs, ke.h_stationary_cdf)
    q = ks_distance(xs, ke.qsd_cdf)
    print(f"{name:>6}: KS to sin^2 law {h.statistic:.3f}, to sin law {q.statistic:.3f}"
          f"  (1% critical value {h.threshold:.3f})")

# The near-wall exponent needs many points; every particle is a uniformly
# tagged one, so pool them all.  Near 1 means a sin-like law.
print("near-wall exponent of the population:",
      round(vanishing_exponent(np.concatenate(pooled), min_count=200), 2))
