"""Trace the primary/secondary rate trade-off for one channel draw.

Realizes the default 16-AP deployment once, finds the highest supportable
primary rate by bisection, then sweeps the primary-rate floor and
maximizes the backscatter rate at each step.  Below the MRT rate the
optimum is closed-form; past it the SCA iteration takes over and the
secondary rate falls until the region's edge.

Run:  python3 demos/rate_region_demo.py [seed]
"""

import sys

import numpy as np

from cfsr import beamforming as bf
from cfsr import channel

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
cfg = channel.SystemConfig()
topo = channel.build_topology(cfg)
chan = channel.realize(cfg, topo, np.random.default_rng(seed))
p = bf.EffectiveProblem.from_true_channels(cfg, chan)

mrt = bf.closed_form_mrt(p)
bis = bf.max_primary_rate(p)
print(f"seed {seed}: MRT primary rate {mrt.primary_rate:.3f}, "
      f"bisection peak {bis.rate:.3f} (bps/Hz, {bis.num_solves} solves)")

points = bf.rate_region(p, rate_step=1.0)
print(f"\n{'floor':>6} {'secondary':>10} {'branch':>12} {'iters':>6}")
for pt in points:
    print(f"{pt.r_th:6.1f} {pt.r_c:10.4f} {pt.branch:>12} {pt.sca_iters:6d}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    pass
else:
    fig, ax = plt.subplots()
    ax.plot([pt.r_th for pt in points], [pt.r_c for pt in points],
            marker="o")
    ax.axvline(mrt.primary_rate, ls="--", c="gray", lw=1,
               label="MRT primary rate")
    ax.set_xlabel("primary-rate floor (bps/Hz)")
    ax.set_ylabel("max secondary rate (bps/Hz)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.savefig("rate_region.png", dpi=120, bbox_inches="tight")
    print("\nwrote rate_region.png")
