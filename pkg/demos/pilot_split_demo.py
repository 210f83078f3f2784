"""How the pilot split drives the effective noise floor.

Sweeps the fraction of the training budget spent on the direct link and
prints the resulting error-plus-noise power (relative to thermal noise)
for two budgets.  Spending too little on either phase inflates the floor;
the sweet spot sits between the extremes.

Run:  python3 demos/pilot_split_demo.py
"""

import numpy as np

from cfsr import channel, experiments

cfg = channel.SystemConfig()
spec = experiments.ExperimentSpec.error_power_sweep(cfg)
res = experiments.run_error_power_sweep(spec)

curves = {tau: {} for tau in spec.tau_totals}
for csi, tau, l1, ratio in res.rows:
    if csi == "imperfect":
        curves[tau][l1] = ratio

print(f"{'split':>6}" + "".join(f"  E/sigma^2 @ {tau:>3}" for tau in curves))
for l1 in spec.l1_grid:
    marks = []
    for tau in curves:
        star = " *" if res.best_split[tau] == l1 else "  "
        marks.append(f"{curves[tau][l1]:15.2f}{star}")
    print(f"{l1:6.2f}" + "".join(marks))
print("\n(* = best split for that budget)")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    pass
else:
    fig, ax = plt.subplots()
    for tau in curves:
        splits = sorted(curves[tau])
        ax.semilogy(splits, [curves[tau][s] for s in splits],
                    marker="o", label=f"budget {tau}")
    ax.set_xlabel("fraction of pilots on the direct link")
    ax.set_ylabel("effective noise / thermal noise")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig("pilot_split.png", dpi=120, bbox_inches="tight")
    print("wrote pilot_split.png")
