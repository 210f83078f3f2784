"""Two-phase channel estimation: predicted vs empirical error variances.

Runs the direct-link and backscatter-link estimators over many fading
draws on a small deployment and compares the per-AP sample error
variances against the closed-form values.  Also shows the effective
noise floor the rate bounds use.

Run:  python3 demos/estimation_demo.py
"""

import numpy as np

from cfsr import channel, estimation

cfg = channel.SystemConfig(num_aps=4, antennas_per_ap=2, area_side=4.0,
                           tx_power_per_ap=1.0, pilot_power=1.0,
                           noise_power=0.5, cascade_scale=0.8,
                           pathloss_exponent=0.2, wavelength=4.0 * np.pi)
topo = channel.build_topology(cfg)
tc = estimation.TrainingConfig(4, 4, cfg.pilot_power, cfg.noise_power)
rng = np.random.default_rng(0)

trials = 20000
M, N = cfg.num_aps, cfg.antennas_per_ap
sum_g = np.zeros(M)
sum_h = np.zeros(M)
for _ in range(trials):
    chan = channel.realize(cfg, topo, rng)
    est = estimation.estimate_all(cfg, chan, tc, rng)
    sum_g += (np.abs(chan.g - est.g_hat) ** 2).reshape(M, N).sum(axis=1)
    sum_h += (np.abs(chan.h - est.h_hat) ** 2).reshape(M, N).sum(axis=1)

emp_g = sum_g / (trials * N)
emp_h = sum_h / (trials * N)
tgt_g = estimation.var_g_error(chan.b, tc.e1)
tgt_h = estimation.var_h_error(chan.b, chan.eps, cfg.reflection_coeff,
                               tc.e1, tc.e2)

print(f"{trials} draws, training energies e1 = e2 = {tc.e1:g}\n")
print(f"{'AP':>3} {'var(g err)':>11} {'predicted':>10}"
      f" {'var(h err)':>11} {'predicted':>10}")
for m in range(M):
    print(f"{m:3d} {emp_g[m]:11.4f} {tgt_g[m]:10.4f}"
          f" {emp_h[m]:11.4f} {tgt_h[m]:10.4f}")

E = estimation.effective_noise(cfg, chan.b, chan.eps, tc)
print(f"\neffective noise floor E = {E:.4f} "
      f"({E / cfg.noise_power:.2f} x thermal)")
