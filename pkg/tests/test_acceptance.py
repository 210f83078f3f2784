"""Contract-level acceptance battery.

Each test exercises one release criterion end to end at its stated
tolerance, funnels the verdict through ``criterion_report`` (one PASS/FAIL
line per criterion, replayed in the terminal summary), and fails loudly if
the bar is missed.  Cheap checks run first; the 500-trial Monte-Carlo
reproduction runs last.
"""

import math
import time

import numpy as np
import pytest
import scipy.integrate

from cfsr import beamforming as bf
from cfsr import channel, estimation, experiments, rates, socp

from test_socp import _ball, _kkt_instance


def _exact_primary_rate(p, w):
    num = abs(np.vdot(p.g_eff, w)) ** 2
    den = p.alpha * abs(np.vdot(p.h_eff, w)) ** 2 + p.noise_eff
    return math.log2(1.0 + num / den)


def _mrt_bound(p):
    H = p.h_eff.reshape(p.num_aps, p.antennas_per_ap)
    return float(np.sum(np.sqrt(p.powers) * np.linalg.norm(H, axis=1))) ** 2


# ---------------------------------------------------------------------------
# 1. Ergodic-rate closed form vs adaptive quadrature.
# ---------------------------------------------------------------------------

def test_criterion_1_ergodic_rate_oracle(criterion_report):
    grid = np.logspace(-3.0, 6.0, 37)
    t0 = time.perf_counter()
    ours = [rates.secondary_ergodic_rate(b) for b in grid]
    elapsed = time.perf_counter() - t0
    worst = 0.0
    for b, got in zip(grid, ours):
        ref, _ = scipy.integrate.quad(
            lambda x, s=b: np.log2(1.0 + s * x) * np.exp(-x),
            0.0, np.inf, limit=200)
        worst = max(worst, abs(got - ref))
    ok = worst <= 1e-8 and elapsed < 1.0
    criterion_report(
        "criterion 1 (ergodic-rate oracle)", ok,
        f"max |closed form - quadrature| = {worst:.2e} on log grid "
        f"[1e-3, 1e6] (tol 1e-8); evaluated in {elapsed:.3f} s (< 1 s)")


# ---------------------------------------------------------------------------
# 2. Estimation-error covariances, empirically and in the clean-pilot limit.
# ---------------------------------------------------------------------------

def test_criterion_2_estimation_covariances(criterion_report):
    t0 = time.perf_counter()
    cfg = channel.SystemConfig(
        num_aps=4, antennas_per_ap=2, area_side=4.0,
        tx_power_per_ap=1.0, pilot_power=1.0, noise_power=0.5,
        cascade_scale=0.8, pathloss_exponent=0.2, wavelength=4.0 * np.pi)
    topo = channel.build_topology(cfg)
    tc = estimation.TrainingConfig(4, 4, cfg.pilot_power, cfg.noise_power)
    rng = np.random.default_rng(20)
    trials = 100_000
    M, N = cfg.num_aps, cfg.antennas_per_ap
    sum_g = np.zeros(M)
    sum_h = np.zeros(M)
    b = eps = None
    for _ in range(trials):
        chan = channel.realize(cfg, topo, rng)
        est = estimation.estimate_all(cfg, chan, tc, rng)
        sum_g += (np.abs(chan.g - est.g_hat) ** 2).reshape(M, N).sum(axis=1)
        sum_h += (np.abs(chan.h - est.h_hat) ** 2).reshape(M, N).sum(axis=1)
        b, eps = chan.b, chan.eps
    emp_g = sum_g / (trials * N)
    emp_h = sum_h / (trials * N)
    tgt_g = estimation.var_g_error(b, tc.e1)
    tgt_h = estimation.var_h_error(b, eps, cfg.reflection_coeff,
                                   tc.e1, tc.e2)
    worst = max(float(np.max(np.abs(emp_g - tgt_g) / tgt_g)),
                float(np.max(np.abs(emp_h - tgt_h) / tgt_h)))

    # clean-pilot limit: huge training energy collapses E onto sigma^2,
    # checked on this geometry and on the default one
    devs = []
    for lim_cfg in (cfg, channel.SystemConfig()):
        lim_topo = channel.build_topology(lim_cfg)
        lb = channel.path_loss(lim_topo.dist_ap_rx,
                               lim_cfg.pathloss_exponent, lim_cfg.beta0)
        le = lim_cfg.cascade_scale * channel.path_loss(
            lim_topo.dist_ap_bd, lim_cfg.pathloss_exponent, lim_cfg.beta0)
        E = estimation.error_plus_noise(
            lim_cfg.tx_power_per_ap, lb, le, lim_cfg.reflection_coeff,
            lim_cfg.noise_power, 1e20, 1e20)
        devs.append(abs(E - lim_cfg.noise_power) / lim_cfg.noise_power)
    lim_dev = max(devs)
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and lim_dev <= 1e-3 and elapsed < 30.0
    criterion_report(
        "criterion 2 (estimation covariances)", ok,
        f"empirical per-entry error variances within {worst * 100:.2f}% of "
        f"targets over {trials} trials (tol 2%); clean-pilot limit "
        f"|E - sigma^2|/sigma^2 = {lim_dev:.2e} (tol 1e-3); "
        f"{elapsed:.1f} s (< 30 s)")


# ---------------------------------------------------------------------------
# 3. Below the MRT rate, tightly converged SCA attains the closed-form
#    backscatter-power bound.
# ---------------------------------------------------------------------------

def test_criterion_3_mrt_equivalence(criterion_report):
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for seed in range(50):
        rng = np.random.default_rng(3000 + seed)
        if seed % 10 < 7:
            cfg = channel.SystemConfig(num_aps=4, antennas_per_ap=2,
                                       area_side=200.0)
        else:
            cfg = channel.SystemConfig()
        topo = channel.build_topology(cfg)
        chan = channel.realize(cfg, topo, rng)
        if seed % 3 == 2:
            est = estimation.estimate_all(
                cfg, chan, estimation.TrainingConfig.from_config(cfg), rng)
            p = bf.EffectiveProblem.from_estimate(cfg, est)
        else:
            p = bf.EffectiveProblem.from_true_channels(cfg, chan)
        r_th = float(rng.uniform(0.2, 0.9)) * bf.closed_form_mrt(p).primary_rate
        res = bf.sca_maximize_secondary(p, r_th, kappa2=1e-10,
                                        w0=bf.sca_initialize(p, r_th),
                                        use_closed_form=False)
        if res.w is None:
            worst = math.inf
            break
        achieved = abs(np.vdot(p.h_eff, res.w)) ** 2
        target = _mrt_bound(p)
        worst = max(worst, abs(achieved - target) / target)
        count += 1
    elapsed = time.perf_counter() - t0
    ok = count >= 50 and worst <= 1e-6 and elapsed < 120.0
    criterion_report(
        "criterion 3 (iterative vs closed-form optimum)", ok,
        f"{count} instances with slack primary constraint: worst relative "
        f"gap to (sum sqrt(P)||h_m||)^2 = {worst:.2e} (tol 1e-6); "
        f"{elapsed:.1f} s (< 120 s)")


# ---------------------------------------------------------------------------
# 4. SCA ascent and convergence over a large batch of runs.
# ---------------------------------------------------------------------------

def test_criterion_4_sca_monotone_convergence(criterion_report):
    t0 = time.perf_counter()
    cfg = channel.SystemConfig()
    topo = channel.build_topology(cfg)
    runs = 0
    worst_drop = -math.inf
    max_iters = 0
    failures = []
    for seed in range(100, 113):
        rng = np.random.default_rng(seed)
        chan = channel.realize(cfg, topo, rng)
        est = estimation.estimate_all(
            cfg, chan, estimation.TrainingConfig.from_config(cfg), rng)
        for p in (bf.EffectiveProblem.from_true_channels(cfg, chan),
                  bf.EffectiveProblem.from_estimate(cfg, est)):
            r_bar = bf.max_primary_rate(p).rate
            r_hat = bf.closed_form_mrt(p).primary_rate
            for u in (0.15, 0.5, 0.8, 0.97):
                r_th = r_hat + u * (r_bar - r_hat)
                res = bf.sca_maximize_secondary(p, r_th)  # kappa2 = 0.5%
                runs += 1
                if res.branch != bf.SCA:
                    failures.append((seed, u, res.branch))
                    continue
                tr = res.objective_trace
                for prev, nxt in zip(tr, tr[1:]):
                    worst_drop = max(worst_drop,
                                     (prev - nxt) / (1.0 + abs(prev)))
                max_iters = max(max_iters, res.iterations)
                if res.iterations >= 100:
                    failures.append((seed, u, "hit iteration cap"))
    elapsed = time.perf_counter() - t0
    ok = runs >= 100 and not failures and worst_drop <= 1e-9
    criterion_report(
        "criterion 4 (surrogate ascent)", ok,
        f"{runs} runs, perfect and estimated CSI, thresholds up to the "
        f"bisection peak: worst normalized objective drop = {worst_drop:.2e} "
        f"(tol 1e-9), max iterations {max_iters} (< 100), "
        f"non-converged/infeasible runs: {len(failures)}; {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 5. Bisection returns a certified beamformer and a monotone probe trace.
# ---------------------------------------------------------------------------

def test_criterion_5_bisection_consistency(criterion_report):
    kappa1 = 0.005
    worst_margin = math.inf
    monotone = True
    for seed in range(40, 50):
        cfg = channel.SystemConfig()
        topo = channel.build_topology(cfg)
        rng = np.random.default_rng(seed)
        chan = channel.realize(cfg, topo, rng)
        if seed % 2:
            est = estimation.estimate_all(
                cfg, chan, estimation.TrainingConfig.from_config(cfg), rng)
            p = bf.EffectiveProblem.from_estimate(cfg, est)
        else:
            p = bf.EffectiveProblem.from_true_channels(cfg, chan)
        bis = bf.max_primary_rate(p, kappa1=kappa1)
        exact = _exact_primary_rate(p, bis.w)
        worst_margin = min(worst_margin,
                           exact - bis.rate / (1.0 + kappa1))
        feas = [r for r, good in bis.trace if good]
        infeas = [r for r, good in bis.trace if not good]
        if feas and infeas and max(feas) >= min(infeas):
            monotone = False
    ok = worst_margin >= -1e-12 and monotone
    criterion_report(
        "criterion 5 (bisection consistency)", ok,
        f"10 instances: exact re-evaluated rate beats peak/(1+kappa1) with "
        f"margin >= {worst_margin:.2e}; probe feasibility monotone: "
        f"{monotone}")


# ---------------------------------------------------------------------------
# 6. Cone solver: analytic optima at 1e-8, fuzz re-verified independently.
# ---------------------------------------------------------------------------

def _independent_residual(prog, x, target):
    """Worst normalized constraint/objective residual, plain numpy only."""
    res = 0.0
    for soc in prog.socs:
        lhs = float(np.linalg.norm(np.asarray(soc.A) @ x + soc.b))
        rhs = float(np.asarray(soc.d) @ x + soc.e)
        res = max(res, (lhs - rhs) / (1.0 + abs(rhs)))
    for a, r in prog.eqs:
        res = max(res, abs(float(np.asarray(a) @ x) - r) / (1.0 + abs(r)))
    res = max(res, abs(float(prog.c @ x) - target) / (1.0 + abs(target)))
    return res


def test_criterion_6_cone_solver(criterion_report):
    worst_kkt = 0.0
    # support function of a ball: argmax r*c/||c||, value r*||c||
    for seed in range(8):
        rng = np.random.default_rng(600 + seed)
        n = int(rng.integers(2, 7))
        c = rng.standard_normal(n)
        r = float(rng.uniform(0.5, 3.0))
        sol = socp.solve(socp.ConeProgram(c, [_ball(n, r)]))
        assert sol.status is socp.ConeStatus.OPTIMAL
        target = r * float(np.linalg.norm(c))
        x_star = r * c / np.linalg.norm(c)
        worst_kkt = max(
            worst_kkt,
            abs(sol.objective_value - target) / (1.0 + abs(target)),
            (float(np.linalg.norm(sol.x)) - r) / (1.0 + r))
        assert float(np.linalg.norm(sol.x - x_star)) <= 1e-6 * (1.0 + r)
    # equality-constrained projection: x* = p + (r - a'p)/||a||^2 * a
    for seed in range(4):
        rng = np.random.default_rng(700 + seed)
        n = int(rng.integers(3, 7))
        pt = rng.standard_normal(n)
        a = rng.standard_normal(n)
        r = float(rng.standard_normal())
        A = np.hstack([np.eye(n), np.zeros((n, 1))])
        soc = socp.SocConstraint(A, -pt, np.eye(n + 1)[n], 0.0)
        c = np.zeros(n + 1)
        c[n] = -1.0
        sol = socp.solve(socp.ConeProgram(
            c, [soc], eqs=[(np.concatenate([a, [0.0]]), r)]))
        assert sol.status is socp.ConeStatus.OPTIMAL
        x_star = pt + (r - float(a @ pt)) / float(a @ a) * a
        target = -float(np.linalg.norm(x_star - pt))
        worst_kkt = max(
            worst_kkt,
            abs(sol.objective_value - target) / (1.0 + abs(target)),
            abs(float(a @ sol.x[:n]) - r) / (1.0 + abs(r)))
        assert float(np.linalg.norm(sol.x[:n] - x_star)) <= 1e-6
    # infeasibility certificates
    bad_radius = socp.solve(socp.ConeProgram(
        np.zeros(2), [_ball(2, -1.0)]))
    halfspaces = socp.solve(socp.ConeProgram(np.zeros(1), [
        socp.SocConstraint(np.zeros((1, 1)), np.zeros(1),
                           np.array([1.0]), -1.0),
        socp.SocConstraint(np.zeros((1, 1)), np.zeros(1),
                           np.array([-1.0]), -1.0)]))
    certificates = (bad_radius.status is socp.ConeStatus.INFEASIBLE
                    and halfspaces.status is socp.ConeStatus.INFEASIBLE)
    # 100-instance fuzz with a constructed certified optimum
    worst_fuzz = 0.0
    for seed in range(100):
        prog, _, target = _kkt_instance(np.random.default_rng(6000 + seed))
        sol = socp.solve(prog)
        if sol.status is not socp.ConeStatus.OPTIMAL:
            worst_fuzz = math.inf
            break
        worst_fuzz = max(worst_fuzz,
                         _independent_residual(prog, sol.x, target))
    ok = worst_kkt <= 1e-8 and certificates and worst_fuzz <= 1e-6
    criterion_report(
        "criterion 6 (cone solver)", ok,
        f"analytic instances: worst KKT residual {worst_kkt:.2e} (tol 1e-8); "
        f"infeasibility certified: {certificates}; 100-instance fuzz worst "
        f"independent residual {worst_fuzz:.2e} (tol 1e-6)")


# ---------------------------------------------------------------------------
# 7. Pilot-split sweep: interior minimum, budget ordering, edge asymmetry.
# ---------------------------------------------------------------------------

def test_criterion_7_pilot_split_sweep(criterion_report):
    t0 = time.perf_counter()
    res = experiments.run_error_power_sweep(
        experiments.ExperimentSpec.error_power_sweep(channel.SystemConfig()))
    elapsed = time.perf_counter() - t0
    curves = {50: {}, 100: {}}
    for csi, tau, l1, ratio in res.rows:
        if csi == "imperfect":
            curves[tau][l1] = ratio
    grid = sorted(curves[50])
    interior = True
    for tau in (50, 100):
        vals = [curves[tau][l1] for l1 in grid]
        k = min(range(len(vals)), key=vals.__getitem__)
        interior &= 0 < k < len(vals) - 1
    pointwise = all(curves[100][l1] < curves[50][l1] for l1 in grid)
    asym = (curves[50][0.1] > curves[50][0.9]
            and curves[100][0.1] > curves[100][0.9])
    ok = interior and pointwise and asym and elapsed < 5.0
    criterion_report(
        "criterion 7 (pilot-split sweep)", ok,
        f"interior minimum at split {res.best_split[50]} (budget 50) and "
        f"{res.best_split[100]} (budget 100); budget-100 curve pointwise "
        f"below budget-50: {pointwise}; ratio(0.1) > ratio(0.9): {asym}; "
        f"{elapsed:.2f} s (< 5 s)")


# ---------------------------------------------------------------------------
# 9. Jensen lower bounds never exceed the Monte-Carlo expectation.
#    (Runs before the long criterion-8 Monte Carlo.)
# ---------------------------------------------------------------------------

def test_criterion_9_jensen_lower_bounds(criterion_report):
    cfg = channel.SystemConfig()
    topo = channel.build_topology(cfg)
    alpha = cfg.reflection_coeff
    draws = 1500
    worst = -math.inf           # max over instances of (lb - mean - 3 se)
    for seed in range(200, 220):
        rng = np.random.default_rng(seed)
        chan = channel.realize(cfg, topo, rng)
        tc = estimation.TrainingConfig.from_config(cfg)
        est = estimation.estimate_all(cfg, chan, tc, rng)
        p = bf.EffectiveProblem.from_estimate(cfg, est)
        w = bf.closed_form_mrt(p).w          # full per-AP power
        vg = estimation.var_g_error(chan.b, tc.e1)
        vh = estimation.var_h_error(chan.b, chan.eps, alpha, tc.e1, tc.e2)
        N = cfg.antennas_per_ap
        sg = np.repeat(np.sqrt(vg / 2.0), N)
        sh = np.repeat(np.sqrt(vh / 2.0), N)
        err_rng = np.random.default_rng(900 + seed)
        mn = est.g_hat.size
        eg = (err_rng.standard_normal((draws, mn))
              + 1j * err_rng.standard_normal((draws, mn))) * sg
        eh = (err_rng.standard_normal((draws, mn))
              + 1j * err_rng.standard_normal((draws, mn))) * sh
        g = est.g_hat + eg
        h = est.h_hat + eh
        sig = np.abs(g.conj() @ w) ** 2
        interf = alpha * np.abs(h.conj() @ w) ** 2
        rp = np.log2(1.0 + sig / (interf + cfg.noise_power))
        beta = interf / cfg.noise_power
        rc = np.array([rates.secondary_ergodic_rate(x) for x in beta])
        lb_p = rates.lb_primary_rate_imperfect(w, est.g_hat, est.h_hat,
                                               est.err_noise, alpha)
        lb_c = rates.lb_secondary_rate_imperfect(w, est.h_hat,
                                                 est.err_noise, alpha)
        for lb, samples in ((lb_p, rp), (lb_c, rc)):
            mean = float(np.mean(samples))
            se = float(np.std(samples, ddof=1)) / math.sqrt(draws)
            worst = max(worst, lb - mean - 3.0 * se)
    ok = worst <= 0.0
    criterion_report(
        "criterion 9 (lower bounds vs Monte Carlo)", ok,
        f"20 instances, {draws} error draws each: max of "
        f"(bound - mean - 3 se) = {worst:.3e} for both links (must be <= 0)")


# ---------------------------------------------------------------------------
# 8. Full 500-trial Monte-Carlo reproduction of the rate-region figures.
# ---------------------------------------------------------------------------

def test_criterion_8_rate_region_monte_carlo(criterion_report):
    cfg = channel.SystemConfig()            # 500 trials, default seed
    spec = experiments.ExperimentSpec.rate_region(cfg)
    t0 = time.perf_counter()
    region = experiments.run_rate_region(spec)
    elapsed = time.perf_counter() - t0

    curves = {}
    for csi, tau, l1, t, mean, se, n, infc in region.rows:
        key = (csi, tau, l1)
        curves.setdefault(key, ([], []))
        curves[key][0].append(mean)
        curves[key][1].append(se)
    problems = []

    # (a) mean trade-off curve is non-increasing for every CSI variant
    for key, (means, _) in curves.items():
        for lo, hi in zip(means, means[1:]):
            if hi > lo + 1e-9:
                problems.append(f"non-monotone mean at {key}")
                break

    # (b) essentially no secondary rate left at each trial's own peak
    max_tail = max(row[4] for row in region.tail_rows)
    if max_tail > 0.1:
        problems.append(f"edge-of-region mean rate {max_tail:.3f} > 0.1")

    # (c, d) orderings, pointwise within 3 sigma and strict in aggregate
    def dominates(key_hi, key_lo):
        hi_m, hi_s = curves[key_hi]
        lo_m, lo_s = curves[key_lo]
        point = all(
            a >= b - 3.0 * math.sqrt(sa * sa + sb * sb) - 1e-12
            for a, b, sa, sb in zip(hi_m, lo_m, hi_s, lo_s))
        return point and math.fsum(hi_m) > math.fsum(lo_m)

    perfect = ("perfect", "", "")
    chain = [perfect, ("imperfect", 50, 0.5), ("imperfect", 50, 0.9),
             ("imperfect", 50, 0.1)]
    for hi, lo in zip(chain, chain[1:]):
        if not dominates(hi, lo):
            problems.append(f"ordering violated: {hi} vs {lo}")
    for l1 in (0.1, 0.5, 0.9):
        if not dominates(("imperfect", 100, l1), ("imperfect", 50, l1)):
            problems.append(f"budget 100 does not dominate 50 at split {l1}")
        if not dominates(perfect, ("imperfect", 100, l1)):
            problems.append(f"perfect CSI not outermost at 100/{l1}")

    if elapsed >= 1800.0:
        problems.append(f"runtime {elapsed:.0f} s >= 1800 s")

    ok = not problems
    criterion_report(
        "criterion 8 (rate-region Monte Carlo)", ok,
        f"{region.trials} trials in {elapsed / 60.0:.1f} min (< 30): "
        f"means non-increasing, max edge-of-region mean rate "
        f"{max_tail:.4f} (<= 0.1), CSI/budget orderings hold within "
        f"3 sigma pointwise and strictly in aggregate; solver failures: "
        f"{region.solver.failures}"
        + ("" if ok else "; PROBLEMS: " + "; ".join(problems)))
