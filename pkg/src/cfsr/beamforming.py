"""Transmit beamformer design across the distributed APs.

Three procedures cover the primary/secondary rate trade-off:

* bisection on the primary rate, where each probe is a cone feasibility
  problem (``max_primary_rate``);
* the closed-form per-AP MRT solution toward the cascaded channel, optimal
  whenever the primary-rate constraint is slack (``closed_form_mrt``);
* successive convex approximation for the general case, maximizing the
  backscatter link strength subject to a primary-rate floor
  (``sca_maximize_secondary``).

``rate_region`` strings them together into the achievable (R_th, r_c) curve.

Everything operates on :class:`EffectiveProblem`, which folds CSI quality
into the channel vectors and the noise term: with perfect CSI these are the
true channels and the thermal noise; with estimated CSI they are the
estimates and the error-plus-noise power.  Both cases share the same SINR
shape, so one code path serves both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rates, socp

_TINY = 1e-30
#: absolute rate floor (bps/Hz) below which bisection gives up on a nonzero peak
_RATE_FLOOR = 1e-9
#: KKT tolerance for feasibility probes; the feasibility threshold itself is
#: 1e-7, so probe solves gain nothing from the last decade of accuracy
_PROBE_TOL = 1e-7

CLOSED_FORM = "closed_form"
SCA = "sca"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class EffectiveProblem:
    """Inputs to every beamforming routine, CSI quality already folded in."""

    g_eff: np.ndarray      # channel of the direct link, length M*N
    h_eff: np.ndarray      # cascaded channel through the backscatter device
    alpha: float           # reflection power gain of the device
    noise_eff: float       # watts; thermal noise, or error-plus-noise power
    powers: np.ndarray     # per-AP transmit budgets, watts, length M
    antennas_per_ap: int

    def __post_init__(self):
        object.__setattr__(self, "g_eff", np.asarray(self.g_eff, dtype=complex).ravel())
        object.__setattr__(self, "h_eff", np.asarray(self.h_eff, dtype=complex).ravel())
        object.__setattr__(self, "powers", np.asarray(self.powers, dtype=float).ravel())
        if self.antennas_per_ap < 1 or self.powers.size < 1:
            raise ValueError("need at least one AP and one antenna")
        n = self.powers.size * self.antennas_per_ap
        if self.g_eff.size != n or self.h_eff.size != n:
            raise ValueError("channel length does not match AP/antenna counts")
        if not self.noise_eff > 0:
            raise ValueError("noise power must be positive")
        if self.alpha < 0:
            raise ValueError("reflection gain must be nonnegative")
        if np.any(self.powers <= 0):
            raise ValueError("per-AP power budgets must be positive")

    @property
    def num_aps(self) -> int:
        return self.powers.size

    @classmethod
    def from_true_channels(cls, config, chan) -> "EffectiveProblem":
        """Perfect-CSI problem from a channel realization."""
        return cls(chan.g, chan.h, config.reflection_coeff, config.noise_power,
                   config.tx_power_per_ap, config.antennas_per_ap)

    @classmethod
    def from_estimate(cls, config, est) -> "EffectiveProblem":
        """Estimated-CSI problem; the noise term is the error-plus-noise power."""
        return cls(est.g_hat, est.h_hat, config.reflection_coeff, est.err_noise,
                   config.tx_power_per_ap, config.antennas_per_ap)


@dataclass(frozen=True)
class BisectionResult:
    rate: float                 # certified-feasible primary rate, bps/Hz
    w: np.ndarray               # beamformer achieving `rate`
    trace: list                 # (probe rate, feasible) in probe order
    num_solves: int


@dataclass(frozen=True)
class MrtResult:
    w: np.ndarray
    primary_rate: float         # primary rate delivered by the MRT beamformer
    beta_c: float               # average backscatter SNR it induces

    @property
    def secondary_rate(self) -> float:
        return rates.secondary_ergodic_rate(self.beta_c)


@dataclass(frozen=True)
class ScaResult:
    w: np.ndarray | None        # None when the threshold is infeasible
    secondary_rate: float
    iterations: int
    objective_trace: list       # average backscatter SNR per iterate, start included
    branch: str                 # closed_form | sca | infeasible
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.branch != INFEASIBLE


@dataclass(frozen=True)
class RateRegionPoint:
    r_th: float                 # primary-rate threshold, bps/Hz
    r_c: float                  # achieved secondary rate, bps/Hz
    w: np.ndarray | None
    branch: str
    sca_iters: int


# ---------------------------------------------------------------------------
# Internal solver-unit form.  The beamformer is expressed in units of the
# largest per-AP amplitude budget and the channels absorb sqrt(noise_eff), so
# the cone data reaching the solver is O(1)..O(1e3) regardless of the physical
# scales (watt-level powers against 1e-14 W noise).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Scaled:
    g: np.ndarray               # ch_scale * g_eff
    h: np.ndarray
    budgets: np.ndarray         # per-AP power in solver units, max = 1
    w_scale: float              # physical w = w_scale * solver w
    emb: socp.ComplexEmbedding
    power_socs: list
    rows_g: tuple               # (re, im) functional rows of g
    rows_h: tuple

    def hdot(self, x: np.ndarray) -> complex:
        """h^H w for a solver-unit real vector x."""
        return complex(self.rows_h[0] @ x, self.rows_h[1] @ x)


def _scaled(p: EffectiveProblem) -> _Scaled:
    w_scale = math.sqrt(float(np.max(p.powers)))
    ch_scale = w_scale / math.sqrt(p.noise_eff)
    emb = socp.embed(p.num_aps, p.antennas_per_ap)
    budgets = p.powers / w_scale**2
    g = ch_scale * p.g_eff
    h = ch_scale * p.h_eff
    power_socs = [emb.power_soc(m, budgets[m]) for m in range(p.num_aps)]
    return _Scaled(g, h, budgets, w_scale, emb, power_socs,
                   emb.functional_rows(g), emb.functional_rows(h))


def _rate_soc(sc: _Scaled, mu: float, alpha: float) -> socp.SocConstraint:
    """Primary rate >= mu as the cone ||(sqrt(a) h^H w, 1)|| <= Re{g^H w}/sqrt(2^mu - 1).

    Solver units put the noise power at 1, so this is SINR >= 2^mu - 1 with
    the phase of g^H w pinned to the real axis.  The usual companion equality
    Im{g^H w} = 0 is deliberately *not* imposed: Re{g^H w} <= |g^H w| makes
    the cone alone sufficient, every other constraint is phase-invariant, and
    leaving the phase free lets the iterations in this module rotate freely
    instead of crawling along the pinned slice (returned beamformers are
    rotated onto Im{g^H w} = 0 afterwards).
    """
    sa = math.sqrt(alpha)
    # zero rows are free, and padding this cone to the same size as the
    # per-AP power cones lets the solver treat all cones as one batch
    k = max(3, 2 * sc.emb.antennas_per_ap)
    A = np.zeros((k, sc.emb.n))
    A[0] = sa * sc.rows_h[0]
    A[1] = sa * sc.rows_h[1]
    b = np.zeros(k)
    b[2] = 1.0
    gap = math.expm1(mu * math.log(2.0))
    return socp.SocConstraint(A, b, sc.rows_g[0] / math.sqrt(gap), 0.0)


def _constraint_socs(sc: _Scaled, r_th: float, alpha: float) -> list:
    socs = list(sc.power_socs)
    if r_th > 0:
        # r_th = 0 makes the rate constraint vacuous; drop it instead of
        # dividing by 2^0 - 1 = 0
        socs.append(_rate_soc(sc, r_th, alpha))
    return socs


def _align_phase(w: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Rotate w so g^H w is real and nonnegative (rates are phase-invariant)."""
    z = np.vdot(g, w)
    if abs(z) > _TINY:
        return w * (np.conj(z) / abs(z))
    return w


# ---------------------------------------------------------------------------
# Bisection for the peak primary rate.
# ---------------------------------------------------------------------------

def max_primary_rate(p: EffectiveProblem, kappa1: float = 0.005,
                     max_probes: int = 60) -> BisectionResult:
    """Largest supportable primary rate, by bisection over feasibility probes.

    The bracket starts at [0, log2(1 + (sum_m sqrt(P_m)||g_m||)^2 / noise)],
    whose upper end is the Cauchy-Schwarz bound with the backscatter
    interference ignored.  Each probe solves a max-slack cone feasibility
    problem; marginal slack counts as infeasible, keeping the returned rate
    conservative.  Terminates once the bracket is within the fraction kappa1
    of its feasible end.
    """
    if kappa1 <= 0:
        raise ValueError("kappa1 must be positive")
    sc = _scaled(p)
    M, N = p.num_aps, p.antennas_per_ap
    amp = float(np.sqrt(sc.budgets) @ np.linalg.norm(sc.g.reshape(M, N), axis=1))
    if amp <= _TINY:
        return BisectionResult(0.0, np.zeros(M * N, dtype=complex), [], 0)
    mu_lo, mu_hi = 0.0, math.log2(1.0 + amp * amp)
    w_best = np.zeros(M * N, dtype=complex)   # rate 0 is always supportable
    trace = []
    solves = 0
    for _ in range(max_probes):
        if mu_hi - mu_lo <= kappa1 * mu_lo or mu_hi <= _RATE_FLOOR:
            break
        mu = 0.5 * (mu_lo + mu_hi)
        prog = socp._prevalidated(np.zeros(sc.emb.n),
                                  _constraint_socs(sc, mu, p.alpha), [])
        res = socp.solve_feasibility(prog, tol=_PROBE_TOL)
        solves += 1
        trace.append((mu, res.feasible))
        if res.feasible:
            mu_lo = mu
            w_best = sc.emb.to_complex(res.x)
        else:
            mu_hi = mu
    w = sc.w_scale * _align_phase(w_best, sc.g)
    return BisectionResult(mu_lo, w, trace, solves)


# ---------------------------------------------------------------------------
# Closed-form MRT optimum.
# ---------------------------------------------------------------------------

def closed_form_mrt(p: EffectiveProblem) -> MrtResult:
    """Per-AP MRT toward the cascaded channel: w_m = sqrt(P_m) h_m / ||h_m||.

    This maximizes |h^H w|^2 under the per-AP budgets, hence it is the
    optimal beamformer whenever the primary-rate constraint is not binding;
    the induced |h^H w|^2 is (sum_m sqrt(P_m)||h_m||)^2.  An AP with a
    vanishing ||h_m|| cannot contribute and its weight is set to zero.
    """
    M, N = p.num_aps, p.antennas_per_ap
    hm = p.h_eff.reshape(M, N)
    norms = np.linalg.norm(hm, axis=1)
    gain = np.zeros(M)
    live = norms > _TINY
    gain[live] = np.sqrt(p.powers[live]) / norms[live]
    w = _align_phase((hm * gain[:, None]).ravel(), p.g_eff)
    num = abs(np.vdot(p.g_eff, w)) ** 2
    backscatter = p.alpha * abs(np.vdot(p.h_eff, w)) ** 2
    rate = math.log2(1.0 + num / (backscatter + p.noise_eff))
    return MrtResult(w, rate, backscatter / p.noise_eff)


# ---------------------------------------------------------------------------
# SCA for the constrained secondary-rate maximization.
# ---------------------------------------------------------------------------

def sca_initialize(p: EffectiveProblem, r_th: float) -> np.ndarray | None:
    """Feasible starting beamformer for the threshold, or None if there is none.

    Reuses the bisection probe machinery: the max-slack point of the
    constraint system at rate r_th is strictly inside whenever the threshold
    is supportable.
    """
    sc = _scaled(p)
    prog = socp._prevalidated(np.zeros(sc.emb.n),
                              _constraint_socs(sc, r_th, p.alpha), [])
    res = socp.solve_feasibility(prog, tol=_PROBE_TOL)
    if not res.feasible:
        return None
    return sc.w_scale * sc.emb.to_complex(res.x)


def _meets_constraints(p: EffectiveProblem, w: np.ndarray, r_th: float,
                       slack: float = 1e-9) -> bool:
    """Direct complex-arithmetic check of the power and cone-form rate constraint."""
    wm = w.reshape(p.num_aps, p.antennas_per_ap)
    if np.any(np.linalg.norm(wm, axis=1) ** 2 > p.powers * (1.0 + slack)):
        return False
    if r_th <= 0:
        return True
    need = math.expm1(r_th * math.log(2.0)) * (
        p.alpha * abs(np.vdot(p.h_eff, w)) ** 2 + p.noise_eff)
    got = np.vdot(p.g_eff, w).real
    return got >= 0 and got * got >= need * (1.0 - slack)


def sca_initialize_random(p: EffectiveProblem, r_th: float, rng,
                          blend_steps: int = 30) -> np.ndarray | None:
    """Random feasible starting point: a random full-power beamformer pulled
    toward the max-slack point just far enough to satisfy the constraints.

    The constraint set (with the phase pinned by Im{g^H w} = 0) is convex, so
    a bisection over the blend weight finds the farthest feasible point along
    the segment.  Used to probe sensitivity to the SCA starting point.
    """
    anchor = sca_initialize(p, r_th)
    if anchor is None:
        return None
    anchor = _align_phase(anchor, p.g_eff)   # so blends stay in the cone form
    M, N = p.num_aps, p.antennas_per_ap
    raw = (rng.standard_normal(M * N) + 1j * rng.standard_normal(M * N))
    wm = raw.reshape(M, N)
    wm = wm * (np.sqrt(p.powers) / np.linalg.norm(wm, axis=1))[:, None]
    cand = _align_phase(wm.ravel(), p.g_eff)
    if _meets_constraints(p, cand, r_th):
        return cand
    lo, hi = 0.0, 1.0   # blend fraction toward the random point
    for _ in range(blend_steps):
        mid = 0.5 * (lo + hi)
        if _meets_constraints(p, anchor + mid * (cand - anchor), r_th):
            lo = mid
        else:
            hi = mid
    return anchor + lo * (cand - anchor)


def sca_maximize_secondary(p: EffectiveProblem, r_th: float,
                           kappa2: float = 0.005,
                           w0: np.ndarray | None = None,
                           use_closed_form: bool = True,
                           max_iter: int = 100,
                           solve_tol: float = socp.DEFAULT_TOL) -> ScaResult:
    """Maximize the secondary rate subject to a primary-rate floor r_th.

    When the floor is below the rate the MRT beamformer already delivers,
    the constraint is slack and the closed form is returned outright (disable
    with use_closed_form=False to force the iteration).  Otherwise, starting
    from a feasible w0 (computed via ``sca_initialize`` when not supplied),
    each round replaces |h^H w|^2 by its linearization at the current iterate
    and solves the resulting cone program; the true objective never decreases
    along the way.  Stops when its fractional increase drops below kappa2.
    """
    if kappa2 <= 0:
        raise ValueError("kappa2 must be positive")
    mrt = closed_form_mrt(p)
    if use_closed_form and r_th <= mrt.primary_rate:
        return ScaResult(mrt.w, mrt.secondary_rate, 0, [mrt.beta_c], CLOSED_FORM)

    if w0 is None:
        w0 = sca_initialize(p, r_th)
        if w0 is None:
            return ScaResult(None, 0.0, 0, [], INFEASIBLE)

    sc = _scaled(p)
    socs = _constraint_socs(sc, r_th, p.alpha)
    # rotating any iterate onto arg(g^H w) = 0 keeps |h^H w| and the power
    # profile and can only widen the rate-cone margin, so re-centering the
    # phase each round is free -- and it stops the iteration from dragging
    # along the cone boundary when the starting phase is unfavourable
    def recenter(xr):
        return sc.emb.to_real(_align_phase(sc.emb.to_complex(xr), sc.g))

    x = recenter(sc.emb.to_real(np.asarray(w0, dtype=complex).ravel() / sc.w_scale))
    z = sc.hdot(x)
    obj = abs(z) ** 2                       # |h^H w|^2 in solver units
    trace = [p.alpha * obj]
    iters = 0
    diagnostics = {}
    for _ in range(max_iter):
        if obj <= _TINY:
            # degenerate start orthogonal to h: grow Re{h^H w} directly
            c = sc.rows_h[0].copy()
        else:
            # maximize the linearization of |h^H w|^2 around the iterate:
            # Re{(z h)^H w} with z = h^H w^(l)
            c = z.real * sc.rows_h[0] + z.imag * sc.rows_h[1]
        sol = socp.solve(socp._prevalidated(c, socs, []), tol=solve_tol)
        if sol.status is not socp.ConeStatus.OPTIMAL:
            diagnostics = {"solver_status": sol.status.name,
                           "at_iteration": iters, "residuals": sol.residuals}
            break
        x = recenter(sol.x)
        z = sc.hdot(x)
        new_obj = abs(z) ** 2
        iters += 1
        trace.append(p.alpha * new_obj)
        done = new_obj - obj <= kappa2 * obj
        obj = new_obj
        if done:
            break
    w = sc.w_scale * _align_phase(sc.emb.to_complex(x), sc.g)
    return ScaResult(w, rates.secondary_ergodic_rate(p.alpha * obj), iters,
                     trace, SCA, diagnostics)


# ---------------------------------------------------------------------------
# Rate-region sweep.
# ---------------------------------------------------------------------------

def rate_region(p: EffectiveProblem, rate_step: float = 1.0,
                kappa1: float = 0.005, kappa2: float = 0.005,
                thresholds=None, include_peak: bool = False) -> list[RateRegionPoint]:
    """Achievable (primary threshold, secondary rate) pairs for one problem.

    Below the MRT primary rate the trade-off is flat (closed form); from
    there to the bisection peak the SCA points are computed in descending
    threshold order, each warm-started from its predecessor — the previous
    beamformer stays feasible as the constraint loosens, which also makes
    the curve monotone by construction.  With `thresholds` given, that exact
    grid is evaluated instead (entries above the peak come back infeasible
    with zero secondary rate), which keeps Monte-Carlo sweeps aligned across
    realizations; `include_peak` then adds one extra point at the peak
    itself, so the right edge of the region is recorded even when no grid
    tick lands on it.
    """
    if rate_step <= 0:
        raise ValueError("rate_step must be positive")
    bis = max_primary_rate(p, kappa1)
    mrt = closed_form_mrt(p)
    r_hat, r_bar = mrt.primary_rate, max(bis.rate, mrt.primary_rate)
    edge = 1e-12 * (1.0 + r_bar)

    if thresholds is None:
        low = [k * rate_step for k in range(int(math.floor(r_hat / rate_step)) + 1)
               if k * rate_step < r_hat - edge]
        low.append(r_hat)
        high = []
        t = r_hat + rate_step
        while t < r_bar - edge:
            high.append(t)
            t += rate_step
        if r_bar > r_hat + edge:
            high.append(r_bar)
        dead = []
    else:
        ticks = sorted(float(t) for t in thresholds)
        low = [t for t in ticks if t <= r_hat + edge]
        high = [t for t in ticks if r_hat + edge < t <= r_bar + edge]
        dead = [t for t in ticks if t > r_bar + edge]
        if include_peak and not any(abs(t - r_bar) <= edge for t in high):
            (high if r_bar > r_hat + edge else low).append(r_bar)

    points = [RateRegionPoint(t, mrt.secondary_rate, mrt.w, CLOSED_FORM, 0)
              for t in low]
    w_prev = bis.w if bis.rate >= r_hat else mrt.w
    for t in reversed(high):
        res = sca_maximize_secondary(p, t, kappa2, w0=w_prev)
        if res.feasible:
            points.append(RateRegionPoint(t, res.secondary_rate, res.w,
                                          res.branch, res.iterations))
            w_prev = res.w
        else:
            points.append(RateRegionPoint(t, 0.0, None, INFEASIBLE, 0))
    points.extend(RateRegionPoint(t, 0.0, None, INFEASIBLE, 0) for t in dead)
    return sorted(points, key=lambda pt: pt.r_th)
