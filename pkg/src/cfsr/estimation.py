"""Two-phase uplink training and LMMSE channel estimation.

Phase 1: the receiver sends tau1 pilot symbols while the BD keeps silent,
and each AP forms an MMSE estimate of its direct channel g_m.  Phase 2: the
receiver sends tau2 more pilots which the BD backscatters with constant
symbol 1; after cancelling the (estimated) direct component, each AP forms
an LMMSE estimate of its cascaded channel h_m = q f_m.  Both estimators
reduce to scalar gains because the fading is i.i.d. per entry.

The closed-form error variances feed the effective estimation-error-plus-
noise power E used by the imperfect-CSI rate bounds, so they are exposed as
plain functions next to the simulating estimators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, SystemConfig, _cscg


def split_pilots(pilot_total: int, pilot_split: float) -> tuple[int, int]:
    """(tau1, tau2) with tau1 = round(l1 * tau_total), ties up, both >= 1."""
    if pilot_total < 2:
        raise ValueError("need at least two pilot symbols to split")
    if not 0.0 < pilot_split < 1.0:
        raise ValueError("pilot split must lie strictly between 0 and 1")
    tau1 = int(np.floor(pilot_split * pilot_total + 0.5))
    tau1 = max(1, min(pilot_total - 1, tau1))
    return tau1, pilot_total - tau1


@dataclass(frozen=True)
class TrainingConfig:
    tau1: int
    tau2: int
    pilot_power: float
    noise_power: float

    def __post_init__(self):
        if self.tau1 < 1 or self.tau2 < 1:
            raise ValueError("each training phase needs at least one symbol")
        if self.pilot_power <= 0 or self.noise_power <= 0:
            raise ValueError("powers must be positive")

    @property
    def e1(self) -> float:
        """Training energy-to-noise ratio of phase 1."""
        return self.pilot_power * self.tau1 / self.noise_power

    @property
    def e2(self) -> float:
        return self.pilot_power * self.tau2 / self.noise_power

    @classmethod
    def from_config(cls, config: SystemConfig) -> "TrainingConfig":
        tau1, tau2 = split_pilots(config.pilot_total, config.pilot_split)
        return cls(tau1, tau2, config.pilot_power, config.noise_power)


@dataclass(frozen=True)
class ChannelEstimate:
    g_hat: np.ndarray      # (M*N,)
    h_hat: np.ndarray      # (M*N,)
    var_g_err: np.ndarray  # (M,) per-entry error variance of g
    var_h_err: np.ndarray  # (M,) per-entry error variance of h
    err_noise: float       # effective estimation-error-plus-noise power E


def var_g_error(b, e1: float):
    """Per-entry error variance of the phase-1 estimate: b/(1 + e1 b)."""
    b = np.asarray(b, dtype=float)
    return b / (1.0 + e1 * b)


def var_h_error(b, eps, alpha: float, e1: float, e2: float):
    """Per-entry error variance of the phase-2 estimate.

    eps*(e2*vg + 1) / (alpha*e2*eps + e2*vg + 1) with vg = b/(1+e1*b);
    continuous in e2 at 0 (no phase-2 training leaves variance eps).
    """
    b = np.asarray(b, dtype=float)
    eps = np.asarray(eps, dtype=float)
    vg = var_g_error(b, e1)
    return eps * (e2 * vg + 1.0) / (alpha * e2 * eps + e2 * vg + 1.0)


def estimate_direct(chan: ChannelRealization, tc: TrainingConfig,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Phase 1: simulate the pilot block and return (g_hat, var_g_err)."""
    n_tot = chan.g.size
    M = chan.b.size
    N = n_tot // M
    pt = tc.pilot_power
    # all-ones pilot; the projection Y @ phi / sqrt(P_t) collapses the block
    noise = _cscg(rng, (n_tot, tc.tau1)) * np.sqrt(tc.noise_power)
    y_proj = tc.tau1 * chan.g + (noise @ np.ones(tc.tau1)) / np.sqrt(pt)
    gain = pt * chan.b / (pt * tc.tau1 * chan.b + tc.noise_power)
    g_hat = np.repeat(gain, N) * y_proj
    return g_hat, var_g_error(chan.b, tc.e1)


def estimate_backscatter(chan: ChannelRealization, g_hat: np.ndarray,
                         var_g: np.ndarray, tc: TrainingConfig, alpha: float,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Phase 2: cancel the direct pilot, then LMMSE-estimate the cascade.

    var_g must be the analytic phase-1 error variance (it enters the gain).
    """
    if alpha <= 0.0:
        raise ValueError("cascaded link unobservable without reflection")
    n_tot = chan.h.size
    M = chan.b.size
    N = n_tot // M
    pt = tc.pilot_power
    g_err = chan.g - g_hat
    noise = _cscg(rng, (n_tot, tc.tau2)) * np.sqrt(tc.noise_power)
    # residual after cancelling sqrt(P_t) g_hat: cascade + phase-1 error + noise
    y_proj = (tc.tau2 * chan.h
              + tc.tau2 * g_err / np.sqrt(alpha)
              + (noise @ np.ones(tc.tau2)) / np.sqrt(pt * alpha))
    gain = (alpha * pt * chan.eps
            / (alpha * pt * tc.tau2 * chan.eps + pt * tc.tau2 * var_g + tc.noise_power))
    h_hat = np.repeat(gain, N) * y_proj
    return h_hat, var_h_error(chan.b, chan.eps, alpha, tc.e1, tc.e2)


def error_plus_noise(powers, b, eps, alpha: float, sigma2: float,
                     e1: float, e2: float) -> float:
    """E = sum_m P_m [var_g_m + alpha * var_h_m] + sigma2 for raw ENRs."""
    powers = np.asarray(powers, dtype=float)
    vg = var_g_error(b, e1)
    vh = var_h_error(b, eps, alpha, e1, e2)
    return float(np.sum(powers * (vg + alpha * vh)) + sigma2)


def effective_noise(config: SystemConfig, b, eps, tc: TrainingConfig) -> float:
    """Effective estimation-error-plus-noise power E for the given training."""
    return error_plus_noise(config.tx_power_per_ap, b, eps,
                            config.reflection_coeff, config.noise_power,
                            tc.e1, tc.e2)


def estimate_all(config: SystemConfig, chan: ChannelRealization,
                 tc: TrainingConfig, rng: np.random.Generator) -> ChannelEstimate:
    """Run both phases and assemble the estimate bundle."""
    g_hat, vg = estimate_direct(chan, tc, rng)
    h_hat, vh = estimate_backscatter(chan, g_hat, vg, tc,
                                     config.reflection_coeff, rng)
    e_val = effective_noise(config, chan.b, chan.eps, tc)
    return ChannelEstimate(g_hat=g_hat, h_hat=h_hat, var_g_err=vg,
                           var_h_err=vh, err_noise=e_val)


def estimate_to_csv(est: ChannelEstimate, antennas_per_ap: int, path) -> None:
    """Debug dump: one row per complex entry of each estimated channel."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "ap", "entry", "re", "im"])
        for name, vec in (("g_hat", est.g_hat), ("h_hat", est.h_hat)):
            for i, val in enumerate(vec):
                writer.writerow([name, i // antennas_per_ap, i % antennas_per_ap,
                                 f"{val.real:.12e}", f"{val.imag:.12e}"])
