"""Achievable-rate formulas for the cell-free symbiotic radio link.

Primary link: instantaneous SINR and rate of the direct AP->receiver
transmission, with the backscattered signal acting as interference.
Secondary link: the backscatter symbol rides on a product channel whose
effective fading is exponential, so its ergodic rate has a closed form in
the exponential integral Ei.  Imperfect-CSI variants replace the true
channels by estimates and the noise floor by the estimation-error-plus-noise
power E, giving Jensen lower bounds on both rates.

All rates are in bps/Hz (explicit log2 factors throughout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG2E = np.log2(np.e)
_SERIES_SWITCH = 4.0  # |x| above this uses the continued fraction


@dataclass(frozen=True)
class Beamformer:
    """Stacked per-AP transmit vectors w = (w_1; ...; w_M), each length N."""

    w: np.ndarray

    def per_ap_power(self, antennas_per_ap: int) -> np.ndarray:
        w = np.asarray(self.w).reshape(-1, antennas_per_ap)
        return np.sum(np.abs(w) ** 2, axis=1)

    def power_feasible(self, powers: np.ndarray, antennas_per_ap: int,
                       rel_tol: float = 1e-9) -> bool:
        used = self.per_ap_power(antennas_per_ap)
        return bool(np.all(used <= np.asarray(powers) * (1.0 + rel_tol)))


@dataclass(frozen=True)
class RatePair:
    r_s: float
    r_c: float
    beta_c: float


# ---------------------------------------------------------------------------
# Exponential integral on the negative real axis
# ---------------------------------------------------------------------------

def _e1_series(z: float) -> float:
    """E1(z) for 0 < z <= 4 by the alternating power series."""
    acc = -np.euler_gamma - np.log(z)
    term = 1.0
    for k in range(1, 200):
        term *= -z / k
        delta = -term / k
        acc += delta
        if abs(delta) < 1e-17 * abs(acc) + 1e-300:
            break
    return acc


def _e1_scaled_cf(z: float) -> float:
    """exp(z)*E1(z) for z > 4 by a modified-Lentz continued fraction."""
    tiny = 1e-300
    b = z + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 300):
        a = -float(i) * float(i)
        b += 2.0
        d = a * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + a / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def exp_integral(x: float) -> float:
    """Ei(x) = integral of e^u/u from -infinity to x, for x < 0."""
    x = float(x)
    if x >= 0.0:
        raise ValueError("only the negative branch is supported")
    if -x <= _SERIES_SWITCH:
        # Ei(x) = gamma + ln|x| + sum x^k/(k*k!)
        acc = np.euler_gamma + np.log(-x)
        term = 1.0
        for k in range(1, 200):
            term *= x / k
            delta = term / k
            acc += delta
            if abs(delta) < 1e-17 * abs(acc) + 1e-300:
                break
        return acc
    z = -x
    return -np.exp(-z) * _e1_scaled_cf(z)


def secondary_ergodic_rate(beta_c: float) -> float:
    """Ergodic backscatter rate -e^{1/beta} Ei(-1/beta) log2(e), in bps/Hz.

    Evaluated in scaled form so large and small beta_c neither overflow nor
    lose the leading digits; beta_c = 0 returns 0 by continuity.
    """
    beta_c = float(beta_c)
    if beta_c < 0.0:
        raise ValueError("average backscatter SNR must be nonnegative")
    if beta_c == 0.0:
        return 0.0
    z = 1.0 / beta_c
    if z <= _SERIES_SWITCH:
        return float(np.exp(z) * _e1_series(z) * _LOG2E)
    return float(_e1_scaled_cf(z) * _LOG2E)


# ---------------------------------------------------------------------------
# Primary-link SINR and the imperfect-CSI lower bounds
# ---------------------------------------------------------------------------

def primary_sinr(w, g, f, q, alpha: float, sigma2: float) -> float:
    """|g^H w|^2 / (alpha |q|^2 |f^H w|^2 + sigma2)."""
    if sigma2 <= 0.0:
        raise ValueError("noise power must be positive")
    w = np.asarray(w, dtype=complex).ravel()
    g = np.asarray(g, dtype=complex).ravel()
    f = np.asarray(f, dtype=complex).ravel()
    if not (w.size == g.size == f.size):
        raise ValueError("dimension mismatch")
    sig = np.abs(np.vdot(g, w)) ** 2
    interf = alpha * np.abs(q) ** 2 * np.abs(np.vdot(f, w)) ** 2
    return float(sig / (interf + sigma2))


def primary_rate(w, g, f, q, alpha: float, sigma2: float) -> float:
    return float(np.log2(1.0 + primary_sinr(w, g, f, q, alpha, sigma2)))


def backscatter_snr(w, f, q, alpha: float, sigma2: float) -> float:
    """Average received SNR of the backscatter link, beta_c."""
    w = np.asarray(w, dtype=complex).ravel()
    f = np.asarray(f, dtype=complex).ravel()
    return float(alpha * np.abs(q) ** 2 * np.abs(np.vdot(f, w)) ** 2 / sigma2)


def lb_primary_rate_imperfect(w, g_hat, h_hat, err_noise: float, alpha: float) -> float:
    """Jensen lower bound on the primary rate with estimated channels."""
    w = np.asarray(w, dtype=complex).ravel()
    g_hat = np.asarray(g_hat, dtype=complex).ravel()
    h_hat = np.asarray(h_hat, dtype=complex).ravel()
    sig = np.abs(np.vdot(g_hat, w)) ** 2
    interf = alpha * np.abs(np.vdot(h_hat, w)) ** 2
    return float(np.log2(1.0 + sig / (err_noise + interf)))


def lb_secondary_rate_imperfect(w, h_hat, err_noise: float, alpha: float) -> float:
    """Jensen lower bound on the secondary ergodic rate with estimated channels."""
    w = np.asarray(w, dtype=complex).ravel()
    h_hat = np.asarray(h_hat, dtype=complex).ravel()
    beta = alpha * np.abs(np.vdot(h_hat, w)) ** 2 / err_noise
    return secondary_ergodic_rate(beta)
