"""Scenario configuration, grid topology, and random channel realizations.

The deployment is a square service area with M access points (APs) on a
regular grid, a single passive backscatter device (BD), and a single
receiver.  Large-scale gains follow a power-law path loss with reference
gain beta0 = (wavelength / 4 pi)^2; small-scale fading is i.i.d.
circularly-symmetric complex Gaussian (CSCG).  Per realization we draw

    g_m  in C^N   direct AP->receiver channel, per-entry variance b_m,
    f_m  in C^N   AP->BD channel, per-entry variance zeta_m,
    q    in C     BD->receiver channel, E|q|^2 = cascade_scale,

and form the cascaded backscatter channel h_m = q * f_m, whose per-entry
variance is eps_m = cascade_scale * zeta_m.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class SystemConfig:
    """All scenario parameters; defaults mirror the reference deployment."""

    num_aps: int = 16
    antennas_per_ap: int = 4
    tx_power_per_ap: np.ndarray = 0.1   # scalar broadcasts to every AP
    pilot_power: float = 0.1
    noise_power: float = 1e-14
    reflection_coeff: float = 1.0
    pathloss_exponent: float = 2.7
    wavelength: float = 0.0857
    cascade_scale: float = 0.001
    area_side: float = 750.0
    bd_position: tuple[float, float] = (0.0, 0.0)
    rx_position: tuple[float, float] = (5.0, 0.0)
    pilot_total: int = 50
    pilot_split: float = 0.5
    bisect_tol: float = 0.005
    sca_tol: float = 0.005
    rate_step: float = 1.0
    mc_trials: int = 500
    rng_seed: int = 12345

    def __post_init__(self):
        if self.num_aps < 1 or self.antennas_per_ap < 1:
            raise ValueError("need at least one AP and one antenna")
        p = np.asarray(self.tx_power_per_ap, dtype=float)
        if p.ndim == 0:
            p = np.full(self.num_aps, float(p))
        if p.size != self.num_aps:
            raise ValueError("tx_power_per_ap must have one entry per AP")
        if np.any(p <= 0) or self.pilot_power <= 0 or self.noise_power <= 0:
            raise ValueError("powers must be positive")
        self.tx_power_per_ap = p
        if not 0.0 <= self.reflection_coeff <= 1.0:
            raise ValueError("reflection coefficient must lie in [0, 1]")
        if not 0.0 < self.pilot_split < 1.0:
            raise ValueError("pilot_split must lie strictly between 0 and 1")
        if self.pilot_total < 2:
            raise ValueError("need at least two pilot symbols")
        if self.bisect_tol <= 0 or self.sca_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.wavelength <= 0 or self.area_side <= 0 or self.cascade_scale <= 0:
            raise ValueError("wavelength, area and cascade scale must be positive")
        self.bd_position = (float(self.bd_position[0]), float(self.bd_position[1]))
        self.rx_position = (float(self.rx_position[0]), float(self.rx_position[1]))

    @property
    def beta0(self) -> float:
        """Reference path gain (wavelength / 4 pi)^2."""
        return (self.wavelength / (4.0 * math.pi)) ** 2


@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray  # (M, 2)
    bd_position: np.ndarray
    rx_position: np.ndarray
    dist_ap_bd: np.ndarray
    dist_ap_rx: np.ndarray


@dataclass(frozen=True)
class ChannelRealization:
    g: np.ndarray      # (M*N,) direct channels, stacked per AP
    f: np.ndarray      # (M*N,) AP->BD channels
    q: complex         # BD->receiver scalar
    h: np.ndarray      # (M*N,) cascaded channel q*f
    b: np.ndarray      # (M,) large-scale gain of g_m
    zeta: np.ndarray   # (M,) large-scale gain of f_m
    eps: np.ndarray    # (M,) large-scale gain of h_m


def grid_coordinates(num_aps: int, area_side: float) -> np.ndarray:
    """1-D grid coordinates: sqrt(M) points evenly spaced across the side."""
    side = math.isqrt(num_aps)
    if side * side != num_aps:
        raise ValueError("grid layout needs a perfect-square AP count")
    if side == 1:
        return np.array([0.0])
    return np.linspace(-area_side / 2.0, area_side / 2.0, side)


def build_topology(config: SystemConfig, positions=None) -> Topology:
    """AP grid plus distances to BD and receiver (explicit positions optional)."""
    if positions is None:
        coords = grid_coordinates(config.num_aps, config.area_side)
        xx, yy = np.meshgrid(coords, coords, indexing="xy")
        pos = np.column_stack([xx.ravel(), yy.ravel()])
    else:
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] != config.num_aps:
            raise ValueError("need one position per AP")
    bd = np.asarray(config.bd_position, dtype=float)
    rx = np.asarray(config.rx_position, dtype=float)
    dist_bd = np.linalg.norm(pos - bd, axis=1)
    dist_rx = np.linalg.norm(pos - rx, axis=1)
    if np.any(dist_bd <= 0.0) or np.any(dist_rx <= 0.0):
        raise ValueError("an AP coincides with the BD or receiver; "
                         "zero distance has no finite path loss")
    return Topology(pos, bd, rx, dist_bd, dist_rx)


def path_loss(dist, gamma: float, beta0: float):
    """beta0 * d^(-gamma); rejects nonpositive distances."""
    d = np.asarray(dist, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("distance must be positive")
    out = beta0 * d ** (-gamma)
    return float(out) if np.isscalar(dist) else out


def _cscg(rng: np.random.Generator, size) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian draws."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def realize(config: SystemConfig, topology: Topology,
            rng: np.random.Generator) -> ChannelRealization:
    """Draw one channel realization (draw order g, f, q is fixed)."""
    M, N = config.num_aps, config.antennas_per_ap
    b = path_loss(topology.dist_ap_rx, config.pathloss_exponent, config.beta0)
    zeta = path_loss(topology.dist_ap_bd, config.pathloss_exponent, config.beta0)
    eps = config.cascade_scale * zeta
    g = np.repeat(np.sqrt(b), N) * _cscg(rng, M * N)
    f = np.repeat(np.sqrt(zeta), N) * _cscg(rng, M * N)
    q = complex(np.sqrt(config.cascade_scale) * _cscg(rng, ()))
    return ChannelRealization(g=g, f=f, q=q, h=q * f, b=b, zeta=zeta, eps=eps)


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent per-trial generators from one root seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# ---------------------------------------------------------------------------
# Plain-text config files and CSV export
# ---------------------------------------------------------------------------

_SCALAR_FLOAT_KEYS = {
    "pilot_power", "noise_power", "reflection_coeff", "pathloss_exponent",
    "wavelength", "cascade_scale", "area_side", "pilot_split", "bisect_tol",
    "sca_tol", "rate_step",
}
_SCALAR_INT_KEYS = {"num_aps", "antennas_per_ap", "pilot_total", "mc_trials", "rng_seed"}
_PAIR_KEYS = {"bd_position", "rx_position"}


def load_config(path) -> SystemConfig:
    """Read a flat `key = value` text file into a SystemConfig.

    Recognized keys are the SystemConfig field names.  Values: integers and
    floats as usual; positions as `x, y`; tx_power_per_ap as either a single
    number (shared by all APs) or a comma-separated list of length M.
    Lines starting with `#` and blank lines are ignored.
    """
    raw: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            raw[key] = val

    kwargs = {}
    for key, val in raw.items():
        if key in _SCALAR_INT_KEYS:
            kwargs[key] = int(val)
        elif key in _SCALAR_FLOAT_KEYS:
            kwargs[key] = float(val)
        elif key in _PAIR_KEYS:
            x, y = (float(v) for v in val.split(","))
            kwargs[key] = (x, y)
        elif key == "tx_power_per_ap":
            parts = [float(v) for v in val.split(",")]
            kwargs[key] = parts[0] if len(parts) == 1 else np.asarray(parts)
        else:
            raise ValueError(f"unknown configuration key {key!r}")
    if "tx_power_per_ap" in kwargs and np.ndim(kwargs["tx_power_per_ap"]) == 0:
        m = kwargs.get("num_aps", SystemConfig.num_aps)
        kwargs["tx_power_per_ap"] = np.full(m, kwargs["tx_power_per_ap"])
    return SystemConfig(**kwargs)


def topology_to_csv(topology: Topology, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ap_index", "x", "y", "dist_bd", "dist_rx"])
        for i, (pos, db, dr) in enumerate(zip(topology.ap_positions,
                                              topology.dist_ap_bd,
                                              topology.dist_ap_rx)):
            writer.writerow([i, f"{pos[0]:.6f}", f"{pos[1]:.6f}",
                             f"{db:.6f}", f"{dr:.6f}"])
