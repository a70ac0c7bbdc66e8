"""Air-to-ground link model.

Gain (dB) at distance d metres under link condition z is
``beta_z - alpha_z * log10(d) + eta`` with log-normal shadowing eta, plus an
optional Rayleigh fading term ``20*log10(|h|)``. Distances are clamped to
1m, the reference distance of beta. SNR combines the gain with transmit and
noise powers in dBm; the achievable rate is log2(1 + SNR) and the effective
rate is capped by the data remaining at the device.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import ChannelConfig
from .world import CityMap


class LinkCondition(Enum):
    LOS = "LoS"
    NLOS = "NLoS"


@dataclass(frozen=True)
class ChannelParams:
    tx_power_dbm: float
    noise_power_dbm: float
    snr_threshold_db: float
    alpha_los: float
    alpha_nlos: float
    beta_los: float
    beta_nlos: float
    shadow_var_los: float
    shadow_var_nlos: float
    fading_enabled: bool
    slot_seconds: float
    data_scale: float

    @property
    def units_per_rate(self) -> float:
        """Data units transferred per unit achievable rate in one slot."""
        return self.slot_seconds * self.data_scale

    @classmethod
    def from_config(cls, cfg: ChannelConfig) -> "ChannelParams":
        return cls(
            tx_power_dbm=cfg.tx_power_dbm,
            noise_power_dbm=cfg.noise_power_dbm,
            snr_threshold_db=cfg.snr_threshold_db,
            alpha_los=cfg.alpha_los,
            alpha_nlos=cfg.alpha_nlos,
            beta_los=cfg.beta_los,
            beta_nlos=cfg.beta_nlos,
            shadow_var_los=cfg.shadow_var_los,
            shadow_var_nlos=cfg.shadow_var_nlos,
            fading_enabled=cfg.fading_enabled,
            slot_seconds=cfg.slot_seconds,
            data_scale=cfg.data_scale,
        )


def los_condition(
    city: CityMap,
    uav_cell: tuple[int, int],
    altitude_m: float,
    device_cell: tuple[int, int],
) -> LinkCondition:
    """Classify the link: NLoS iff the 3-D segment UAV -> device passes
    strictly below the building height of any cell it crosses.

    The segment is split at its grid-line crossings; each open interval is
    checked against the height of the cell it lies over (the segment height
    is linear, so interval endpoints suffice), and each crossing point is
    additionally checked in its floor-assigned cell so that exact corner
    contact counts, matching the dense-sampling limit of the rule.
    """
    c = city.cell_size_m
    p0 = np.array([uav_cell[0] * c, uav_cell[1] * c, altitude_m])
    p1 = np.array([device_cell[0] * c, device_cell[1] * c, 0.0])
    delta = p1 - p0

    def cell_at(coords, snap=1e-9):
        x = min(max(int(np.floor(coords[0] / c + snap)), 0),
                city.length_cells - 1)
        y = min(max(int(np.floor(coords[1] / c + snap)), 0),
                city.width_cells - 1)
        return x, y

    ts = [0.0, 1.0]
    for axis in (0, 1):
        if delta[axis] == 0.0:
            continue
        lo, hi = sorted((p0[axis], p1[axis]))
        for k in range(int(np.ceil(lo / c)), int(np.floor(hi / c)) + 1):
            t = (k * c - p0[axis]) / delta[axis]
            if 0.0 < t < 1.0:
                ts.append(float(t))
    ts = np.unique(ts)
    for t in ts:
        pt = p0 + t * delta
        if pt[2] < city.heights[cell_at(pt)]:
            return LinkCondition.NLOS
    for t0, t1 in zip(ts[:-1], ts[1:]):
        mid = p0 + 0.5 * (t0 + t1) * delta
        z_min = min(p0[2] + t0 * delta[2], p0[2] + t1 * delta[2])
        if z_min < city.heights[cell_at(mid, snap=0.0)]:
            return LinkCondition.NLOS
    return LinkCondition.LOS


def sample_shadowing_db(
    params: ChannelParams, cond: LinkCondition, rng: np.random.Generator
) -> float:
    var = (
        params.shadow_var_los
        if cond is LinkCondition.LOS
        else params.shadow_var_nlos
    )
    if var <= 0:
        return 0.0
    return float(rng.normal(0.0, np.sqrt(var)))


def sample_fading_db(rng: np.random.Generator) -> float:
    """Rayleigh(scale 1) envelope expressed in dB: 20*log10(|h|)."""
    envelope = max(float(rng.rayleigh(1.0)), 1e-12)
    return 20.0 * np.log10(envelope)


def channel_gain(
    params: ChannelParams,
    distance_m: float,
    cond: LinkCondition,
    shadowing_db: float = 0.0,
    fading_db: float = 0.0,
) -> float:
    """Gain in dB; the caller supplies shadowing/fading draws so their
    sampling cadence (per move / per slot) stays under environment control."""
    d = max(distance_m, 1.0)
    if cond is LinkCondition.LOS:
        beta, alpha = params.beta_los, params.alpha_los
    else:
        beta, alpha = params.beta_nlos, params.alpha_nlos
    return beta - alpha * np.log10(d) + shadowing_db + fading_db


def snr_linear(params: ChannelParams, gain_db: float) -> float:
    """Received SNR as a linear ratio."""
    return float(
        10.0 ** ((params.tx_power_dbm + gain_db - params.noise_power_dbm) / 10.0)
    )


def snr_db(value_linear: float) -> float:
    return 10.0 * np.log10(max(value_linear, 1e-300))


def rate(snr_value: float) -> float:
    """Achievable rate log2(1 + SNR), SNR linear."""
    if snr_value < 0:
        raise ValueError(f"snr must be non-negative, got {snr_value}")
    return float(np.log2(1.0 + snr_value))


def effective_rate(rate_value: float, remaining_data: float, params: ChannelParams) -> float:
    """Achievable rate capped so a slot never collects more than remains."""
    if remaining_data < 0:
        raise ValueError(f"remaining data must be non-negative, got {remaining_data}")
    if remaining_data >= rate_value * params.units_per_rate:
        return rate_value
    return remaining_data / params.units_per_rate


def schedule(
    snrs_linear: np.ndarray,
    reachable: np.ndarray,
    remaining_data: np.ndarray,
) -> int | None:
    """Index of the highest-SNR device among reachable ones with data left.

    Ties break to the lowest device index; at most one device is scheduled.
    Returns None when no device qualifies.
    """
    if not (len(snrs_linear) == len(reachable) == len(remaining_data)):
        raise ValueError("per-device arrays must share a length")
    eligible = np.asarray(reachable, dtype=bool) & (np.asarray(remaining_data) > 0)
    if not eligible.any():
        return None
    snrs = np.where(eligible, snrs_linear, -np.inf)
    return int(np.argmax(snrs))  # argmax takes the first maximum


def collect_step(
    params: ChannelParams,
    snrs_linear: np.ndarray,
    reachable: np.ndarray,
    remaining_data: np.ndarray,
) -> tuple[float, int | None, np.ndarray]:
    """One slot of scheduling + data transfer.

    Returns (collected units, scheduled device index or None, new remaining
    data). The collected amount never exceeds the scheduled device's
    remaining data, and only that device's load changes.
    """
    chosen = schedule(snrs_linear, reachable, remaining_data)
    new_remaining = np.array(remaining_data, dtype=float, copy=True)
    if chosen is None:
        return 0.0, None, new_remaining
    achievable = rate(float(snrs_linear[chosen]))
    collected = min(achievable * params.units_per_rate, float(remaining_data[chosen]))
    new_remaining[chosen] -= collected
    return collected, chosen, new_remaining
