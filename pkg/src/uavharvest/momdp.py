"""MOMDP wrapper: vector rewards, episode stepping, state representations.

The two objectives are (data collected this slot, -energy consumed this
slot). A preference vector w on the 2-simplex scalarizes vector values as
w . V. Three observation builders are provided: the flat feature vector
(FTV), the centered global/local spatial maps, and the token set consumed
by the attention encoder.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import world as wd
from .config import MomdpConfig
from .world import Action, CityMap, Scenario, UavState

NUM_OBJECTIVES = 2
UAV_TOKEN_DIM = 4
DEVICE_TOKEN_DIM = 5

# Spatial-state layer indices.
LAYER_HEIGHTS = 0
LAYER_ZONES = 1
LAYER_DATA = 2
LAYER_UAV = 3


class MaskedActionError(Exception):
    """An action forbidden by the safety controller was executed."""


class EpisodeOverError(Exception):
    """step() was called on a finished episode."""


def validate_preference(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (NUM_OBJECTIVES,) or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"preference must be {NUM_OBJECTIVES} non-negative "
                         f"weights summing to 1, got {w}")
    return w


def scalarize(values, w) -> float:
    """Linear scalarization w . V."""
    values = np.asarray(values, dtype=float)
    w = np.asarray(w, dtype=float)
    if values.shape != w.shape:
        raise ValueError(f"shape mismatch: {values.shape} vs {w.shape}")
    return float(values @ w)


def pareto_dominates(va, vb) -> bool:
    """True iff va >= vb componentwise with at least one strict improvement."""
    va = np.asarray(va, dtype=float)
    vb = np.asarray(vb, dtype=float)
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch: {va.shape} vs {vb.shape}")
    return bool((va >= vb).all() and (va > vb).any())


@dataclass(frozen=True)
class MultiObjectiveReturn:
    undiscounted: np.ndarray
    discounted: np.ndarray


def episode_return(rewards: np.ndarray, gamma: float) -> MultiObjectiveReturn:
    rewards = np.asarray(rewards, dtype=float).reshape(-1, NUM_OBJECTIVES)
    factors = gamma ** np.arange(len(rewards))
    return MultiObjectiveReturn(
        undiscounted=rewards.sum(axis=0),
        discounted=(rewards * factors[:, None]).sum(axis=0),
    )


@dataclass
class TokenState:
    """Set-style state: UAV token, device tokens with validity mask,
    preference token, flattened local-map token."""

    uav: np.ndarray          # (4,)
    devices: np.ndarray      # (kmax, 5), masked-off slots zero-filled
    mask: np.ndarray         # (kmax,) bool, True marks a real device
    preference: np.ndarray   # (2,)
    local_map: np.ndarray    # (2 * l * l,)

    @property
    def num_tokens(self) -> int:
        return self.devices.shape[0] + 3


@dataclass
class StepResult:
    reward: np.ndarray
    done: bool
    info: dict = field(default_factory=dict)


class HarvestEnv:
    """Single-owner episode environment over world + channel.

    All stochasticity (shadowing, fading, nothing else) flows from the
    Generator handed to reset(), so replays are bit-identical per seed.
    """

    def __init__(
        self,
        scenario: Scenario,
        params: ch.ChannelParams,
        cfg: MomdpConfig,
        altitude_m: float,
    ):
        if altitude_m <= scenario.city.max_height:
            raise ValueError(
                f"altitude {altitude_m}m must exceed the tallest building "
                f"({scenario.city.max_height}m)"
            )
        scenario.validate()
        self.scenario = scenario
        self.params = params
        self.cfg = cfg
        self.altitude_m = altitude_m
        self.city: CityMap = scenario.city
        self._dev_cells = np.array([d.position for d in scenario.devices])
        self._initial_data = np.array([d.initial_data for d in scenario.devices])
        self.max_steps = int(round(2 * scenario.battery))
        self.rng = np.random.default_rng(0)
        self.reset()

    # -- episode control -----------------------------------------------------

    def reset(self, seed: int | None = None) -> None:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.uav = UavState(
            position=self.city.start,
            altitude_m=self.altitude_m,
            battery_half=int(round(2 * self.scenario.battery)),
        )
        self.remaining_data = self._initial_data.copy()
        self.steps = 0
        self.done = False
        self.collected_total = 0.0
        self.energy_total = 0.0
        self._resample_shadowing()
        self._refresh_channel()

    def _resample_shadowing(self) -> None:
        self._conditions = [
            ch.los_condition(self.city, self.uav.position, self.altitude_m, tuple(cell))
            for cell in self._dev_cells
        ]
        self._shadowing = np.array([
            ch.sample_shadowing_db(self.params, cond, self.rng)
            for cond in self._conditions
        ])

    def _refresh_channel(self) -> None:
        c = self.city.cell_size_m
        diffs = self._dev_cells - np.array(self.uav.position)
        dists = c * np.hypot(diffs[:, 0], diffs[:, 1])
        fading = (
            np.array([ch.sample_fading_db(self.rng) for _ in self._dev_cells])
            if self.params.fading_enabled
            else np.zeros(len(self._dev_cells))
        )
        self.gains_db = np.array([
            ch.channel_gain(self.params, d, cond, shadow, fade)
            for d, cond, shadow, fade in zip(
                dists, self._conditions, self._shadowing, fading
            )
        ])
        self.snrs_linear = np.array([
            ch.snr_linear(self.params, g) for g in self.gains_db
        ])
        self.snrs_db = np.array([ch.snr_db(s) for s in self.snrs_linear])
        self.reachable = self.snrs_db >= self.params.snr_threshold_db

    def legal_mask(self) -> np.ndarray:
        return wd.legal_actions(self.uav, self.city)

    def step(self, action: Action | int) -> StepResult:
        """Advance one slot: move, resample shadowing on movement, schedule
        the best reachable device, collect. Done once the UAV sits on the
        terminal cell (a hard cap of 2B steps guards buggy policies)."""
        if self.done:
            raise EpisodeOverError("episode already finished")
        action = int(action)
        if not self.legal_mask()[action]:
            raise MaskedActionError(
                f"action {Action(action).name} masked at {self.uav.position} "
                f"with battery {self.uav.battery}"
            )
        prev_half = self.uav.battery_half
        self.uav = wd.apply_action(self.uav, action)
        energy = (prev_half - self.uav.battery_half) / 2.0
        if action != Action.HOVER:
            self._resample_shadowing()
        self._refresh_channel()
        collected, chosen, self.remaining_data = ch.collect_step(
            self.params, self.snrs_linear, self.reachable, self.remaining_data
        )
        self.steps += 1
        self.collected_total += collected
        self.energy_total += energy
        at_terminal = self.uav.position == self.city.terminal
        truncated = not at_terminal and self.steps >= self.max_steps
        self.done = at_terminal or truncated
        reward = np.array([collected, -energy])
        return StepResult(
            reward=reward,
            done=self.done,
            info={
                "scheduled": chosen,
                "collected": collected,
                "energy": energy,
                "truncated": truncated,
            },
        )

    # -- derived quantities ---------------------------------------------------

    @property
    def battery_norm(self) -> float:
        return max(self.scenario.battery, 1e-9)

    @property
    def distance_norm(self) -> float:
        return float(max(self.city.length_cells, self.city.width_cells))

    def min_battery(self) -> float:
        return wd.min_battery_to_terminal(self.uav.position, self.city)

    def collected_fraction(self) -> float:
        total = self.scenario.total_data
        return self.collected_total / total if total > 0 else 0.0


def _snr_feature(snrs_linear: np.ndarray) -> np.ndarray:
    logs = np.log10(np.maximum(snrs_linear, 1e-30))
    return np.clip(logs, -1.0, 8.0) / 8.0


def ftv_state(env: HarvestEnv) -> np.ndarray:
    """Flat feature vector [uav, dev_1, ..., dev_K], length 4 + 5K.

    Order-sensitive by construction; this is the baseline representation.
    """
    out = np.empty(UAV_TOKEN_DIM + DEVICE_TOKEN_DIM * len(env._dev_cells))
    out[:UAV_TOKEN_DIM] = uav_features(env)
    out[UAV_TOKEN_DIM:] = device_features(env).reshape(-1)
    return out


def uav_features(env: HarvestEnv) -> np.ndarray:
    x, y = env.uav.position
    fx, fy = env.city.terminal
    return np.array([
        env.min_battery() / env.battery_norm,
        env.uav.battery / env.battery_norm,
        (fx - x) / env.distance_norm,
        (fy - y) / env.distance_norm,
    ])


def device_features(env: HarvestEnv) -> np.ndarray:
    x, y = env.uav.position
    feats = np.zeros((len(env._dev_cells), DEVICE_TOKEN_DIM))
    feats[:, 0] = (env._dev_cells[:, 0] - x) / env.distance_norm
    feats[:, 1] = (env._dev_cells[:, 1] - y) / env.distance_norm
    feats[:, 2] = env.remaining_data / max(env.cfg.data_norm, 1e-9)
    feats[:, 3] = _snr_feature(env.snrs_linear)
    feats[:, 4] = env.reachable.astype(float)
    return feats


def spatial_state(env: HarvestEnv) -> np.ndarray:
    """Stacked L x W layers: heights, start/terminal zones (+1/-1),
    remaining data at device cells, UAV position one-hot."""
    city = env.city
    layers = np.zeros((4, city.length_cells, city.width_cells))
    layers[LAYER_HEIGHTS] = city.heights
    layers[LAYER_ZONES][city.start] += 1.0
    layers[LAYER_ZONES][city.terminal] -= 1.0
    for cell, data in zip(env._dev_cells, env.remaining_data):
        layers[LAYER_DATA][tuple(cell)] += data
    layers[LAYER_UAV][env.uav.position] = 1.0
    return layers


def f_center(layers: np.ndarray) -> np.ndarray:
    """Recenter all layers on the UAV one-hot; output (2L-1) x (2W-1).

    Out-of-map padding is the tallest-building height on the height layer
    and zero elsewhere.
    """
    _, length, width = layers.shape
    hot = np.argwhere(layers[LAYER_UAV] == 1.0)
    if len(hot) != 1:
        raise ValueError(f"UAV layer must contain exactly one cell, got {len(hot)}")
    ux, uy = (int(v) for v in hot[0])
    out = np.zeros((layers.shape[0], 2 * length - 1, 2 * width - 1))
    out[LAYER_HEIGHTS] = layers[LAYER_HEIGHTS].max(initial=0.0)
    x0 = length - 1 - ux
    y0 = width - 1 - uy
    out[:, x0 : x0 + length, y0 : y0 + width] = layers
    return out


def f_local(centered: np.ndarray, crop: int) -> np.ndarray:
    """Central crop of size crop x crop (floor-aligned for even sizes)."""
    _, length, width = centered.shape
    if crop > min(length, width):
        raise ValueError(f"crop {crop} exceeds centered extent {(length, width)}")
    cx, cy = (length - 1) // 2, (width - 1) // 2
    x0 = cx - (crop - 1) // 2
    y0 = cy - (crop - 1) // 2
    return centered[:, x0 : x0 + crop, y0 : y0 + crop]


def f_global(centered: np.ndarray, pool: int) -> np.ndarray:
    """Non-overlapping pool x pool average pooling per layer; trailing
    partial windows are averaged over their actual coverage."""
    if pool < 1:
        raise ValueError(f"pool size must be >= 1, got {pool}")
    layers, length, width = centered.shape
    out_l = -(-length // pool)
    out_w = -(-width // pool)
    out = np.zeros((layers, out_l, out_w))
    for i in range(out_l):
        for j in range(out_w):
            window = centered[:, i * pool : (i + 1) * pool, j * pool : (j + 1) * pool]
            out[:, i, j] = window.mean(axis=(1, 2))
    return out


def token_state(
    env: HarvestEnv,
    w,
    kmax: int | None = None,
    local_crop: int | None = None,
) -> TokenState:
    """Token set {uav, device_1..kmax, w, local map} with a validity mask.

    If more than kmax devices exist, the kmax with highest SNR are kept (in
    original index order). The local-map token is the UAV-centered crop of
    the height and data layers, normalized and flattened.
    """
    kmax = env.cfg.kmax if kmax is None else kmax
    crop = env.cfg.local_crop if local_crop is None else local_crop
    w = validate_preference(w)

    feats = device_features(env)
    k = len(feats)
    if k > kmax:
        order = np.argsort(-env.snrs_linear, kind="stable")[:kmax]
        keep = np.sort(order)
        feats = feats[keep]
        k = kmax
    devices = np.zeros((kmax, DEVICE_TOKEN_DIM))
    devices[:k] = feats
    mask = np.zeros(kmax, dtype=bool)
    mask[:k] = True

    centered = f_center(spatial_state(env))
    local = f_local(centered, crop)
    h_norm = max(env.city.max_height, 1.0)
    lm = np.concatenate([
        (local[LAYER_HEIGHTS] / h_norm).reshape(-1),
        (local[LAYER_DATA] / max(env.cfg.data_norm, 1e-9)).reshape(-1),
    ])
    return TokenState(
        uav=uav_features(env),
        devices=devices,
        mask=mask,
        preference=w,
        local_map=lm,
    )
