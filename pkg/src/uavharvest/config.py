"""Run configuration: dataclass sections, TOML loading, strict validation.

The shipped defaults reproduce the reference simulation setup (800m x 600m
grid at 20m cells, 6 devices, battery 80, d=64 attention encoder, etc.).
Smaller desk-scale setups live in ``configs/*.toml`` and only override what
they need.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ConfigError(Exception):
    """Raised for malformed or unknown configuration content."""


@dataclass
class WorldConfig:
    length_cells: int = 40
    width_cells: int = 30
    cell_size_m: float = 20.0
    building_density: float = 0.25
    height_min_m: float = 10.0
    height_max_m: float = 50.0
    altitude_m: float = 60.0
    battery: float = 80.0
    num_devices: int = 6
    device_min_spacing_m: float = 100.0
    data_min: float = 5000.0
    data_max: float = 8000.0
    kind: str = "RD"


@dataclass
class ChannelConfig:
    tx_power_dbm: float = 36.0
    noise_power_dbm: float = -90.0
    snr_threshold_db: float = 5.0
    alpha_los: float = 2.5
    alpha_nlos: float = 3.04
    beta_los: float = -30.0
    beta_nlos: float = -35.0
    shadow_var_los: float = 2.0
    shadow_var_nlos: float = 5.0
    fading_enabled: bool = False
    slot_seconds: float = 1.0
    data_scale: float = 8.0


@dataclass
class MomdpConfig:
    gamma: float = 0.99
    kmax: int = 12
    local_crop: int = 10
    global_pool: int = 5
    data_norm: float = 8000.0


@dataclass
class NetConfig:
    embed_dim: int = 64
    heads: int = 4
    layers: int = 2
    hidden: int = 128
    dtype: str = "float64"


@dataclass
class TrainConfig:
    total_steps: int = 1_500_000
    lr: float = 3e-4
    batch_size: int = 32
    prefs_per_update: int = 3
    gamma: float = 0.99
    h0_frac: float = 0.6
    hfinal_frac: float = 0.3
    tau0: float = 5.0
    tau_final: float = 1.5
    anneal_steps: int = 100_000
    target_rho: float = 0.005
    buffer_capacity: int = 100_000
    warmup_steps: int = 1_000
    eval_every: int = 20_000
    eval_scenarios: int = 20
    w_fixed: list[float] | None = None


@dataclass
class EvalConfig:
    hv_ref: list[float] = field(default_factory=lambda: [-1.0, -200.0])
    greedy_slack_margin: float = 0.0
    greedy_data_epsilon: float = 1.0
    fading_repeats: int = 30
    test_device_counts: list[int] = field(default_factory=lambda: [3, 5, 6, 9, 10])
    test_battery_overrides: dict[str, float] = field(
        default_factory=lambda: {"10": 100.0}
    )
    scenarios_per_condition: int = 100


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    world: WorldConfig = field(default_factory=WorldConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    momdp: MomdpConfig = field(default_factory=MomdpConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "world": WorldConfig,
    "channel": ChannelConfig,
    "momdp": MomdpConfig,
    "net": NetConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _build_section(cls: type, data: dict[str, Any], section: str) -> Any:
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return cls(**data)


def run_config_from_dict(data: dict[str, Any]) -> RunConfig:
    """Build a validated RunConfig; unknown keys anywhere are rejected."""
    data = dict(data)
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section [{name}] must be a table")
        kwargs[name] = _build_section(cls, section, name)
    for scalar in ("seed", "out_dir"):
        if scalar in data:
            kwargs[scalar] = data.pop(scalar)
    if data:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(data))}")
    cfg = RunConfig(**kwargs)
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    w, ch, m, t = cfg.world, cfg.channel, cfg.momdp, cfg.train
    if w.length_cells < 2 or w.width_cells < 2:
        raise ConfigError("grid must be at least 2x2 cells")
    if not 0.0 <= w.building_density < 1.0:
        raise ConfigError("building_density must lie in [0, 1)")
    if w.height_max_m < w.height_min_m or w.height_min_m < 0:
        raise ConfigError("height range must satisfy 0 <= min <= max")
    if w.altitude_m <= w.height_max_m:
        raise ConfigError("altitude must exceed the tallest building")
    if w.kind not in ("RD", "RB"):
        raise ConfigError(f"scenario kind must be RD or RB, got {w.kind!r}")
    if ch.alpha_nlos < ch.alpha_los:
        raise ConfigError("alpha_nlos must be >= alpha_los")
    if min(ch.shadow_var_los, ch.shadow_var_nlos) < 0:
        raise ConfigError("shadowing variances must be non-negative")
    if not 0.0 < t.gamma < 1.0 or not 0.0 < m.gamma < 1.0:
        raise ConfigError("gamma must lie in (0, 1)")
    if t.tau_final > t.tau0:
        raise ConfigError("tau_final must be <= tau0")
    if t.hfinal_frac > t.h0_frac:
        raise ConfigError("hfinal_frac must be <= h0_frac")
    if m.kmax < 1:
        raise ConfigError("kmax must be >= 1")
    if m.local_crop > 2 * min(w.length_cells, w.width_cells) - 1:
        raise ConfigError("local_crop exceeds the centered map extent")
    if cfg.net.dtype not in ("float64", "float32"):
        raise ConfigError("net.dtype must be float64 or float32")
    if t.w_fixed is not None:
        if len(t.w_fixed) != 2 or min(t.w_fixed) < 0 or abs(sum(t.w_fixed) - 1) > 1e-9:
            raise ConfigError("w_fixed must be two non-negative weights summing to 1")


def load_run_config(path: str | Path) -> RunConfig:
    """Load and validate a TOML run configuration file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return run_config_from_dict(data)
