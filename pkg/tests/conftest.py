import numpy as np
import pytest

from uavharvest import momdp as md
from uavharvest import world as wd
from uavharvest.channel import ChannelParams
from uavharvest.config import ChannelConfig, MomdpConfig, WorldConfig


def small_world_cfg(**overrides) -> WorldConfig:
    base = dict(
        length_cells=12,
        width_cells=10,
        cell_size_m=20.0,
        building_density=0.2,
        height_min_m=10.0,
        height_max_m=50.0,
        altitude_m=60.0,
        battery=20.0,
        num_devices=3,
        device_min_spacing_m=60.0,
        data_min=50.0,
        data_max=80.0,
        kind="RD",
    )
    base.update(overrides)
    return WorldConfig(**base)


def desk_channel_params(**overrides) -> ChannelParams:
    cfg = ChannelConfig(noise_power_dbm=-4.0, data_scale=1.0, **overrides)
    return ChannelParams.from_config(cfg)


def quiet_channel_params() -> ChannelParams:
    """Deterministic channel: shadowing and fading disabled."""
    return desk_channel_params(shadow_var_los=0.0, shadow_var_nlos=0.0)


def small_momdp_cfg(**overrides) -> MomdpConfig:
    base = dict(gamma=0.99, kmax=6, local_crop=6, global_pool=3, data_norm=80.0)
    base.update(overrides)
    return MomdpConfig(**base)


@pytest.fixture
def scenario() -> wd.Scenario:
    return wd.generate_scenario(small_world_cfg(), seed=5)


@pytest.fixture
def env(scenario) -> md.HarvestEnv:
    return md.HarvestEnv(scenario, quiet_channel_params(), small_momdp_cfg(),
                         altitude_m=60.0)


def make_env(seed=5, *, deterministic=True, **world_overrides) -> md.HarvestEnv:
    scen = wd.generate_scenario(small_world_cfg(**world_overrides), seed=seed)
    params = quiet_channel_params() if deterministic else desk_channel_params()
    return md.HarvestEnv(scen, params, small_momdp_cfg(), altitude_m=60.0)


def random_rollout(env: md.HarvestEnv, rng: np.random.Generator):
    """Drive the env with uniformly random legal actions to termination."""
    rewards = []
    while not env.done:
        legal = np.flatnonzero(env.legal_mask())
        result = env.step(int(rng.choice(legal)))
        rewards.append(result.reward)
    return np.asarray(rewards)
