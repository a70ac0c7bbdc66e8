import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavharvest import momdp as md
from uavharvest import world as wd
from uavharvest.momdp import HarvestEnv, MaskedActionError
from uavharvest.world import Action

from conftest import (
    desk_channel_params,
    make_env,
    quiet_channel_params,
    random_rollout,
    small_momdp_cfg,
    small_world_cfg,
)


class TestResetAndStep:
    def test_reset_state(self, env):
        env.reset(seed=0)
        assert env.uav.position == env.city.start
        assert env.uav.battery == env.scenario.battery
        assert np.array_equal(env.remaining_data,
                              [d.initial_data for d in env.scenario.devices])

    def test_paper_battery_capacity(self):
        env = make_env(battery=80.0)
        env.reset()
        assert env.uav.battery == 80.0

    def test_rb_starts_at_terminal(self):
        env = make_env(kind="RB")
        env.reset()
        assert env.uav.position == env.city.terminal

    def test_re_reset_identical(self, env):
        env.reset(seed=3)
        first = (env.uav, env.remaining_data.copy(), env.snrs_db.copy())
        random_rollout(env, np.random.default_rng(0))
        env.reset(seed=3)
        assert env.uav == first[0]
        assert np.array_equal(env.remaining_data, first[1])
        assert np.array_equal(env.snrs_db, first[2])

    def test_hover_out_of_range_reward(self):
        params = dataclasses.replace(quiet_channel_params(),
                                     snr_threshold_db=1000.0)
        scen = wd.generate_scenario(small_world_cfg(), seed=5)
        env = HarvestEnv(scen, params, small_momdp_cfg(), altitude_m=60.0)
        env.reset(seed=0)
        result = env.step(Action.HOVER)
        assert result.reward.tolist() == [0.0, -0.5]

    def test_move_costs_one_unit(self):
        params = dataclasses.replace(quiet_channel_params(),
                                     snr_threshold_db=1000.0)
        scen = wd.generate_scenario(small_world_cfg(), seed=5)
        env = HarvestEnv(scen, params, small_momdp_cfg(), altitude_m=60.0)
        env.reset(seed=0)
        legal_moves = [a for a in Action if a != Action.HOVER
                       and env.legal_mask()[a]]
        result = env.step(legal_moves[0])
        assert result.reward.tolist() == [0.0, -1.0]

    def test_episode_reward_telescopes(self, env):
        env.reset(seed=11)
        b0 = env.uav.battery
        rewards = random_rollout(env, np.random.default_rng(2))
        totals = rewards.sum(axis=0)
        assert totals[0] == pytest.approx(env.collected_total)
        assert -totals[1] == pytest.approx(b0 - env.uav.battery)
        dev_loss = env._initial_data.sum() - env.remaining_data.sum()
        assert totals[0] == pytest.approx(dev_loss)

    def test_masked_action_rejected(self, env):
        env.reset(seed=0)
        mask = env.legal_mask()
        if mask.all():
            # drain battery until something is masked
            while env.legal_mask().all() and not env.done:
                env.step(Action.HOVER)
        illegal = int(np.flatnonzero(~env.legal_mask())[0])
        with pytest.raises(MaskedActionError):
            env.step(illegal)

    def test_done_on_terminal_arrival(self, env):
        env.reset(seed=0)
        random_rollout(env, np.random.default_rng(0))
        assert env.done
        assert env.uav.position == env.city.terminal
        assert env.uav.battery >= 0

    def test_deterministic_replay_with_shadowing(self):
        scen = wd.generate_scenario(small_world_cfg(), seed=5)
        traces = []
        for _ in range(2):
            env = HarvestEnv(scen, desk_channel_params(), small_momdp_cfg(),
                             altitude_m=60.0)
            env.reset(seed=77)
            rewards = random_rollout(env, np.random.default_rng(4))
            traces.append(rewards)
        assert np.array_equal(traces[0], traces[1])

    def test_shadowing_held_during_hover(self):
        scen = wd.generate_scenario(small_world_cfg(), seed=5)
        env = HarvestEnv(scen, desk_channel_params(), small_momdp_cfg(),
                         altitude_m=60.0)
        env.reset(seed=1)
        before = env._shadowing.copy()
        if env.legal_mask()[Action.HOVER]:
            env.step(Action.HOVER)
            assert np.array_equal(env._shadowing, before)
        move = [a for a in Action if a != Action.HOVER
                and env.legal_mask()[a]][0]
        env.step(move)
        assert not np.array_equal(env._shadowing, before)


class TestFtvState:
    def test_length_is_4_plus_5k(self):
        env = make_env(num_devices=3)
        assert md.ftv_state(env).shape == (4 + 5 * 3,)
        env6 = make_env(
            length_cells=40, width_cells=30, num_devices=6,
            device_min_spacing_m=100.0, battery=80.0,
        )
        assert md.ftv_state(env6).shape == (34,)

    def test_zero_distance_at_terminal(self, env):
        env.reset(seed=0)
        random_rollout(env, np.random.default_rng(1))
        fv = md.ftv_state(env)
        assert fv[2] == 0.0 and fv[3] == 0.0

    def test_device_permutation_changes_vector(self, env):
        fv = md.ftv_state(env)
        permuted = dataclasses.replace(
            env.scenario, devices=tuple(reversed(env.scenario.devices))
        )
        env2 = HarvestEnv(permuted, quiet_channel_params(), small_momdp_cfg(),
                          altitude_m=60.0)
        fv2 = md.ftv_state(env2)
        assert not np.array_equal(fv, fv2)
        # same multiset of device blocks, different order
        blocks = np.array(sorted(fv[4:].reshape(-1, 5).tolist()))
        blocks2 = np.array(sorted(fv2[4:].reshape(-1, 5).tolist()))
        assert np.allclose(blocks, blocks2)


class TestSpatialMaps:
    def test_spatial_layers(self, env):
        layers = md.spatial_state(env)
        assert layers.shape == (4, env.city.length_cells, env.city.width_cells)
        assert layers[md.LAYER_UAV].sum() == 1.0
        assert layers[md.LAYER_ZONES][env.city.start] == 1.0
        assert layers[md.LAYER_ZONES][env.city.terminal] == -1.0
        data_cells = np.argwhere(layers[md.LAYER_DATA] > 0)
        device_cells = {d.position for d in env.scenario.devices}
        assert {tuple(c) for c in data_cells} <= device_cells

    def test_center_places_uav_centrally(self, env):
        layers = md.spatial_state(env)
        centered = md.f_center(layers)
        length, width = env.city.length_cells, env.city.width_cells
        assert centered.shape == (4, 2 * length - 1, 2 * width - 1)
        assert centered[md.LAYER_UAV, length - 1, width - 1] == 1.0
        assert centered[md.LAYER_UAV].sum() == 1.0

    def test_center_pads_heights_with_max(self):
        env = make_env()
        layers = md.spatial_state(env)
        centered = md.f_center(layers)
        length, width = env.city.length_cells, env.city.width_cells
        x0 = length - 1 - env.uav.position[0]
        y0 = width - 1 - env.uav.position[1]
        frame = np.ones_like(centered[md.LAYER_HEIGHTS], dtype=bool)
        frame[x0 : x0 + length, y0 : y0 + width] = False
        assert (centered[md.LAYER_HEIGHTS][frame] == env.city.max_height).all()
        for layer in (md.LAYER_ZONES, md.LAYER_DATA, md.LAYER_UAV):
            assert (centered[layer][frame] == 0).all()

    def test_local_crop_centered_on_uav(self, env):
        centered = md.f_center(md.spatial_state(env))
        for crop in (6, 10, 5):
            local = md.f_local(centered, crop)
            assert local.shape == (4, crop, crop)
            cx = (crop - 1) // 2
            assert local[md.LAYER_UAV, cx, cx] == 1.0

    def test_local_full_size_is_identity(self, env):
        centered = md.f_center(md.spatial_state(env))
        full = min(centered.shape[1], centered.shape[2])
        local = md.f_local(centered, full)
        assert local.shape[1] == full

    def test_global_pool_identity_when_one(self, env):
        centered = md.f_center(md.spatial_state(env))
        pooled = md.f_global(centered, 1)
        assert np.array_equal(pooled, centered)

    def test_global_pool_constant_layer(self):
        layers = np.full((1, 9, 7), 3.5)
        pooled = md.f_global(layers, 5)
        assert pooled.shape == (1, 2, 2)
        assert np.allclose(pooled, 3.5)

    def test_global_pool_partial_window_average(self):
        layers = np.arange(12, dtype=float).reshape(1, 3, 4)
        pooled = md.f_global(layers, 2)
        assert pooled.shape == (1, 2, 2)
        assert pooled[0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)
        # trailing row window covers a single row
        assert pooled[0, 1, 0] == pytest.approx((8 + 9) / 2)


class TestTokenState:
    def test_mask_counts_real_devices(self, env):
        ts = md.token_state(env, (0.5, 0.5), kmax=6)
        assert ts.mask.sum() == env.scenario.num_devices
        assert ts.devices.shape == (6, 5)
        assert (ts.devices[ts.mask.sum():] == 0).all()
        assert ts.num_tokens == 9

    def test_preference_token_order(self, env):
        ts = md.token_state(env, (0.7, 0.3))
        assert ts.preference.tolist() == [0.7, 0.3]

    def test_local_map_token_size(self, env):
        ts = md.token_state(env, (0.5, 0.5), local_crop=6)
        assert ts.local_map.shape == (2 * 6 * 6,)

    def test_excess_devices_drop_lowest_snr(self):
        env = make_env(num_devices=5, device_min_spacing_m=40.0)
        ts = md.token_state(env, (0.5, 0.5), kmax=3)
        assert ts.mask.all()
        kept_snrs = sorted(ts.devices[:, 3], reverse=True)
        all_snrs = sorted(md.device_features(env)[:, 3], reverse=True)
        assert kept_snrs == pytest.approx(all_snrs[:3])

    def test_permutation_equivariance(self, env):
        ts = md.token_state(env, (0.5, 0.5), kmax=6)
        perm = [2, 0, 1]
        permuted = dataclasses.replace(
            env.scenario,
            devices=tuple(env.scenario.devices[i] for i in perm),
        )
        env2 = HarvestEnv(permuted, quiet_channel_params(), small_momdp_cfg(),
                          altitude_m=60.0)
        ts2 = md.token_state(env2, (0.5, 0.5), kmax=6)
        k = len(perm)
        assert np.allclose(ts2.devices[:k], ts.devices[:k][perm])
        assert np.array_equal(ts2.mask, ts.mask)
        assert np.allclose(ts2.uav, ts.uav)
        assert np.allclose(ts2.local_map, ts.local_map)

    def test_rejects_bad_preference(self, env):
        with pytest.raises(ValueError):
            md.token_state(env, (0.7, 0.7))


class TestScalarizeAndPareto:
    def test_figure_caption_values(self):
        assert md.scalarize((77.0, -78.5), (1.0, 0.0)) == 77.0
        assert md.scalarize((68.0, -48.0), (0.5, 0.5)) == 10.0

    def test_energy_only_ignores_data(self):
        assert md.scalarize((123.0, -7.0), (0.0, 1.0)) == -7.0

    @given(
        st.lists(st.floats(-50, 50), min_size=2, max_size=2),
        st.lists(st.floats(-50, 50), min_size=2, max_size=2),
        st.floats(-3, 3), st.floats(-3, 3),
        st.floats(0, 1),
    )
    @settings(max_examples=80)
    def test_scalarize_linear(self, v1, v2, a, b, w0):
        w = np.array([w0, 1 - w0])
        left = md.scalarize(a * np.array(v1) + b * np.array(v2), w)
        right = a * md.scalarize(np.array(v1), w) + b * md.scalarize(
            np.array(v2), w
        )
        assert left == pytest.approx(right, abs=1e-9)

    def test_dominance_basics(self):
        assert md.pareto_dominates((2, 2), (1, 1))
        assert not md.pareto_dominates((2, 1), (1, 2))
        assert not md.pareto_dominates((1, 2), (2, 1))
        assert not md.pareto_dominates((1, 1), (1, 1))

    @given(st.lists(
        st.tuples(st.integers(-5, 5), st.integers(-5, 5)),
        min_size=3, max_size=3,
    ))
    @settings(max_examples=120)
    def test_dominance_strict_partial_order(self, pts):
        a, b, c = (np.array(p, dtype=float) for p in pts)
        assert not md.pareto_dominates(a, a)
        if md.pareto_dominates(a, b) and md.pareto_dominates(b, c):
            assert md.pareto_dominates(a, c)
        if md.pareto_dominates(a, b):
            assert not md.pareto_dominates(b, a)


class TestEpisodeReturn:
    def test_gamma_one_matches_sum(self):
        rewards = np.array([[1.0, -1.0], [2.0, -0.5], [0.0, -1.0]])
        ret = md.episode_return(rewards, gamma=1.0)
        assert np.allclose(ret.undiscounted, ret.discounted)

    def test_discounting(self):
        rewards = np.array([[1.0, 0.0], [1.0, 0.0]])
        ret = md.episode_return(rewards, gamma=0.5)
        assert ret.discounted[0] == pytest.approx(1.5)
        assert ret.undiscounted[0] == pytest.approx(2.0)
