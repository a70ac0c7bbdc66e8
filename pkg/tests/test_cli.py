import json
from pathlib import Path

import numpy as np
import pytest

from uavharvest import world as wd
from uavharvest.cli import main

CONFIG = """
seed = 5
[world]
length_cells = 8
width_cells = 6
battery = 12.0
num_devices = 2
device_min_spacing_m = 40.0
building_density = 0.1
data_min = 20.0
data_max = 30.0
[channel]
noise_power_dbm = -4.0
data_scale = 1.0
shadow_var_los = 0.0
shadow_var_nlos = 0.0
[momdp]
kmax = 3
local_crop = 3
data_norm = 30.0
[net]
embed_dim = 16
heads = 2
layers = 2
hidden = 16
dtype = "float32"
[train]
total_steps = 60
warmup_steps = 20
batch_size = 8
prefs_per_update = 2
eval_every = 60
eval_scenarios = 2
[eval]
test_device_counts = [2, 3]
scenarios_per_condition = 2
[eval.test_battery_overrides]
3 = 14.0
"""


@pytest.fixture
def config_path(tmp_path) -> Path:
    path = tmp_path / "run.toml"
    path.write_text(CONFIG)
    return path


class TestGen:
    def test_writes_scenario_batches(self, config_path, tmp_path):
        out = tmp_path / "gen"
        assert main(["gen", "--config", str(config_path),
                     "--out", str(out)]) == 0
        assert (out / "scenarios" / "train_base.json").exists()
        assert len(list((out / "scenarios" / "eval").glob("*.json"))) == 2
        assert len(list((out / "scenarios" / "test_k2").glob("*.json"))) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "gen"
        assert manifest["outputs"]

    def test_battery_override_applies(self, config_path, tmp_path):
        out = tmp_path / "gen"
        main(["gen", "--config", str(config_path), "--out", str(out)])
        k3 = wd.load_scenario(out / "scenarios" / "test_k3" / "scenario_000.json")
        k2 = wd.load_scenario(out / "scenarios" / "test_k2" / "scenario_000.json")
        assert k3.battery == 14.0 and k3.num_devices == 3
        assert k2.battery == 12.0 and k2.num_devices == 2

    def test_rerun_is_identical(self, config_path, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["gen", "--config", str(config_path), "--out", str(out1)])
        main(["gen", "--config", str(config_path), "--out", str(out2)])
        f1 = out1 / "scenarios" / "train_base.json"
        f2 = out2 / "scenarios" / "train_base.json"
        assert f1.read_bytes() == f2.read_bytes()

    def test_unknown_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[world]\nnot_a_key = 3\n")
        assert main(["gen", "--config", str(bad),
                     "--out", str(tmp_path / "x")]) == 2


@pytest.mark.slow
class TestTrainEvalPlot:
    def test_pipeline(self, config_path, tmp_path):
        train_out = tmp_path / "train"
        code = main(["train", "--config", str(config_path), "--algo",
                     "mosac-att", "--seed", "3", "--steps", "60",
                     "--out", str(train_out)])
        assert code == 0
        metrics = train_out / "metrics.csv"
        assert metrics.exists()
        checkpoint = train_out / "checkpoint_final.npz"
        assert checkpoint.exists()

        eval_out = tmp_path / "eval"
        code = main(["eval", "--config", str(config_path), "--checkpoint",
                     str(checkpoint), "--out", str(eval_out), "--export"])
        assert code == 0
        summary = json.loads((eval_out / "summary.json").read_text())
        assert summary["rows"] == 2 * 11
        assert (eval_out / "returns.csv").exists()
        assert (eval_out / "trajectory_w10.csv").exists()
        assert (eval_out / "attention_w10.csv").exists()
        assert (eval_out / "attention_w10.svg").exists()

        plot_out = tmp_path / "plots"
        code = main(["plot", "--metrics", str(metrics),
                     "--returns", str(eval_out / "returns.csv"),
                     "--attention", str(eval_out / "attention_w10.csv"),
                     "--out", str(plot_out)])
        assert code == 0
        assert (plot_out / "hypervolume.svg").exists()
        assert (plot_out / "front.svg").exists()
        assert (plot_out / "attention.svg").exists()

    def test_zero_steps_emits_initial_checkpoint(self, config_path, tmp_path):
        out = tmp_path / "t0"
        assert main(["train", "--config", str(config_path), "--steps", "0",
                     "--out", str(out)]) == 0
        assert (out / "checkpoint_init.npz").exists()

    def test_ftv_algo_flag(self, config_path, tmp_path):
        out = tmp_path / "ftv"
        assert main(["train", "--config", str(config_path), "--algo",
                     "mosac-ftv", "--steps", "40", "--out", str(out)]) == 0


class TestEvalBaselines:
    def test_greedy_needs_no_checkpoint(self, config_path, tmp_path):
        out = tmp_path / "greedy"
        code = main(["eval", "--config", str(config_path), "--baseline",
                     "greedy", "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["policy"] == "greedy"
        assert summary["rows"] == 22

    def test_eval_without_policy_exits_2(self, config_path, tmp_path):
        assert main(["eval", "--config", str(config_path),
                     "--out", str(tmp_path / "none")]) == 2

    def test_deterministic_outputs(self, config_path, tmp_path):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            main(["eval", "--config", str(config_path), "--baseline",
                  "greedy", "--out", str(out)])
            outs.append((out / "returns.csv").read_bytes())
        assert outs[0] == outs[1]


class TestPlotErrors:
    def test_no_inputs_exits_2(self, tmp_path):
        assert main(["plot", "--out", str(tmp_path / "p")]) == 2

    def test_empty_metrics_exits_2(self, tmp_path):
        empty = tmp_path / "metrics.csv"
        empty.write_text("step,hypervolume\n")
        assert main(["plot", "--metrics", str(empty),
                     "--out", str(tmp_path / "p")]) == 2


class TestOutputRootOverride:
    def test_env_var_reroots_relative_paths(self, config_path, tmp_path,
                                            monkeypatch):
        monkeypatch.setenv("UAVHARVEST_OUT", str(tmp_path / "root"))
        assert main(["gen", "--config", str(config_path),
                     "--out", "nested/gen"]) == 0
        assert (tmp_path / "root" / "nested" / "gen" / "manifest.json").exists()
