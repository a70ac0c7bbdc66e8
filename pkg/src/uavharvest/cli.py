"""Command-line pipeline: scenario generation, training, evaluation, plots.

Exit codes: 0 success, 2 configuration error, 3 numerical abort during
training. Every command writes its outputs plus a manifest (inputs,
versions, content hashes) under the chosen output directory. Setting the
UAVHARVEST_OUT environment variable reroots relative output paths.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import mosac
from . import plotting
from . import world as wd
from .channel import ChannelParams
from .config import ConfigError, RunConfig, load_run_config

PACKAGE_VERSION = "0.1.0"
OUT_ROOT_ENV = "UAVHARVEST_OUT"


def _resolve_out(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, inputs: dict[str, Path],
                   extra: dict | None = None) -> Path:
    outputs = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[str(p.relative_to(out_dir))] = _sha256(p)
    manifest = {
        "command": command,
        "package_version": PACKAGE_VERSION,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(Path(p))}
            for name, p in inputs.items()
            if p and Path(p).is_file()
        },
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def _load_scenarios(spec: str) -> list[wd.Scenario]:
    path = Path(spec)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise ConfigError(f"no scenario files under {path}")
        return [wd.load_scenario(f) for f in files]
    return [wd.load_scenario(path)]


# --- commands ------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = load_run_config(args.config)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)

    base = wd.generate_scenario(cfg.world, cfg.seed)
    wd.save_scenario(base, out / "scenarios" / "train_base.json")

    eval_set = mosac.fixed_eval_scenarios(base, cfg, cfg.train.eval_scenarios)
    for i, scenario in enumerate(eval_set):
        wd.save_scenario(scenario, out / "scenarios" / "eval" / f"scenario_{i:03d}.json")

    for k in cfg.eval.test_device_counts:
        battery = cfg.eval.test_battery_overrides.get(str(k), cfg.world.battery)
        world_k = dataclasses.replace(cfg.world, num_devices=k, battery=battery)
        seq = np.random.SeedSequence((cfg.seed, k, 0x7E57))
        for i, child in enumerate(seq.spawn(cfg.eval.scenarios_per_condition)):
            scen = wd.generate_scenario(world_k, int(child.generate_state(1)[0]))
            wd.save_scenario(
                scen, out / "scenarios" / f"test_k{k}" / f"scenario_{i:03d}.json"
            )

    write_manifest(out, "gen", {"config": Path(args.config)},
                   {"seed": cfg.seed})
    print(f"scenarios written under {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.steps is not None:
        cfg.train.total_steps = args.steps
    seed = cfg.seed if args.seed is None else args.seed
    out = _resolve_out(args.out)

    eval_scenarios = None
    if args.scenarios:
        eval_scenarios = _load_scenarios(args.scenarios)
    result = mosac.train_run(cfg, args.algo, seed, out,
                             eval_scenarios=eval_scenarios)
    write_manifest(out, "train", {"config": Path(args.config)}, {
        "seed": seed,
        "algo": args.algo,
        "steps": result.steps,
        "final_hypervolume": result.final_eval.get("hypervolume"),
    })
    print(f"trained {args.algo} for {result.steps} steps; "
          f"metrics at {result.metrics_path}")
    return 0


def _build_policy(args, cfg: RunConfig):
    if args.baseline == "greedy":
        return ev.GreedyPreferencePolicy(
            data_epsilon=cfg.eval.greedy_data_epsilon
        ), "greedy"
    if args.baseline == "random":
        return ev.RandomPolicy(np.random.default_rng(cfg.seed)), "random"
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint or --baseline")
    agent, _meta = mosac.load_agent(args.checkpoint)
    return ev.NetPolicy(agent), Path(args.checkpoint).stem


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenarios:
        scenarios = _load_scenarios(args.scenarios)
    else:
        base = wd.generate_scenario(cfg.world, cfg.seed)
        scenarios = mosac.fixed_eval_scenarios(base, cfg, cfg.train.eval_scenarios)
    params = ChannelParams.from_config(cfg.channel)
    if args.fading:
        params = dataclasses.replace(params, fading_enabled=True)
    policy, label = _build_policy(args, cfg)

    table = ev.evaluate(policy, scenarios, params, cfg.momdp,
                        cfg.world.altitude_m)
    table.to_csv(out / "returns.csv")
    ref = tuple(cfg.eval.hv_ref)
    summary = {
        "policy": label,
        "scenario_count": len(scenarios),
        "rows": int(len(scenarios) * len(table.prefs)),
        "averaged_front_hypervolume": ev.averaged_front_hypervolume(table, ref),
        "per_scenario_hypervolume": list(table.per_scenario_hypervolume(ref)),
        "average_utility": table.average_utility(),
        "mean_collected_pct_by_pref": table.mean_collected_pct_by_pref(),
        "mean_energy_by_pref": table.mean_energy_by_pref(),
        "fading_enabled": bool(args.fading),
    }
    if args.robustness:
        summary["fading_robustness"] = ev.fading_robustness(
            policy, scenarios, params, cfg.momdp, cfg.world.altitude_m,
            repeats=cfg.eval.fading_repeats,
        )
    if args.export and hasattr(policy, "record_attention"):
        policy.record_attention = True
        env = ev.HarvestEnv(scenarios[0], params, cfg.momdp, cfg.world.altitude_m)
        for tag, w in (("w10", (1.0, 0.0)), ("w01", (0.0, 1.0))):
            record = ev.rollout(env, policy, w, seed=cfg.seed)
            ev.export_trajectory(record, out / f"trajectory_{tag}.csv")
            if record.attention:
                ev.export_attention(record, out / f"attention_{tag}.csv")
                mats = ev.final_layer_attention(record)
                plotting.plot_attention(
                    mats[0], record.token_labels,
                    out / f"attention_{tag}.svg",
                    title=f"Final-layer attention, w={w}",
                )
            plotting.plot_trajectory(scenarios[0], record.cells,
                                     out / f"trajectory_{tag}.svg",
                                     title=f"Trajectory, w={w}")
        policy.record_attention = False

    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    inputs = {"config": Path(args.config)}
    if args.checkpoint:
        inputs["checkpoint"] = Path(args.checkpoint)
    write_manifest(out, "eval", inputs, {"policy": label})
    print(json.dumps({k: summary[k] for k in
                      ("policy", "averaged_front_hypervolume",
                       "average_utility")}, indent=1))
    return 0


def cmd_plot(args) -> int:
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if args.metrics:
        steps, hvs = [], []
        with open(args.metrics) as fh:
            for row in csv.DictReader(fh):
                steps.append(int(row["step"]))
                hvs.append(float(row["hypervolume"]))
        if not steps:
            raise ConfigError(f"no rows in metrics file {args.metrics}")
        made.append(plotting.plot_curve(steps, hvs, out / "hypervolume.svg"))
    if args.returns:
        by_pref: dict[int, list[tuple[float, float]]] = {}
        with open(args.returns) as fh:
            for row in csv.DictReader(fh):
                by_pref.setdefault(int(row["w_index"]), []).append(
                    (float(row["collected_pct"]), -float(row["energy"]))
                )
        if not by_pref:
            raise ConfigError(f"no rows in returns file {args.returns}")
        points = np.array([
            np.mean(by_pref[wi], axis=0) for wi in sorted(by_pref)
        ])
        front = ev.pareto_front(points)
        dominated = np.array([
            not any(np.allclose(p, f) for f in front) for p in points
        ])
        made.append(plotting.plot_pareto(points, dominated, out / "front.svg",
                                         title="Averaged return points"))
    if args.trajectory:
        if not args.scenario:
            raise ConfigError("--trajectory needs --scenario for the map")
        scenario = wd.load_scenario(args.scenario)
        cells = []
        with open(args.trajectory) as fh:
            for row in csv.DictReader(fh):
                cells.append((int(row["x"]), int(row["y"])))
        if not cells:
            raise ConfigError(f"no rows in trajectory file {args.trajectory}")
        made.append(plotting.plot_trajectory(scenario, cells,
                                             out / "trajectory.svg"))
    if args.attention:
        rows = []
        with open(args.attention) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            labels = header[4:]
            for row in reader:
                rows.append(row)
        if not rows:
            raise ConfigError(f"no rows in attention file {args.attention}")
        last_layer = max(int(r[1]) for r in rows)
        first = [r for r in rows if r[0] == "0" and int(r[1]) == last_layer]
        n = len(labels)
        heads = sorted({int(r[2]) for r in first})
        mat = np.zeros((n, n))
        for head in heads:
            sub = [r for r in first if int(r[2]) == head]
            mat += np.array([[float(v) for v in r[4:]] for r in sub])
        mat /= max(len(heads), 1)
        made.append(plotting.plot_attention(mat, labels, out / "attention.svg",
                                            title="Final-layer attention, step 0"))
    if not made:
        raise ConfigError("plot: no inputs given "
                          "(--metrics/--returns/--trajectory/--attention)")
    write_manifest(out, "plot", {})
    for p in made:
        print(f"wrote {p}")
    return 0


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavharvest",
        description="UAV data-harvesting simulator and multi-objective trainer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate and persist scenario batches")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", default="runs/gen")
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="run MOSAC training")
    train.add_argument("--config", required=True)
    train.add_argument("--algo", choices=[mosac.ALGO_ATTENTION,
                                          mosac.ALGO_FEEDFORWARD],
                       default=mosac.ALGO_ATTENTION)
    train.add_argument("--seed", type=int, default=None,
                       help="training seed (defaults to the config seed)")
    train.add_argument("--steps", type=int, default=None,
                       help="override train.total_steps")
    train.add_argument("--scenarios", default=None,
                       help="directory of evaluation scenario files")
    train.add_argument("--out", default="runs/train")
    train.set_defaults(func=cmd_train)

    evalp = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    evalp.add_argument("--config", required=True)
    evalp.add_argument("--checkpoint", default=None)
    evalp.add_argument("--baseline", choices=["greedy", "random"], default=None)
    evalp.add_argument("--scenarios", default=None)
    evalp.add_argument("--fading", action="store_true",
                       help="enable Rayleigh fading during evaluation")
    evalp.add_argument("--robustness", action="store_true",
                       help="run the repeated fading-robustness protocol")
    evalp.add_argument("--export", action="store_true",
                       help="export trajectory/attention for extreme preferences")
    evalp.add_argument("--out", default="runs/eval")
    evalp.set_defaults(func=cmd_eval)

    plot = sub.add_parser("plot", help="emit SVG figures from result files")
    plot.add_argument("--metrics", default=None)
    plot.add_argument("--returns", default=None)
    plot.add_argument("--trajectory", default=None)
    plot.add_argument("--scenario", default=None)
    plot.add_argument("--attention", default=None)
    plot.add_argument("--out", default="runs/plot")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except wd.ScenarioFormatError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except mosac.TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
