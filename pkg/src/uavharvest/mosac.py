"""Multi-objective discrete soft actor-critic.

One gradient update per environment step: twin vector-valued critics regress
on an entropy-regularized target, the actor minimizes
pi^T (nu * log pi - w^T Q), and the entropy coefficient nu tracks an
annealed entropy target. Behavior actions come from a heated softmax whose
temperature anneals linearly; losses always use the tau = 1 policy.
Preferences are sampled fresh per update (J per batch) and per episode for
acting, so a single model covers the whole preference space.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import evaluation as ev
from . import momdp as md
from . import nets
from . import world as wd
from .autodiff import Tensor
from .channel import ChannelParams
from .config import RunConfig, TrainConfig
from .momdp import NUM_OBJECTIVES, HarvestEnv
from .nets import AttentionNetwork, EncoderConfig, FeedforwardNetwork
from .world import NUM_ACTIONS

ALGO_ATTENTION = "mosac-att"
ALGO_FEEDFORWARD = "mosac-ftv"
H_MAX = float(np.log(NUM_ACTIONS))


class TrainingDiverged(Exception):
    """A loss became non-finite; diagnostics are dumped next to the run."""


def sample_preferences(count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the 2-simplex, one row per preference."""
    if count < 1:
        raise ValueError("count must be >= 1")
    first = rng.uniform(0.0, 1.0, size=count)
    return np.stack([first, 1.0 - first], axis=1)


def entropy_target(step: int, cfg: TrainConfig) -> float:
    """Linear anneal from h0 to hfinal over anneal_steps, then constant."""
    frac = min(max(step, 0) / cfg.anneal_steps, 1.0)
    h0 = cfg.h0_frac * H_MAX
    hf = cfg.hfinal_frac * H_MAX
    return h0 + (hf - h0) * frac


def temperature(step: int, cfg: TrainConfig) -> float:
    frac = min(max(step, 0) / cfg.anneal_steps, 1.0)
    return cfg.tau0 + (cfg.tau_final - cfg.tau0) * frac


def heated_softmax(logits: np.ndarray, legal: np.ndarray, tau: float) -> np.ndarray:
    """softmax(logits / tau) restricted to legal actions (others exactly 0)."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    legal = np.asarray(legal, dtype=bool)
    if not legal.any():
        raise ValueError("no legal action available")
    scaled = np.where(legal, np.asarray(logits, dtype=float) / tau, -np.inf)
    scaled -= scaled.max()
    expd = np.where(legal, np.exp(scaled), 0.0)
    return expd / expd.sum()


def soft_update(target: dict[str, Tensor], online: dict[str, Tensor],
                rho: float) -> None:
    """target <- (1 - rho) * target + rho * online."""
    if set(target) != set(online):
        raise ValueError("parameter name sets differ")
    for name in target:
        target[name].values *= 1.0 - rho
        target[name].values += rho * online[name].values


@dataclass
class Transition:
    state: dict[str, np.ndarray]
    action: int
    reward: np.ndarray
    next_state: dict[str, np.ndarray]
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling.

    States are stored twice (s and next_s) as float32 field arrays; the
    preference token is deliberately absent and gets attached at sampling
    time.
    """

    def __init__(self, capacity: int, field_shapes: dict[str, tuple[int, ...]]):
        self.capacity = capacity
        self.fields = dict(field_shapes)
        self.data: dict[str, np.ndarray] = {}
        for name, shape in self.fields.items():
            self.data[name] = np.zeros((capacity, *shape), dtype=np.float32)
            self.data["next_" + name] = np.zeros((capacity, *shape), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros((capacity, NUM_OBJECTIVES), dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        i = self.cursor
        for name in self.fields:
            self.data[name][i] = tr.state[name]
            self.data["next_" + name][i] = tr.next_state[name]
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.dones[i] = float(tr.done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator,
               dtype=np.float64) -> dict[str, np.ndarray]:
        idx = rng.integers(0, self.size, size=batch)
        out = {name: arr[idx].astype(dtype) for name, arr in self.data.items()}
        out["action"] = self.actions[idx]
        out["reward"] = self.rewards[idx].astype(dtype)
        out["done"] = self.dones[idx].astype(dtype)
        return out


def _tile(batch: dict[str, np.ndarray], reps: int) -> dict[str, np.ndarray]:
    out = {}
    for name, arr in batch.items():
        out[name] = np.concatenate([arr] * reps, axis=0)
    return out


def _stored_legal(env: HarvestEnv) -> np.ndarray:
    """Legal-action mask for the replay buffer. A drained terminal state can
    have no legal action; its policy is never used (done masks the
    bootstrap), so store a benign all-ones mask to keep softmaxes defined."""
    mask = env.legal_mask()
    if not mask.any():
        return np.ones(NUM_ACTIONS, dtype=np.float32)
    return mask.astype(np.float32)


class AttentionAgent:
    """State codec + the five networks for MOSAC-ATT."""

    algo = ALGO_ATTENTION

    def __init__(self, cfg: EncoderConfig, seed: int):
        self.cfg = cfg
        self.dtype = cfg.np_dtype
        streams = [np.random.default_rng(s) for s in
                   np.random.SeedSequence(seed).spawn(3)]
        self.actor = AttentionNetwork(cfg, nets.ROLE_ACTOR, streams[0])
        self.q1 = AttentionNetwork(cfg, nets.ROLE_CRITIC, streams[1])
        self.q2 = AttentionNetwork(cfg, nets.ROLE_CRITIC, streams[2])
        self.tq1 = AttentionNetwork(cfg, nets.ROLE_CRITIC, streams[1])
        self.tq2 = AttentionNetwork(cfg, nets.ROLE_CRITIC, streams[2])
        nets.copy_values(self.q1.params, self.tq1.params)
        nets.copy_values(self.q2.params, self.tq2.params)

    def field_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.cfg
        return {
            "uav": (md.UAV_TOKEN_DIM,),
            "dev": (c.kmax, md.DEVICE_TOKEN_DIM),
            "mask": (c.kmax,),
            "lm": (c.lm_dim,),
            "legal": (NUM_ACTIONS,),
        }

    def encode(self, env: HarvestEnv) -> dict[str, np.ndarray]:
        ts = md.token_state(env, (0.5, 0.5), kmax=self.cfg.kmax,
                            local_crop=self.cfg.local_crop)
        return {
            "uav": ts.uav,
            "dev": ts.devices,
            "mask": ts.mask.astype(np.float32),
            "lm": ts.local_map,
            "legal": _stored_legal(env),
        }

    def net_forward(self, net: AttentionNetwork, batch: dict, prefix: str,
                    w: np.ndarray) -> Tensor:
        return net.forward(
            batch[prefix + "uav"],
            batch[prefix + "dev"],
            batch[prefix + "mask"] > 0.5,
            w,
            batch[prefix + "lm"],
        )

    def act_logits(self, env: HarvestEnv, w: np.ndarray) -> np.ndarray:
        ts = md.token_state(env, w, kmax=self.cfg.kmax,
                            local_crop=self.cfg.local_crop)
        return self.actor.forward_tokens(ts)

    def meta(self) -> dict:
        return {"algo": self.algo, "encoder": dataclasses.asdict(self.cfg)}


class FeedforwardAgent:
    """State codec + networks for the MOSAC-FTV baseline (fixed K)."""

    algo = ALGO_FEEDFORWARD

    def __init__(self, num_devices: int, hidden: int, seed: int,
                 dtype: str = "float64"):
        self.num_devices = num_devices
        self.hidden = hidden
        self.dtype_name = dtype
        self.dtype = np.float64 if dtype == "float64" else np.float32
        streams = [np.random.default_rng(s) for s in
                   np.random.SeedSequence(seed).spawn(3)]

        def build(role, stream):
            return FeedforwardNetwork(num_devices, hidden, role, stream,
                                      dtype=self.dtype)

        self.actor = build(nets.ROLE_ACTOR, streams[0])
        self.q1 = build(nets.ROLE_CRITIC, streams[1])
        self.q2 = build(nets.ROLE_CRITIC, streams[2])
        self.tq1 = build(nets.ROLE_CRITIC, streams[1])
        self.tq2 = build(nets.ROLE_CRITIC, streams[2])
        nets.copy_values(self.q1.params, self.tq1.params)
        nets.copy_values(self.q2.params, self.tq2.params)

    def field_shapes(self) -> dict[str, tuple[int, ...]]:
        dim = md.UAV_TOKEN_DIM + md.DEVICE_TOKEN_DIM * self.num_devices
        return {"ftv": (dim,), "legal": (NUM_ACTIONS,)}

    def encode(self, env: HarvestEnv) -> dict[str, np.ndarray]:
        return {
            "ftv": md.ftv_state(env),
            "legal": _stored_legal(env),
        }

    def net_forward(self, net: FeedforwardNetwork, batch: dict, prefix: str,
                    w: np.ndarray) -> Tensor:
        return net.forward(batch[prefix + "ftv"], w)

    def act_logits(self, env: HarvestEnv, w: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            out = self.actor.forward(md.ftv_state(env)[None], np.asarray(w)[None])
        return out.values[0]

    def meta(self) -> dict:
        return {"algo": self.algo, "num_devices": self.num_devices,
                "hidden": self.hidden, "dtype": self.dtype_name}


def compute_target_y(agent, batch: dict, w: np.ndarray, nu: float,
                     gamma: float) -> np.ndarray:
    """Entropy-regularized vector targets y = r + gamma (1-done) *
    (Qbar - nu 1_M logpi^T) pi at the next state; no gradients flow."""
    with ad.no_grad():
        legal_next = batch["next_legal"] > 0.5
        logits = agent.net_forward(agent.actor, batch, "next_", w)
        pi = ad.masked_softmax(logits, legal_next).values
        logpi = ad.masked_log_softmax(logits, legal_next).values
        qt1 = agent.net_forward(agent.tq1, batch, "next_", w).values
        qt2 = agent.net_forward(agent.tq2, batch, "next_", w).values
    # Twin with the smaller expected scalarized value supplies the vector.
    util1 = np.einsum("bma,bm->ba", qt1, w)
    util2 = np.einsum("bma,bm->ba", qt2, w)
    expected1 = (util1 * pi).sum(axis=1)
    expected2 = (util2 * pi).sum(axis=1)
    qbar = np.where((expected1 <= expected2)[:, None, None], qt1, qt2)
    bracket = qbar - nu * logpi[:, None, :]
    exp_term = np.einsum("bma,ba->bm", bracket, pi)
    done = batch["done"][:, None]
    return batch["reward"] + gamma * (1.0 - done) * exp_term


def critic_loss(agent, batch: dict, w: np.ndarray, y: np.ndarray,
                q_out: list | None = None) -> Tensor:
    """Half mean squared vector error at the taken action, both twins.

    When q_out is a list, the twins' full (B, M, A) value arrays are
    appended to it so the caller can reuse them (e.g. for the actor loss)
    without extra forward passes.
    """
    target = Tensor(y)
    count = y.shape[0]
    total = None
    for net in (agent.q1, agent.q2):
        q = agent.net_forward(net, batch, "", w)
        if q_out is not None:
            q_out.append(q.values.copy())
        q_sel = ad.select_actions(q, batch["action"])
        diff = ad.sub(q_sel, target)
        term = ad.scale(ad.sum_all(ad.mul(diff, diff)), 0.5 / count)
        total = term if total is None else ad.add(total, term)
    return total


def actor_loss(agent, batch: dict, w: np.ndarray, nu: float,
               q_values: list | None = None
               ) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """pi^T (nu logpi - w^T Q) with the min-twin scalarized utilities; the
    critics contribute values only (no gradient), either passed in as
    q_values = [q1, q2] or evaluated fresh. Returns (loss, pi, logpi)."""
    legal = batch["legal"] > 0.5
    logits = agent.net_forward(agent.actor, batch, "", w)
    pi = ad.masked_softmax(logits, legal)
    logpi = ad.masked_log_softmax(logits, legal)
    if q_values is None:
        with ad.no_grad():
            q_values = [
                agent.net_forward(agent.q1, batch, "", w).values,
                agent.net_forward(agent.q2, batch, "", w).values,
            ]
    q1, q2 = q_values
    util1 = np.einsum("bma,bm->ba", q1, w)
    util2 = np.einsum("bma,bm->ba", q2, w)
    expected1 = (util1 * pi.values).sum(axis=1)
    expected2 = (util2 * pi.values).sum(axis=1)
    utilities = np.where((expected1 <= expected2)[:, None], util1, util2)
    inner = ad.sub(ad.scale(logpi, nu), Tensor(utilities))
    loss = ad.scale(ad.sum_all(ad.mul(pi, inner)), 1.0 / pi.shape[0])
    return loss, pi.values, logpi.values


def entropy_coefficient_loss(pi: np.ndarray, logpi: np.ndarray,
                             log_nu: Tensor, h_target: float) -> Tensor:
    """J(nu) = E[pi^T (-nu (logpi + H))] with pi treated as constant;
    gradient descent raises nu when entropy is below target."""
    coeff = float((pi * (logpi + h_target)).sum() / pi.shape[0])
    return ad.scale(ad.exp(log_nu), -coeff)


@dataclass
class TrainResult:
    metrics_path: Path
    checkpoint_paths: list[Path]
    final_eval: dict
    agent: object
    steps: int


METRIC_BASE_COLUMNS = [
    "step", "seed", "critic_loss", "actor_loss", "nu_loss", "nu", "tau",
    "h_target", "hypervolume", "hypervolume_stochastic",
]


def _metric_columns() -> list[str]:
    prefs = [f"w{i}" for i in range(11)]
    return (METRIC_BASE_COLUMNS
            + [f"collected_pct_{p}" for p in prefs]
            + [f"energy_{p}" for p in prefs])


class Trainer:
    def __init__(self, run_cfg: RunConfig, algo: str, seed: int,
                 out_dir: str | Path,
                 base_scenario: wd.Scenario | None = None,
                 eval_scenarios: list[wd.Scenario] | None = None):
        if algo not in (ALGO_ATTENTION, ALGO_FEEDFORWARD):
            raise ValueError(f"unknown algo {algo!r}")
        self.cfg = run_cfg
        self.tcfg = run_cfg.train
        self.algo = algo
        self.seed = seed
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.params = ChannelParams.from_config(run_cfg.channel)

        # Map and eval set are experiment-level (shared across training seeds).
        self.base_scenario = base_scenario or wd.generate_scenario(
            run_cfg.world, run_cfg.seed
        )
        if eval_scenarios is None:
            eval_scenarios = fixed_eval_scenarios(
                self.base_scenario, run_cfg, self.tcfg.eval_scenarios
            )
        self.eval_scenarios = eval_scenarios

        streams = np.random.SeedSequence(seed).spawn(5)
        self.rng_pref = np.random.default_rng(streams[0])
        self.rng_action = np.random.default_rng(streams[1])
        self.rng_buffer = np.random.default_rng(streams[2])
        self.rng_episode = np.random.default_rng(streams[3])
        net_seed = int(streams[4].generate_state(1)[0])

        if algo == ALGO_ATTENTION:
            enc = EncoderConfig(
                embed_dim=run_cfg.net.embed_dim,
                heads=run_cfg.net.heads,
                layers=run_cfg.net.layers,
                hidden=run_cfg.net.hidden,
                kmax=run_cfg.momdp.kmax,
                local_crop=run_cfg.momdp.local_crop,
                dtype=run_cfg.net.dtype,
            )
            self.agent = AttentionAgent(enc, net_seed)
        else:
            self.agent = FeedforwardAgent(
                run_cfg.world.num_devices, run_cfg.net.hidden, net_seed,
                dtype=run_cfg.net.dtype,
            )

        self.buffer = ReplayBuffer(self.tcfg.buffer_capacity,
                                   self.agent.field_shapes())
        lr = self.tcfg.lr
        self.opt_actor = ad.Adam(self.agent.actor.params.values(), lr=lr)
        critic_params = list(self.agent.q1.params.values()) + list(
            self.agent.q2.params.values()
        )
        self.opt_critic = ad.Adam(critic_params, lr=lr)
        self.log_nu = Tensor(0.0, requires_grad=True)
        self.opt_nu = ad.Adam([self.log_nu], lr=lr)
        self.step_count = 0

    @property
    def nu(self) -> float:
        return float(np.exp(self.log_nu.values))

    # -- episode plumbing ------------------------------------------------------

    def _new_episode(self) -> None:
        ep_seed = int(self.rng_episode.integers(0, 2**63 - 1))
        scenario = wd.resample_devices(self.base_scenario, self.cfg.world, ep_seed)
        self.env = HarvestEnv(scenario, self.params, self.cfg.momdp,
                              self.cfg.world.altitude_m)
        self.env.reset(seed=int(self.rng_episode.integers(0, 2**63 - 1)))
        if self.tcfg.w_fixed is not None:
            self.w_behavior = np.asarray(self.tcfg.w_fixed, dtype=float)
        else:
            self.w_behavior = sample_preferences(1, self.rng_pref)[0]

    def _act(self, tau: float) -> tuple[dict, int, md.StepResult, dict]:
        state = self.agent.encode(self.env)
        logits = self.agent.act_logits(self.env, self.w_behavior)
        probs = heated_softmax(logits, state["legal"] > 0.5, tau)
        action = int(self.rng_action.choice(NUM_ACTIONS, p=probs))
        result = self.env.step(action)
        next_state = self.agent.encode(self.env)
        return state, action, result, next_state

    def _sample_update_preferences(self) -> np.ndarray:
        if self.tcfg.w_fixed is not None:
            # J identical replicas average to a single copy, so collapse
            # the tiling (bit-identical losses, one third the work for J=3)
            return np.asarray([self.tcfg.w_fixed], dtype=float)
        return sample_preferences(self.tcfg.prefs_per_update, self.rng_pref)

    def update(self) -> dict[str, float]:
        batch = self.buffer.sample(self.tcfg.batch_size, self.rng_buffer,
                                   dtype=self.agent.dtype)
        prefs = self._sample_update_preferences()
        big = _tile(batch, len(prefs))
        w = np.repeat(prefs, self.tcfg.batch_size, axis=0).astype(
            self.agent.dtype
        )
        nu = self.nu

        y = compute_target_y(self.agent, big, w, nu, self.tcfg.gamma)
        # Synchronous update: the actor consumes the critic values from the
        # same snapshot the critic loss was built on; both losses share one
        # backward pass (their parameter sets are disjoint) and then every
        # optimizer steps.
        q_snapshot: list = []
        c_loss = critic_loss(self.agent, big, w, y, q_out=q_snapshot)
        a_loss, pi, logpi = actor_loss(self.agent, big, w, nu,
                                       q_values=q_snapshot)
        self.opt_critic.zero_grad()
        self.opt_actor.zero_grad()
        ad.backward(ad.add(c_loss, a_loss))
        self.opt_critic.step()
        self.opt_actor.step()

        h_target = entropy_target(self.step_count, self.tcfg)
        n_loss = entropy_coefficient_loss(pi, logpi, self.log_nu, h_target)
        self.opt_nu.zero_grad()
        ad.backward(n_loss)
        self.opt_nu.step()

        soft_update(self.agent.tq1.params, self.agent.q1.params,
                    self.tcfg.target_rho)
        soft_update(self.agent.tq2.params, self.agent.q2.params,
                    self.tcfg.target_rho)

        losses = {
            "critic_loss": float(c_loss.values),
            "actor_loss": float(a_loss.values),
            "nu_loss": float(n_loss.values),
        }
        if not all(np.isfinite(v) for v in losses.values()):
            dump = self.out_dir / f"diverged_step{self.step_count}.npz"
            np.savez(dump, **{k: v for k, v in big.items()}, w=w, y=y)
            raise TrainingDiverged(
                f"non-finite loss at step {self.step_count}: {losses} "
                f"(batch dumped to {dump})"
            )
        return losses

    # -- evaluation and logging ------------------------------------------------

    def evaluate(self) -> dict:
        policy = ev.NetPolicy(self.agent, stochastic=False)
        table = ev.evaluate(policy, self.eval_scenarios, self.params,
                            self.cfg.momdp, self.cfg.world.altitude_m)
        # Secondary stochastic-policy numbers on a subset: cheap indicator,
        # the greedy table is the primary metric.
        stochastic_policy = ev.NetPolicy(self.agent, stochastic=True,
                                         rng=np.random.default_rng(self.seed))
        table_s = ev.evaluate(stochastic_policy, self.eval_scenarios[:5],
                              self.params, self.cfg.momdp,
                              self.cfg.world.altitude_m)
        ref = tuple(self.cfg.eval.hv_ref)
        return {
            "hypervolume": ev.averaged_front_hypervolume(table, ref),
            "hypervolume_stochastic": ev.averaged_front_hypervolume(table_s, ref),
            "mean_collected_pct": table.mean_collected_pct_by_pref(),
            "mean_energy": table.mean_energy_by_pref(),
            "table": table,
        }

    def save_checkpoint(self, tag: str) -> Path:
        merged: dict[str, Tensor] = {}
        for prefix, net in (
            ("actor", self.agent.actor), ("q1", self.agent.q1),
            ("q2", self.agent.q2), ("tq1", self.agent.tq1),
            ("tq2", self.agent.tq2),
        ):
            for name, tensor in net.params.items():
                merged[f"{prefix}/{name}"] = tensor
        merged["log_nu"] = self.log_nu
        meta = self.agent.meta()
        meta.update({
            "step": self.step_count,
            "seed": self.seed,
            "run_config": dataclasses.asdict(self.cfg),
        })
        path = self.out_dir / f"checkpoint_{tag}.npz"
        ad.save_checkpoint(path, merged, meta)
        return path

    def train(self) -> TrainResult:
        cols = _metric_columns()
        metrics_path = self.out_dir / "metrics.csv"
        checkpoints = [self.save_checkpoint("init")]
        rows: list[str] = [",".join(cols)]
        final_eval: dict = {}
        losses = {"critic_loss": np.nan, "actor_loss": np.nan, "nu_loss": np.nan}
        self._new_episode()
        started = time.time()

        while self.step_count < self.tcfg.total_steps:
            self.step_count += 1
            tau = temperature(self.step_count, self.tcfg)
            state, action, result, next_state = self._act(tau)
            self.buffer.add(Transition(state, action, result.reward,
                                       next_state, result.done))
            if result.done:
                self._new_episode()
            if len(self.buffer) >= max(self.tcfg.warmup_steps,
                                       self.tcfg.batch_size):
                losses = self.update()

            if self.step_count % self.tcfg.eval_every == 0 or (
                self.step_count == self.tcfg.total_steps
            ):
                final_eval = self.evaluate()
                rows.append(self._metric_row(losses, final_eval))
                checkpoints.append(self.save_checkpoint(f"{self.step_count:08d}"))
                metrics_path.write_text("\n".join(rows) + "\n")

        metrics_path.write_text("\n".join(rows) + "\n")
        final = self.save_checkpoint("final")
        checkpoints.append(final)
        final_eval["train_seconds"] = time.time() - started
        return TrainResult(metrics_path, checkpoints, final_eval,
                           self.agent, self.step_count)

    def _metric_row(self, losses: dict, evald: dict) -> str:
        values = [
            self.step_count, self.seed, losses["critic_loss"],
            losses["actor_loss"], losses["nu_loss"], self.nu,
            temperature(self.step_count, self.tcfg),
            entropy_target(self.step_count, self.tcfg),
            evald["hypervolume"], evald["hypervolume_stochastic"],
        ]
        values.extend(evald["mean_collected_pct"])
        values.extend(evald["mean_energy"])
        return ",".join(repr(v) if isinstance(v, float) else str(v)
                        for v in values)


def fixed_eval_scenarios(base: wd.Scenario, run_cfg: RunConfig,
                         count: int) -> list[wd.Scenario]:
    """Evaluation set derived from the experiment seed only, so every
    training seed faces identical scenarios."""
    seq = np.random.SeedSequence((run_cfg.seed, 0xE7A1))
    return [
        wd.resample_devices(base, run_cfg.world, int(s.generate_state(1)[0]))
        for s in seq.spawn(count)
    ]


def train_run(run_cfg: RunConfig, algo: str, seed: int, out_dir: str | Path,
              base_scenario: wd.Scenario | None = None,
              eval_scenarios: list[wd.Scenario] | None = None) -> TrainResult:
    trainer = Trainer(run_cfg, algo, seed, out_dir, base_scenario,
                      eval_scenarios)
    return trainer.train()


def load_agent(path: str | Path):
    """Rebuild an agent (all five networks + nu) from a checkpoint."""
    arrays, meta = ad.load_checkpoint(path)
    if meta["algo"] == ALGO_ATTENTION:
        enc = EncoderConfig(**meta["encoder"])
        agent = AttentionAgent(enc, seed=0)
    elif meta["algo"] == ALGO_FEEDFORWARD:
        agent = FeedforwardAgent(meta["num_devices"], meta["hidden"], seed=0,
                                 dtype=meta.get("dtype", "float64"))
    else:
        raise ValueError(f"unknown algo in checkpoint: {meta['algo']!r}")
    for prefix, net in (("actor", agent.actor), ("q1", agent.q1),
                        ("q2", agent.q2), ("tq1", agent.tq1),
                        ("tq2", agent.tq2)):
        subset = {
            name[len(prefix) + 1:]: arr
            for name, arr in arrays.items()
            if name.startswith(prefix + "/")
        }
        nets.load_values(net, subset)
    return agent, meta
