"""Multi-objective evaluation: preference sweeps, Pareto fronts,
hypervolume, the greedy baseline, robustness runs and episode exports.

Return points live in (collected %, -energy) space; the hypervolume of a
point set is the area it dominates relative to a reference point (default
(-1, -200)), computed by the sorted strip decomposition.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import momdp as md
from . import world as wd
from .channel import ChannelParams
from .config import MomdpConfig
from .momdp import HarvestEnv, pareto_dominates
from .world import NUM_ACTIONS, Action, Scenario

DEFAULT_HV_REF = (-1.0, -200.0)


def test_preferences() -> np.ndarray:
    """The canonical 11-point sweep {(i/10, 1 - i/10)}, i = 0..10."""
    grid = np.arange(11) / 10.0
    return np.stack([grid, 1.0 - grid], axis=1)


def pareto_front(points) -> np.ndarray:
    """Non-dominated subset, keeping the stable input order."""
    points = np.asarray(points, dtype=float)
    keep = []
    for i, p in enumerate(points):
        dominated = any(
            pareto_dominates(q, p) for j, q in enumerate(points) if j != i
        )
        if not dominated:
            keep.append(i)
    return points[keep]


def hypervolume(points, ref=DEFAULT_HV_REF) -> float:
    """Area of the union of rectangles [ref, point] for two objectives.

    Points that do not dominate the reference componentwise are excluded
    with a warning. Computed by sorting the non-dominated set on the first
    objective (descending) and summing disjoint strips.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    ref = np.asarray(ref, dtype=float)
    good = (points >= ref).all(axis=1)
    if not good.all():
        warnings.warn(
            f"hypervolume: excluding {int((~good).sum())} point(s) "
            f"not dominating the reference {tuple(ref)}",
            stacklevel=2,
        )
        points = points[good]
    if len(points) == 0:
        return 0.0
    front = pareto_front(points)
    order = np.argsort(-front[:, 0], kind="stable")
    area = 0.0
    last_y = ref[1]
    for x, y in front[order]:
        if y > last_y:
            area += (x - ref[0]) * (y - last_y)
            last_y = y
    return float(area)


def average_utility(returns_by_pref, prefs=None) -> float:
    """Mean over the preference sweep of the scalarized return w . J."""
    returns_by_pref = np.asarray(returns_by_pref, dtype=float)
    prefs = test_preferences() if prefs is None else np.asarray(prefs, dtype=float)
    if returns_by_pref.shape != prefs.shape:
        raise ValueError(
            f"returns {returns_by_pref.shape} do not match prefs {prefs.shape}"
        )
    return float((returns_by_pref * prefs).sum(axis=1).mean())


# --- policies -----------------------------------------------------------------


def _greedy_argmax(logits: np.ndarray, legal: np.ndarray) -> int:
    masked = np.where(legal, logits, -np.inf)
    return int(np.argmax(masked))


def _softmax_probs(logits: np.ndarray, legal: np.ndarray) -> np.ndarray:
    scaled = np.where(legal, logits, -np.inf)
    scaled = scaled - scaled.max()
    expd = np.where(legal, np.exp(scaled), 0.0)
    return expd / expd.sum()


class NetPolicy:
    """Wraps a trained agent; greedy argmax by default, tau=1 sampling when
    stochastic. Records per-layer attention matrices when asked."""

    def __init__(self, agent, stochastic: bool = False,
                 rng: np.random.Generator | None = None,
                 record_attention: bool = False):
        self.agent = agent
        self.stochastic = stochastic
        self.rng = rng or np.random.default_rng(0)
        self.record_attention = record_attention
        self.last_attention: list[np.ndarray] | None = None
        self.w = None

    def begin_episode(self, env: HarvestEnv, w) -> None:
        self.w = np.asarray(w, dtype=float)

    def act(self, env: HarvestEnv) -> int:
        record: list | None = [] if self.record_attention else None
        if hasattr(self.agent.actor, "forward_tokens"):
            ts = md.token_state(env, self.w, kmax=self.agent.cfg.kmax,
                                local_crop=self.agent.cfg.local_crop)
            logits = self.agent.actor.forward_tokens(ts, record_attention=record)
        else:
            logits = self.agent.act_logits(env, self.w)
        self.last_attention = record
        legal = env.legal_mask()
        if self.stochastic:
            probs = _softmax_probs(logits, legal)
            return int(self.rng.choice(NUM_ACTIONS, p=probs))
        return _greedy_argmax(logits, legal)


class RandomPolicy:
    def __init__(self, rng: np.random.Generator | None = None):
        self.rng = rng or np.random.default_rng(0)
        self.last_attention = None

    def begin_episode(self, env: HarvestEnv, w) -> None:
        pass

    def act(self, env: HarvestEnv) -> int:
        legal = np.flatnonzero(env.legal_mask())
        return int(self.rng.choice(legal))


class GreedyPolicy:
    """Shortest-path heuristic: fly to the nearest device whose round trip
    is battery-feasible, hover until it drains (or feasibility breaks),
    repeat, then head home.

    Feasibility uses the Manhattan metric (flight is unobstructed):
    dist(p, device) + dist(device, terminal) + slack_margin <= battery.
    Every emitted action is legal under the safety controller, so episodes
    always end at the terminal with non-negative battery.
    """

    def __init__(self, slack_margin: float = 0.0, data_epsilon: float = 1.0,
                 consider_devices: bool = True):
        self.slack_margin = slack_margin
        self.data_epsilon = data_epsilon
        self.consider_devices = consider_devices
        self.last_attention = None

    def begin_episode(self, env: HarvestEnv, w) -> None:
        pass

    def _feasible_target(self, env: HarvestEnv) -> tuple[int, int] | None:
        if not self.consider_devices:
            return None
        pos = env.uav.position
        term = env.city.terminal
        b = env.uav.battery
        best = None
        best_dist = None
        for cell, remaining in zip(env._dev_cells, env.remaining_data):
            if remaining <= self.data_epsilon:
                continue
            cell = (int(cell[0]), int(cell[1]))
            trip = wd.manhattan(pos, cell) + wd.manhattan(cell, term)
            if trip + self.slack_margin > b:
                continue
            dist = wd.manhattan(pos, cell)
            if best_dist is None or dist < best_dist:
                best, best_dist = cell, dist
        return best

    def _step_toward(self, env: HarvestEnv, goal: tuple[int, int]) -> int:
        pos = env.uav.position
        term = env.city.terminal
        legal = env.legal_mask()
        options = []
        if goal[0] > pos[0]:
            options.append(Action.EAST)
        elif goal[0] < pos[0]:
            options.append(Action.WEST)
        if goal[1] > pos[1]:
            options.append(Action.NORTH)
        elif goal[1] < pos[1]:
            options.append(Action.SOUTH)
        for action in options:
            dx, dy = wd.ACTION_DELTAS[action]
            nxt = (pos[0] + dx, pos[1] + dy)
            # Never step onto the terminal in passing: that ends the episode.
            if nxt == term and goal != term:
                continue
            if legal[action]:
                return int(action)
        # Forced detour around the terminal (goal collinear behind it):
        # any legal sidestep that avoids the terminal cell.
        for action in (Action.NORTH, Action.EAST, Action.SOUTH, Action.WEST):
            dx, dy = wd.ACTION_DELTAS[action]
            nxt = (pos[0] + dx, pos[1] + dy)
            if legal[action] and nxt != term:
                return int(action)
        if legal[Action.HOVER]:
            return int(Action.HOVER)
        # Head home: distance-decreasing moves are always legal.
        for action in options or list(Action)[1:]:
            if legal[action]:
                return int(action)
        return int(np.flatnonzero(legal)[0])

    def act(self, env: HarvestEnv) -> int:
        pos = env.uav.position
        term = env.city.terminal
        target = self._feasible_target(env)
        if target is None:
            if pos == term:
                # RB start: finish immediately by hovering in place.
                return int(Action.HOVER) if env.legal_mask()[Action.HOVER] else (
                    self._step_toward(env, term)
                )
            return self._step_toward(env, term)
        if pos == target:
            hover_ok = (
                env.legal_mask()[Action.HOVER]
                and env.uav.battery - 0.5
                >= wd.manhattan(pos, term) + self.slack_margin
            )
            if hover_ok:
                return int(Action.HOVER)
            return self._step_toward(env, term)
        return self._step_toward(env, target)


class GreedyPreferencePolicy(GreedyPolicy):
    """Greedy baseline swept across preferences: the energy weight buys
    slack margin, with the pure-energy preference ignoring devices."""

    def __init__(self, data_epsilon: float = 1.0):
        super().__init__(data_epsilon=data_epsilon)

    def begin_episode(self, env: HarvestEnv, w) -> None:
        w = np.asarray(w, dtype=float)
        self.consider_devices = w[0] > 0.0
        trip = wd.manhattan(env.city.start, env.city.terminal)
        spare = max(env.scenario.battery - trip, 0.0)
        self.slack_margin = (1.0 - float(w[0])) * spare


# --- rollouts and tables --------------------------------------------------------


@dataclass
class EpisodeRecord:
    preference: np.ndarray
    cells: list[tuple[int, int]]
    rewards: np.ndarray            # (T, 2)
    scheduled: list[int | None]
    collected_units: float
    energy: float
    total_data: float
    steps: int
    truncated: bool
    attention: list[list[np.ndarray]] = field(default_factory=list)
    token_labels: list[str] = field(default_factory=list)

    @property
    def collected_pct(self) -> float:
        return 100.0 * self.collected_units / self.total_data if (
            self.total_data > 0
        ) else 0.0


class RolloutInvariantError(Exception):
    """An episode violated a conservation or scheduling invariant."""


def token_labels(kmax: int) -> list[str]:
    return ["uav"] + [f"dev{i + 1}" for i in range(kmax)] + ["pref", "localmap"]


def rollout(env: HarvestEnv, policy, w, seed: int | None = None,
            check_invariants: bool = True) -> EpisodeRecord:
    """Run one episode to termination and validate its bookkeeping:
    collected data equals the device-side loss, at most one device is
    scheduled per slot, and per-step energy is half or one unit."""
    env.reset(seed=seed)
    w = np.asarray(w, dtype=float)
    policy.begin_episode(env, w)
    initial_remaining = env.remaining_data.copy()
    cells = [env.uav.position]
    rewards = []
    scheduled = []
    attention = []
    truncated = False
    while not env.done:
        action = policy.act(env)
        if getattr(policy, "last_attention", None) is not None:
            attention.append(policy.last_attention)
        result = env.step(action)
        rewards.append(result.reward)
        scheduled.append(result.info["scheduled"])
        cells.append(env.uav.position)
        truncated = result.info["truncated"]
    rewards = np.asarray(rewards).reshape(-1, md.NUM_OBJECTIVES)
    record = EpisodeRecord(
        preference=w,
        cells=cells,
        rewards=rewards,
        scheduled=scheduled,
        collected_units=env.collected_total,
        energy=env.energy_total,
        total_data=float(initial_remaining.sum()),
        steps=env.steps,
        truncated=truncated,
        attention=attention,
        token_labels=token_labels(env.cfg.kmax),
    )
    if check_invariants:
        _check_episode(env, record, initial_remaining)
    return record


def _check_episode(env: HarvestEnv, record: EpisodeRecord,
                   initial_remaining: np.ndarray) -> None:
    device_loss = float((initial_remaining - env.remaining_data).sum())
    if not np.isclose(device_loss, record.collected_units, atol=1e-6):
        raise RolloutInvariantError(
            f"conservation broken: devices lost {device_loss}, "
            f"collected {record.collected_units}"
        )
    if (env.remaining_data < -1e-12).any():
        raise RolloutInvariantError("negative remaining data")
    energies = -record.rewards[:, 1]
    if not np.isin(energies, (0.5, 1.0)).all():
        raise RolloutInvariantError(f"per-step energy outside {{0.5, 1}}")
    if not record.truncated:
        if record.cells[-1] != env.city.terminal:
            raise RolloutInvariantError("episode ended away from the terminal")
        if env.uav.battery < 0:
            raise RolloutInvariantError("negative terminal battery")


@dataclass
class PolicyReturnTable:
    """Per-(scenario, preference) episode returns for a policy."""

    prefs: np.ndarray              # (P, 2)
    scenario_seeds: list[int]
    collected_units: np.ndarray    # (S, P)
    collected_pct: np.ndarray      # (S, P)
    energy: np.ndarray             # (S, P)
    steps: np.ndarray              # (S, P)

    def points(self, scenario_index: int) -> np.ndarray:
        """(P, 2) return points (collected %, -energy) for one scenario."""
        return np.stack(
            [self.collected_pct[scenario_index], -self.energy[scenario_index]],
            axis=1,
        )

    def averaged_points(self) -> np.ndarray:
        return np.stack(
            [self.collected_pct.mean(axis=0), -self.energy.mean(axis=0)], axis=1
        )

    def per_scenario_hypervolume(self, ref=DEFAULT_HV_REF) -> np.ndarray:
        return np.array([
            hypervolume(self.points(i), ref) for i in range(len(self.scenario_seeds))
        ])

    def mean_collected_pct_by_pref(self) -> list[float]:
        return [float(v) for v in self.collected_pct.mean(axis=0)]

    def mean_energy_by_pref(self) -> list[float]:
        return [float(v) for v in self.energy.mean(axis=0)]

    def average_utility(self) -> float:
        """Utility on (collected %, -energy), averaged over scenarios."""
        per_scenario = [
            average_utility(self.points(i), self.prefs)
            for i in range(len(self.scenario_seeds))
        ]
        return float(np.mean(per_scenario))

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "scenario", "scenario_seed", "w_index", "w_data", "w_energy",
                "collected_units", "collected_pct", "energy", "steps",
            ])
            for si, seed in enumerate(self.scenario_seeds):
                for wi, w in enumerate(self.prefs):
                    writer.writerow([
                        si, seed, wi, w[0], w[1],
                        self.collected_units[si, wi],
                        self.collected_pct[si, wi],
                        self.energy[si, wi],
                        int(self.steps[si, wi]),
                    ])


def averaged_front_hypervolume(table: PolicyReturnTable,
                               ref=DEFAULT_HV_REF) -> float:
    """Hypervolume of the scenario-averaged return points (one per w)."""
    return hypervolume(table.averaged_points(), ref)


def evaluate(policy, scenarios: list[Scenario], params: ChannelParams,
             cfg: MomdpConfig, altitude_m: float,
             prefs: np.ndarray | None = None,
             seed_base: int = 0) -> PolicyReturnTable:
    """Roll the policy over every (scenario, preference) pair.

    Deterministic given the scenario seeds and seed_base: each episode's
    random stream is derived from (scenario seed, preference index,
    seed_base).
    """
    prefs = test_preferences() if prefs is None else np.asarray(prefs, dtype=float)
    shape = (len(scenarios), len(prefs))
    collected_units = np.zeros(shape)
    collected_pct = np.zeros(shape)
    energy = np.zeros(shape)
    steps = np.zeros(shape, dtype=int)
    for si, scenario in enumerate(scenarios):
        env = HarvestEnv(scenario, params, cfg, altitude_m)
        for wi, w in enumerate(prefs):
            ep_seed = int(
                np.random.SeedSequence(
                    (scenario.seed & 0xFFFFFFFF, wi, seed_base)
                ).generate_state(1)[0]
            )
            record = rollout(env, policy, w, seed=ep_seed)
            collected_units[si, wi] = record.collected_units
            collected_pct[si, wi] = record.collected_pct
            energy[si, wi] = record.energy
            steps[si, wi] = record.steps
    return PolicyReturnTable(
        prefs=prefs,
        scenario_seeds=[s.seed for s in scenarios],
        collected_units=collected_units,
        collected_pct=collected_pct,
        energy=energy,
        steps=steps,
    )


def fading_robustness(policy, scenarios: list[Scenario], params: ChannelParams,
                      cfg: MomdpConfig, altitude_m: float, repeats: int = 30,
                      w=(1.0, 0.0)) -> dict:
    """Collection percentage with and without Rayleigh fading: mean and
    standard deviation over repeated evaluations."""
    w = np.asarray(w, dtype=float).reshape(1, 2)
    out = {}
    for label, fading in (("regular", False), ("fading", True)):
        run_params = replace(params, fading_enabled=fading)
        means = []
        for rep in range(repeats):
            table = evaluate(policy, scenarios, run_params, cfg, altitude_m,
                             prefs=w, seed_base=1000 + rep)
            means.append(float(table.collected_pct.mean()))
        out[label] = {
            "mean": float(np.mean(means)),
            "std": float(np.std(means)),
            "repeats": repeats,
        }
    return out


# --- exports --------------------------------------------------------------------


def export_trajectory(record: EpisodeRecord, path: str | Path) -> None:
    """Ordered cell list (length steps + 1) with per-step reward vectors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "x", "y", "reward_data", "reward_energy",
                         "scheduled_device"])
        writer.writerow([0, record.cells[0][0], record.cells[0][1], "", "", ""])
        for t in range(record.steps):
            sched = record.scheduled[t]
            writer.writerow([
                t + 1, record.cells[t + 1][0], record.cells[t + 1][1],
                record.rewards[t, 0], record.rewards[t, 1],
                "" if sched is None else sched,
            ])


def final_layer_attention(record: EpisodeRecord) -> np.ndarray:
    """Head-averaged final-layer attention matrices, one (T, T) per step."""
    if not record.attention:
        raise ValueError("episode was recorded without attention")
    return np.stack([np.asarray(step[-1])[0].mean(axis=0)
                     for step in record.attention])


def attention_column_sums(record: EpisodeRecord,
                          valid_queries: np.ndarray) -> np.ndarray:
    """Per-step total attention received by each token: final-layer matrices
    are head-averaged, then summed down each key column over the valid query
    rows (masked device rows issue no meaningful queries)."""
    mats = final_layer_attention(record)
    return mats[:, valid_queries, :].sum(axis=1)


def export_attention(record: EpisodeRecord, path: str | Path) -> None:
    """Per-step attention matrices with token labels (every layer + head)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = record.token_labels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "layer", "head", "query"] + labels)
        for t, layers in enumerate(record.attention):
            for li, mat in enumerate(layers):
                heads = np.asarray(mat)[0]  # (H, T, T)
                for hi in range(heads.shape[0]):
                    for qi, label in enumerate(labels):
                        writer.writerow(
                            [t, li, hi, label] + list(heads[hi, qi])
                        )
