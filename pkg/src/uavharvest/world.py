"""Urban grid world: city maps, devices, UAV kinematics, safety controller.

Coordinates are cell indices (x, y) with x in [0, L) and y in [0, W); a cell
maps to metric position (x * c, y * c). The UAV flies at a fixed altitude
above the tallest building, so horizontal motion is never obstructed.
Battery is held in half-unit fixed point (an integer count of 0.5 units):
hovering costs one half-unit, any move costs two.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from .config import WorldConfig

HOVER_COST_HALF = 1  # half-units per hover
MOVE_COST_HALF = 2   # half-units per cardinal move


class GenerationError(Exception):
    """City generation could not satisfy its constraints."""


class PlacementError(Exception):
    """Device placement rejection sampling exhausted its budget."""


class ScenarioFormatError(Exception):
    """A scenario file is malformed or violates an invariant."""


class SafetyViolationError(Exception):
    """A state that the safety controller should have made unreachable."""


class Action(IntEnum):
    HOVER = 0
    NORTH = 1
    WEST = 2
    SOUTH = 3
    EAST = 4


# Cell-unit displacement per action, ordered like Action.
ACTION_DELTAS = ((0, 0), (0, 1), (-1, 0), (0, -1), (1, 0))
NUM_ACTIONS = len(ACTION_DELTAS)


@dataclass(frozen=True)
class CityMap:
    """Discretized height grid with designated start and terminal cells."""

    cell_size_m: float
    heights: np.ndarray  # (L, W), metres, 0 off buildings
    start: tuple[int, int]
    terminal: tuple[int, int]

    @property
    def length_cells(self) -> int:
        return self.heights.shape[0]

    @property
    def width_cells(self) -> int:
        return self.heights.shape[1]

    @property
    def max_height(self) -> float:
        return float(self.heights.max(initial=0.0))

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        x, y = cell
        return 0 <= x < self.length_cells and 0 <= y < self.width_cells

    def is_building(self, cell: tuple[int, int]) -> bool:
        return self.heights[cell] > 0.0

    def validate(self) -> None:
        if self.heights.ndim != 2:
            raise ScenarioFormatError("heights must be a 2-D grid")
        if (self.heights < 0).any():
            raise ScenarioFormatError("building heights must be non-negative")
        for name, cell in (("start", self.start), ("terminal", self.terminal)):
            if not self.in_bounds(cell):
                raise ScenarioFormatError(f"{name} cell {cell} lies outside the grid")
            if self.is_building(cell):
                raise ScenarioFormatError(f"{name} cell {cell} lies on a building")


@dataclass(frozen=True)
class Device:
    """Ground IoT device with its initial data load (data units)."""

    position: tuple[int, int]
    initial_data: float


@dataclass(frozen=True)
class UavState:
    position: tuple[int, int]
    altitude_m: float
    battery_half: int  # remaining battery in half-units

    @property
    def battery(self) -> float:
        return self.battery_half / 2.0


@dataclass(frozen=True)
class Scenario:
    """A city map plus device placements, initial battery and episode kind.

    kind "RD" (reach destination) has distinct start/terminal cells; "RB"
    (return to base) has coinciding ones.
    """

    city: CityMap
    devices: tuple[Device, ...]
    battery: float
    kind: str
    seed: int

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    @property
    def total_data(self) -> float:
        return float(sum(d.initial_data for d in self.devices))

    def validate(self, min_spacing_m: float | None = None) -> None:
        self.city.validate()
        if self.kind not in ("RD", "RB"):
            raise ScenarioFormatError(f"kind must be RD or RB, got {self.kind!r}")
        if self.kind == "RB" and self.city.start != self.city.terminal:
            raise ScenarioFormatError("RB scenario requires start == terminal")
        if self.kind == "RD" and self.city.start == self.city.terminal:
            raise ScenarioFormatError("RD scenario requires start != terminal")
        if self.battery <= 0:
            raise ScenarioFormatError("battery must be positive")
        trip = manhattan(self.city.start, self.city.terminal)
        if self.battery < trip:
            raise ScenarioFormatError(
                f"battery {self.battery} cannot cover the start-terminal "
                f"distance {trip}"
            )
        for i, dev in enumerate(self.devices):
            if not self.city.in_bounds(dev.position):
                raise ScenarioFormatError(
                    f"devices[{i}]: position {dev.position} lies outside the grid"
                )
            if self.city.is_building(dev.position):
                raise ScenarioFormatError(
                    f"devices[{i}]: position {dev.position} lies on a building"
                )
            if dev.initial_data < 0:
                raise ScenarioFormatError(f"devices[{i}]: negative data load")
        if min_spacing_m is not None:
            spacing = pairwise_min_spacing_m(self.devices, self.city.cell_size_m)
            if spacing < min_spacing_m:
                raise ScenarioFormatError(
                    f"device spacing {spacing:.1f}m below minimum {min_spacing_m}m"
                )


def pairwise_min_spacing_m(devices: tuple[Device, ...], cell_size_m: float) -> float:
    if len(devices) < 2:
        return float("inf")
    best = float("inf")
    for i in range(len(devices)):
        xi, yi = devices[i].position
        for j in range(i + 1, len(devices)):
            xj, yj = devices[j].position
            d = cell_size_m * float(np.hypot(xi - xj, yi - yj))
            best = min(best, d)
    return best


def generate_city(
    seed: int,
    length_cells: int,
    width_cells: int,
    cell_size_m: float,
    building_density: float,
    height_range: tuple[float, float],
) -> CityMap:
    """Procedurally generate a city map, reproducible from the seed.

    Axis-aligned rectangular buildings are placed by rejection sampling until
    the covered cell fraction reaches ``building_density``. Start and
    terminal zones land on distinct non-building cells.
    """
    if length_cells < 2 or width_cells < 2:
        raise GenerationError("grid must be at least 2x2 cells")
    if not 0.0 <= building_density < 1.0:
        raise GenerationError("building_density must lie in [0, 1)")
    lo, hi = height_range
    if lo < 0 or hi < lo:
        raise GenerationError("height_range must satisfy 0 <= low <= high")

    rng = np.random.default_rng(seed)
    heights = np.zeros((length_cells, width_cells))
    total = length_cells * width_cells
    target = int(round(building_density * total))
    if target > total - 2:
        raise GenerationError(
            "building density leaves no room for start/terminal zones"
        )

    max_side = max(1, min(length_cells, width_cells) // 4)
    budget = 200 + 50 * max(target, 1)
    attempts = 0
    while int((heights > 0).sum()) < target:
        attempts += 1
        if attempts > budget:
            raise GenerationError(
                f"could not reach building density {building_density} "
                f"after {budget} placements"
            )
        bw = int(rng.integers(1, max_side + 1))
        bh = int(rng.integers(1, max_side + 1))
        x0 = int(rng.integers(0, length_cells - bw + 1))
        y0 = int(rng.integers(0, width_cells - bh + 1))
        h = float(rng.uniform(lo, hi)) if hi > lo else float(hi)
        if h <= 0:
            continue
        heights[x0 : x0 + bw, y0 : y0 + bh] = h

    empty = np.argwhere(heights == 0.0)
    if len(empty) < 2:
        raise GenerationError("no free cells left for start/terminal zones")
    picks = rng.choice(len(empty), size=2, replace=False)
    start = tuple(int(v) for v in empty[picks[0]])
    terminal = tuple(int(v) for v in empty[picks[1]])
    return CityMap(cell_size_m, heights, start, terminal)


def place_devices(
    city: CityMap,
    count: int,
    min_spacing_m: float,
    data_range: tuple[float, float],
    seed: int,
) -> tuple[Device, ...]:
    """Place devices on free cells with a minimum pairwise spacing."""
    if count < 1:
        raise PlacementError("device count must be >= 1")
    lo, hi = data_range
    if lo < 0 or hi < lo:
        raise PlacementError("data_range must satisfy 0 <= low <= high")
    rng = np.random.default_rng(seed)
    empty = np.argwhere(city.heights == 0.0)
    if len(empty) == 0:
        raise PlacementError("map has no free cells for devices")

    placed: list[tuple[int, int]] = []
    budget = 1000 * count
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > budget:
            raise PlacementError(
                f"could not place {count} devices with spacing >= "
                f"{min_spacing_m}m after {budget} samples"
            )
        cand = tuple(int(v) for v in empty[rng.integers(0, len(empty))])
        ok = all(
            city.cell_size_m * np.hypot(cand[0] - p[0], cand[1] - p[1])
            >= min_spacing_m
            for p in placed
        )
        if ok:
            placed.append(cand)
    loads = rng.uniform(lo, hi, size=count)
    return tuple(Device(pos, float(d)) for pos, d in zip(placed, loads))


def generate_scenario(cfg: WorldConfig, seed: int) -> Scenario:
    """Generate a full scenario (map + devices + battery), pure in the seed."""
    seq = np.random.SeedSequence(seed)
    city_seed, dev_seed = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
    city = generate_city(
        city_seed,
        cfg.length_cells,
        cfg.width_cells,
        cfg.cell_size_m,
        cfg.building_density,
        (cfg.height_min_m, cfg.height_max_m),
    )
    if cfg.kind == "RB":
        city = replace(city, terminal=city.start)
    devices = place_devices(
        city,
        cfg.num_devices,
        cfg.device_min_spacing_m,
        (cfg.data_min, cfg.data_max),
        dev_seed,
    )
    return Scenario(city, devices, cfg.battery, cfg.kind, seed)


def resample_devices(scenario: Scenario, cfg: WorldConfig, seed: int) -> Scenario:
    """Same map and battery, fresh device positions and data loads."""
    devices = place_devices(
        scenario.city,
        cfg.num_devices,
        cfg.device_min_spacing_m,
        (cfg.data_min, cfg.data_max),
        seed,
    )
    return replace(scenario, devices=devices, seed=seed)


def manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def min_battery_to_terminal(cell: tuple[int, int], city: CityMap) -> float:
    """Battery units needed to reach the terminal: one per cell of Manhattan
    distance, since flight above the tallest building is unobstructed."""
    return float(manhattan(cell, city.terminal))


def apply_action(uav: UavState, action: Action | int) -> UavState:
    """Move per the action's displacement and decrement the battery
    (half a unit for hover, one unit otherwise). Legality is the caller's
    contract; see legal_actions."""
    dx, dy = ACTION_DELTAS[int(action)]
    cost = HOVER_COST_HALF if int(action) == Action.HOVER else MOVE_COST_HALF
    return UavState(
        position=(uav.position[0] + dx, uav.position[1] + dy),
        altitude_m=uav.altitude_m,
        battery_half=uav.battery_half - cost,
    )


def legal_actions(uav: UavState, city: CityMap) -> np.ndarray:
    """Boolean mask over the five actions enforced by the safety controller.

    An action is legal iff it stays on the grid and leaves enough battery to
    still reach the terminal afterwards (post-action slack >= 0). At zero
    slack this reduces to "only moves that shrink the Manhattan distance";
    hover is masked there because it costs half a unit without progress.
    """
    required_half = MOVE_COST_HALF * manhattan(uav.position, city.terminal)
    if uav.battery_half < required_half:
        raise SafetyViolationError(
            f"battery {uav.battery} below minimum "
            f"{required_half / 2:.1f} needed from {uav.position}"
        )
    mask = np.zeros(NUM_ACTIONS, dtype=bool)
    for action in Action:
        dx, dy = ACTION_DELTAS[action]
        nxt = (uav.position[0] + dx, uav.position[1] + dy)
        if not city.in_bounds(nxt):
            continue
        cost = HOVER_COST_HALF if action == Action.HOVER else MOVE_COST_HALF
        next_required_half = MOVE_COST_HALF * manhattan(nxt, city.terminal)
        if uav.battery_half - cost >= next_required_half:
            mask[action] = True
    return mask


# --- persistence ------------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict:
    return {
        "cell_size_m": s.city.cell_size_m,
        "heights": s.city.heights.tolist(),
        "start": list(s.city.start),
        "terminal": list(s.city.terminal),
        "devices": [
            {"x": d.position[0], "y": d.position[1], "data": d.initial_data}
            for d in s.devices
        ],
        "battery": s.battery,
        "kind": s.kind,
        "seed": s.seed,
    }


def scenario_from_dict(data: dict) -> Scenario:
    required = {
        "cell_size_m", "heights", "start", "terminal",
        "devices", "battery", "kind", "seed",
    }
    missing = sorted(required - set(data))
    if missing:
        raise ScenarioFormatError(f"missing field(s): {', '.join(missing)}")
    try:
        heights = np.asarray(data["heights"], dtype=float)
    except ValueError as exc:
        raise ScenarioFormatError(f"heights: {exc}") from None
    if heights.ndim != 2:
        raise ScenarioFormatError("heights: rows must all have the same length")
    city = CityMap(
        cell_size_m=float(data["cell_size_m"]),
        heights=heights,
        start=tuple(int(v) for v in data["start"]),
        terminal=tuple(int(v) for v in data["terminal"]),
    )
    devices = []
    for i, entry in enumerate(data["devices"]):
        try:
            devices.append(
                Device((int(entry["x"]), int(entry["y"])), float(entry["data"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioFormatError(f"devices[{i}]: {exc!r}") from None
    scenario = Scenario(
        city=city,
        devices=tuple(devices),
        battery=float(data["battery"]),
        kind=str(data["kind"]),
        seed=int(data["seed"]),
    )
    scenario.validate()
    return scenario


def save_scenario(s: Scenario, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scenario_to_dict(s), indent=1))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ScenarioFormatError(f"{path}: expected a JSON object")
    try:
        return scenario_from_dict(data)
    except ScenarioFormatError as exc:
        raise ScenarioFormatError(f"{path}: {exc}") from None
