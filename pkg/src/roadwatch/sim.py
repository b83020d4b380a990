"""Two-lane cellular-automaton traffic simulator with driver personalities.

Longitudinal motion follows the Nagel-Schreckenberg rules on a ring of
cells (two lanes, one direction).  A continuous lateral offset is overlaid
on each lane so that weaving, drifting and straddling can be expressed;
the automaton itself never looks at it.

Units: positions in cells, speeds in cells/tick inside the automaton.
Per-frame traces are reported in metres, m/s and m/s^2.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

LANE_WIDTH_M = 3.5
HARD_BRAKE_DECEL = -8.0  # m/s^2
NORMAL_BRAKE_DECEL = -3.0  # m/s^2
# steering proxy: degrees per (lateral offset unit / second)
STEER_GAIN_DEG = 5.0


class ConfigError(ValueError):
    """Raised for an invalid simulator configuration."""


class Label(str, enum.Enum):
    SAFE = "safe"
    DISTRACTED = "distracted"
    AGGRESSIVE = "aggressive"


class Braking(str, enum.Enum):
    NONE = "none"
    NORMAL = "normal"
    HARD = "hard"


# micro-behaviour flags carried in traces, one bit each
FLAG_BITS = {
    "weave": 1,
    "sudden_steer": 2,
    "hard_brake": 4,
    "drift": 8,
    "straddle": 16,
    "overspeed": 32,
    "slow_speed": 64,
}

RATE_FIELDS = (
    "weave_rate",
    "sudden_steer_rate",
    "hard_brake_rate",
    "drift_rate",
    "straddle_rate",
    "overspeed_rate",
    "slow_speed_rate",
)


def flag_names(mask: int) -> list[str]:
    return [name for name, bit in FLAG_BITS.items() if mask & bit]


@dataclass(frozen=True)
class DriverProfile:
    """Personality of one simulated driver.

    Rates are per-tick probabilities of starting the corresponding maneuver.
    """

    label: Label = Label.SAFE
    weave_rate: float = 0.0
    sudden_steer_rate: float = 0.0
    hard_brake_rate: float = 0.0
    drift_rate: float = 0.0
    straddle_rate: float = 0.0
    overspeed_rate: float = 0.0
    slow_speed_rate: float = 0.0
    overspeed_factor: float = 1.4
    lateral_oscillation_period: int = 2  # ticks

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        for name in RATE_FIELDS:
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"{name}={r} is not a probability")
        if self.overspeed_factor <= 1.0:
            raise ConfigError("overspeed_factor must exceed 1")
        if self.lateral_oscillation_period < 1:
            raise ConfigError("lateral_oscillation_period must be >= 1 tick")

    @classmethod
    def safe(cls) -> DriverProfile:
        return cls(Label.SAFE)

    @classmethod
    def aggressive(cls, **overrides) -> DriverProfile:
        kw = dict(
            overspeed_rate=0.10,
            hard_brake_rate=0.08,
            weave_rate=0.06,
            sudden_steer_rate=0.06,
        )
        kw.update(overrides)
        return cls(Label.AGGRESSIVE, **kw)

    @classmethod
    def distracted(cls, **overrides) -> DriverProfile:
        kw = dict(drift_rate=0.08, straddle_rate=0.05, slow_speed_rate=0.06)
        kw.update(overrides)
        return cls(Label.DISTRACTED, **kw)

    @classmethod
    def default_for(cls, label: Label | str) -> DriverProfile:
        return {
            Label.SAFE: cls.safe,
            Label.AGGRESSIVE: cls.aggressive,
            Label.DISTRACTED: cls.distracted,
        }[Label(label)]()

    def scaled(self, rate_name: str, factor: float) -> DriverProfile:
        if rate_name not in RATE_FIELDS:
            raise KeyError(rate_name)
        return replace(self, **{rate_name: getattr(self, rate_name) * factor})


@dataclass(frozen=True)
class SimConfig:
    profiles: tuple[DriverProfile, ...] = ()
    seed: int = 0
    duration_s: float = 120.0
    lanes: int = 2
    cells_per_lane: int = 35
    cell_length_m: float = 7.5
    tick_s: float = 1.0
    subtick_frames: int = 30
    v_max: int = 5
    slowdown_prob: float = 0.1
    speed_limit_mps: float = 37.5
    initial_speed: int | None = None  # None: start at v_max

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))

    @property
    def vehicle_count(self) -> int:
        return len(self.profiles)

    @property
    def ticks(self) -> int:
        return int(round(self.duration_s / self.tick_s))

    @property
    def fps(self) -> float:
        return self.subtick_frames / self.tick_s

    @property
    def cell_speed_mps(self) -> float:
        """Metres per second corresponding to one cell per tick."""
        return self.cell_length_m / self.tick_s

    @property
    def ring_length_m(self) -> float:
        return self.cells_per_lane * self.cell_length_m

    def validate(self) -> None:
        if self.lanes != 2:
            raise ConfigError("only two lanes are supported")
        if self.v_max < 1:
            raise ConfigError("v_max must be >= 1")
        if self.cells_per_lane < 2 * self.v_max:
            raise ConfigError("cells_per_lane must be >= 2 * v_max")
        if self.vehicle_count > self.lanes * self.cells_per_lane:
            raise ConfigError(
                f"{self.vehicle_count} vehicles do not fit on "
                f"{self.lanes}x{self.cells_per_lane} cells"
            )
        if not 0.0 <= self.slowdown_prob <= 1.0:
            raise ConfigError("slowdown_prob must be a probability")
        if self.subtick_frames < 1 or self.tick_s <= 0 or self.duration_s < 0:
            raise ConfigError("time discretisation must be positive")
        if self.initial_speed is not None and not 0 <= self.initial_speed <= self.v_max:
            raise ConfigError("initial_speed must lie in [0, v_max]")


@dataclass
class Maneuver:
    """A lateral maneuver in progress; times are in ticks."""

    kind: str
    side: int  # -1 toward the left line, +1 toward the right line
    start: float
    duration: float
    period: float = 2.0

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration

    def offset(self, t: float) -> float:
        tau = t - self.start
        if tau < 0 or tau >= self.duration:
            return 0.0
        d = self.duration
        if self.kind == "drift":
            return self.side * 0.25 * (1 - math.cos(2 * math.pi * tau / d))
        if self.kind == "straddle":
            ramp = 1.5
            if tau < ramp:
                a = 0.5 * (1 - math.cos(math.pi * tau / ramp))
            elif tau > d - ramp:
                a = 0.5 * (1 - math.cos(math.pi * (d - tau) / ramp))
            else:
                a = 1.0
            return self.side * 1.0 * a
        if self.kind == "weave":
            return self.side * 0.75 * math.sin(2 * math.pi * tau / self.period)
        if self.kind == "sudden_steer":
            jerk = 4 / 30  # the swerve completes within ~4 frames
            if tau < jerk:
                return self.side * 0.4 * tau / jerk
            return self.side * 0.2 * (1 + math.cos(math.pi * (tau - jerk) / (d - jerk)))
        raise ValueError(self.kind)


LATERAL_DURATIONS = {"drift": 4.0, "straddle": 6.0, "weave": 4.0, "sudden_steer": 1.5}
SPEED_EPISODE_TICKS = 10


@dataclass
class ManeuverDirective:
    """What a personality asks of its vehicle for one tick.

    Empty (all defaults) means plain car-following.
    """

    lateral: str | None = None
    side: int = 0
    accel_mps2: float | None = None  # set for a hard-brake request
    target_speed_mps: float | None = None
    speed_mode: str | None = None  # "overspeed" or "slow_speed"

    @property
    def empty(self) -> bool:
        return self.lateral is None and self.accel_mps2 is None and self.speed_mode is None


@dataclass
class VehicleState:
    vehicle_id: int
    lane: int
    cell: int
    speed: int  # cells/tick
    profile: DriverProfile
    lateral_offset: float = 0.0
    accel: float = 0.0  # m/s^2 over the last tick
    steering_angle: float = 0.0
    orientation: float = 0.0
    braking: Braking = Braking.NONE
    maneuver: Maneuver | None = None
    speed_mode: str | None = None
    speed_mode_until: int = -1
    flags: int = 0
    position: int = 0  # unwrapped cell index, for continuous kinematics
    tick: int = 0


@dataclass
class WorldState:
    config: SimConfig
    tick: int
    vehicles: list[VehicleState]
    rng: np.random.Generator
    personality_rngs: list[np.random.Generator]

    def occupancy(self) -> dict[tuple[int, int], int]:
        return {(v.lane, v.cell): v.vehicle_id for v in self.vehicles}

    def vehicle(self, vehicle_id: int) -> VehicleState:
        return self.vehicles[vehicle_id]


@dataclass(frozen=True)
class TraceRecord:
    frame: int
    vehicle_id: int
    lane: int
    cell: int
    lateral_offset: float
    speed_mps: float
    accel_mps2: float
    steering_deg: float
    braking: str
    orientation_deg: float
    injected_flags: int
    label: str
    x_m: float = 0.0
    y_m: float = 0.0


def init_world(config: SimConfig) -> WorldState:
    """Place every vehicle on a distinct (lane, cell) and seed the RNG streams."""
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    world_ss, *vehicle_ss = ss.spawn(1 + config.vehicle_count)
    rng = np.random.default_rng(world_ss)
    n_slots = config.lanes * config.cells_per_lane
    slots = np.sort(rng.choice(n_slots, size=config.vehicle_count, replace=False))
    v0 = config.v_max if config.initial_speed is None else config.initial_speed
    vehicles = []
    for vid, (slot, profile) in enumerate(zip(slots, config.profiles)):
        lane = int(slot // config.cells_per_lane) + 1
        cell = int(slot % config.cells_per_lane)
        vehicles.append(
            VehicleState(vid, lane, cell, int(v0), profile, position=cell)
        )
    return WorldState(
        config, 0, vehicles, rng, [np.random.default_rng(s) for s in vehicle_ss]
    )


def _gap_ahead(occ, lane: int, cell: int, n: int, horizon: int, exclude: int | None = None) -> int:
    g = 0
    while g < horizon:
        other = occ.get((lane, (cell + g + 1) % n))
        if other is not None and other != exclude:
            break
        g += 1
    return g


def _gap_behind(occ, lane: int, cell: int, n: int, horizon: int) -> int:
    g = 0
    while g < horizon and (lane, (cell - g - 1) % n) not in occ:
        g += 1
    return g


def _effective_vmax(config: SimConfig, v: VehicleState) -> int:
    limit_cells = config.speed_limit_mps / config.cell_speed_mps
    if v.speed_mode == "overspeed":
        return max(config.v_max, int(math.floor(v.profile.overspeed_factor * limit_cells)))
    if v.speed_mode == "slow_speed":
        return max(1, int(math.floor(0.5 * limit_cells)))
    return config.v_max


def decide_lane_change(world: WorldState, vehicle_id: int) -> int | None:
    """Return the lane to move into, or None to stay.

    Gaps are looked up to one cell beyond the vehicle's reachable speed, so
    a vehicle that is not hindered has no incentive to move; equal gaps
    keep the vehicle in its lane.
    """
    cfg = world.config
    v = world.vehicle(vehicle_id)
    occ = world.occupancy()
    n = cfg.cells_per_lane
    target = 3 - v.lane
    if (target, v.cell) in occ:
        return None
    horizon = _effective_vmax(cfg, v) + 1
    ahead_cur = _gap_ahead(occ, v.lane, v.cell, n, horizon)
    ahead_tgt = _gap_ahead(occ, target, v.cell, n, horizon)
    behind_tgt = _gap_behind(occ, target, v.cell, n, cfg.v_max)
    if ahead_tgt > ahead_cur and ahead_tgt >= v.speed and behind_tgt >= cfg.v_max:
        return target
    return None


def apply_personality(profile: DriverProfile, state: VehicleState, rng: np.random.Generator,
                      config: SimConfig | None = None) -> ManeuverDirective:
    """Sample this tick's maneuver requests from the profile's propensities.

    One uniform draw is consumed per propensity regardless of outcome, so
    changing one rate leaves the other maneuvers' random streams intact.
    """
    draws = rng.random(len(RATE_FIELDS))
    directive = ManeuverDirective()
    if profile.label == Label.SAFE:
        return directive
    hit = {name: draws[i] < getattr(profile, name) for i, name in enumerate(RATE_FIELDS)}
    sides = rng.random(4)

    lateral_busy = state.maneuver is not None and state.maneuver.active(float(state.tick))
    if not lateral_busy:
        for i, kind in enumerate(("weave", "sudden_steer", "straddle", "drift")):
            if hit[f"{kind}_rate"]:
                directive.lateral = kind
                directive.side = -1 if sides[i] < 0.5 else 1
                break

    if state.speed_mode is None:
        limit = config.speed_limit_mps if config else 37.5
        if hit["overspeed_rate"]:
            directive.speed_mode = "overspeed"
            directive.target_speed_mps = profile.overspeed_factor * limit
        elif hit["slow_speed_rate"]:
            directive.speed_mode = "slow_speed"
            directive.target_speed_mps = 0.5 * limit

    if hit["hard_brake_rate"]:
        directive.accel_mps2 = HARD_BRAKE_DECEL
    return directive


def step(world: WorldState) -> tuple[WorldState, list[TraceRecord]]:
    """Advance the world by one tick (mutates and returns it).

    Returns the tick-boundary snapshot of every vehicle *after* the update.
    """
    cfg = world.config
    n = cfg.cells_per_lane
    t = world.tick
    cs = cfg.cell_speed_mps

    directives: dict[int, ManeuverDirective] = {}
    for v in world.vehicles:
        v.tick = t
        if v.speed_mode is not None and t >= v.speed_mode_until:
            v.speed_mode = None
        d = apply_personality(v.profile, v, world.personality_rngs[v.vehicle_id], cfg)
        directives[v.vehicle_id] = d
        if d.lateral is not None:
            v.maneuver = Maneuver(
                d.lateral, d.side, float(t), LATERAL_DURATIONS[d.lateral],
                float(v.profile.lateral_oscillation_period),
            )
        if d.speed_mode is not None:
            v.speed_mode = d.speed_mode
            v.speed_mode_until = t + SPEED_EPISODE_TICKS

    # lane changes: decided on the pre-tick configuration, applied atomically
    order = sorted(world.vehicles, key=lambda v: (-v.cell, v.lane))
    wanted = {v.vehicle_id: decide_lane_change(world, v.vehicle_id) for v in order}
    occ = world.occupancy()
    for v in order:
        tgt = wanted[v.vehicle_id]
        if tgt is not None and (tgt, v.cell) not in occ:
            del occ[(v.lane, v.cell)]
            v.lane = tgt
            occ[(v.lane, v.cell)] = v.vehicle_id

    # longitudinal update, leader first
    slow_draws = world.rng.random(len(world.vehicles))
    for v in order:
        v_old = v.speed
        vmax_eff = _effective_vmax(cfg, v)
        vel = min(v_old + 1, vmax_eff) if v_old <= vmax_eff else v_old - 1
        gap = _gap_ahead(occ, v.lane, v.cell, n, n, exclude=v.vehicle_id)
        vel = min(vel, gap)
        if slow_draws[v.vehicle_id] < cfg.slowdown_prob:
            vel = max(vel - 1, 0)
        hard = False
        d = directives[v.vehicle_id]
        if d.accel_mps2 is not None:
            drop = int(math.ceil(-d.accel_mps2 * cfg.tick_s / cs))
            if v_old >= drop:
                vel = min(vel, v_old - drop)
                hard = True
        del occ[(v.lane, v.cell)]
        v.cell = (v.cell + vel) % n
        v.position += vel
        occ[(v.lane, v.cell)] = v.vehicle_id
        v.accel = (vel - v_old) * cs / cfg.tick_s
        v.speed = vel
        v.braking = (
            Braking.HARD if v.accel <= HARD_BRAKE_DECEL
            else Braking.NORMAL if v.accel <= NORMAL_BRAKE_DECEL
            else Braking.NONE
        )
        flags = 0
        if hard and v.accel <= HARD_BRAKE_DECEL:
            flags |= FLAG_BITS["hard_brake"]
        if v.speed > cfg.v_max:
            flags |= FLAG_BITS["overspeed"]
        if v.speed_mode == "slow_speed":
            flags |= FLAG_BITS["slow_speed"]
        v.flags = flags

    world.tick = t + 1
    records = []
    eps = 1e-3
    for v in world.vehicles:
        v.tick = world.tick
        m = v.maneuver
        now = float(world.tick)
        v.lateral_offset = m.offset(now) if m else 0.0
        rate = (m.offset(now + eps) - m.offset(now - eps)) / (2 * eps * cfg.tick_s) if m else 0.0
        v.steering_angle = STEER_GAIN_DEG * rate
        v.orientation = math.degrees(math.atan2(rate * LANE_WIDTH_M / 2, v.speed * cs))
        records.append(_snapshot(cfg, v, world.tick * cfg.subtick_frames))
    return world, records


def _snapshot(cfg: SimConfig, v: VehicleState, frame: int) -> TraceRecord:
    return TraceRecord(
        frame=frame, vehicle_id=v.vehicle_id, lane=v.lane, cell=v.cell,
        lateral_offset=v.lateral_offset, speed_mps=v.speed * cfg.cell_speed_mps,
        accel_mps2=v.accel, steering_deg=v.steering_angle, braking=v.braking.value,
        orientation_deg=v.orientation, injected_flags=v.flags, label=v.profile.label.value,
    )


@dataclass
class VehicleSeries:
    """Per-frame columns for one vehicle (ground truth or estimate)."""

    vehicle_id: int
    label: str
    frame: np.ndarray
    lane: np.ndarray
    cell: np.ndarray
    lateral_offset: np.ndarray
    speed_mps: np.ndarray
    accel_mps2: np.ndarray
    steering_deg: np.ndarray
    orientation_deg: np.ndarray
    flags: np.ndarray
    x_m: np.ndarray
    y_m: np.ndarray
    confident: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def braking(self) -> np.ndarray:
        out = np.full(len(self), Braking.NONE.value, dtype=object)
        out[self.accel_mps2 <= NORMAL_BRAKE_DECEL] = Braking.NORMAL.value
        out[self.accel_mps2 <= HARD_BRAKE_DECEL] = Braking.HARD.value
        return out

    def records(self) -> Iterator[TraceRecord]:
        braking = self.braking
        for i in range(len(self)):
            yield TraceRecord(
                int(self.frame[i]), self.vehicle_id, int(self.lane[i]), int(self.cell[i]),
                float(self.lateral_offset[i]), float(self.speed_mps[i]),
                float(self.accel_mps2[i]), float(self.steering_deg[i]), braking[i],
                float(self.orientation_deg[i]), int(self.flags[i]), self.label,
                float(self.x_m[i]), float(self.y_m[i]),
            )


@dataclass
class GroundTruthTrace:
    config: SimConfig
    series: dict[int, VehicleSeries] = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(next(iter(self.series.values()))) if self.series else 0

    def labels(self) -> dict[int, str]:
        return {vid: s.label for vid, s in self.series.items()}

    def records(self) -> Iterator[TraceRecord]:
        """Records ordered by frame, then vehicle id."""
        its = [s.records() for _, s in sorted(self.series.items())]
        for rows in zip(*its):
            yield from rows


def lane_center_m(lane) -> np.ndarray | float:
    return (np.asarray(lane) - 0.5) * LANE_WIDTH_M


def run_scenario(config: SimConfig) -> GroundTruthTrace:
    """Simulate ``config.ticks`` ticks and interpolate every tick into frames.

    Within a tick the speed ramps linearly between its tick-boundary values,
    so acceleration is piecewise constant and the continuous position stays
    within half a cell of the automaton cell.
    """
    world = init_world(config)
    ticks = config.ticks
    trace = GroundTruthTrace(config)
    if ticks == 0:
        return trace
    nv = config.vehicle_count
    F = config.subtick_frames
    pos = np.zeros((ticks + 1, nv))
    spd = np.zeros((ticks + 1, nv))
    lane = np.zeros((ticks, nv), dtype=int)
    cell = np.zeros((ticks, nv), dtype=int)
    flags = np.zeros((ticks, nv), dtype=np.int64)
    maneuvers: list[list[Maneuver]] = [[] for _ in range(nv)]
    for v in world.vehicles:
        pos[0, v.vehicle_id] = v.position
        spd[0, v.vehicle_id] = v.speed
    for t in range(ticks):
        cells_before = [v.cell for v in world.vehicles]
        world, _ = step(world)
        for v in world.vehicles:
            i = v.vehicle_id
            pos[t + 1, i] = v.position
            spd[t + 1, i] = v.speed
            lane[t, i] = v.lane
            cell[t, i] = cells_before[i]
            flags[t, i] = v.flags
            if v.maneuver is not None and (not maneuvers[i] or maneuvers[i][-1] is not v.maneuver):
                maneuvers[i].append(v.maneuver)

    s = np.arange(F) / F
    frames = np.arange(ticks * F)
    tf = frames / F  # time in ticks
    cs = config.cell_speed_mps
    dt = config.tick_s / F
    for i, v in enumerate(world.vehicles):
        v0 = spd[:-1, i][:, None]
        v1 = spd[1:, i][:, None]
        # continuous position lags the cell by half the current speed
        p0 = (pos[:-1, i] - spd[:-1, i] / 2)[:, None]
        x_cells = (p0 + v0 * s + (v1 - v0) * s**2 / 2).ravel()
        speed = ((v0 + (v1 - v0) * s) * cs).ravel()
        accel = np.repeat((spd[1:, i] - spd[:-1, i]) * cs / config.tick_s, F)
        offset = np.zeros(len(frames))
        fl = np.repeat(flags[:, i], F)
        for m in maneuvers[i]:
            lo = int(round(m.start * F))
            hi = min(len(frames), int(math.ceil((m.start + m.duration) * F)))
            idx = np.arange(lo, hi)
            offset[idx] = [m.offset(x) for x in tf[idx]]
            fl[idx] |= FLAG_BITS[m.kind]
        lane_f = np.repeat(lane[:, i], F)
        lat_rate = np.gradient(offset, dt)  # offset units per second
        vy = lat_rate * LANE_WIDTH_M / 2
        orientation = np.degrees(np.arctan2(vy, speed))
        trace.series[i] = VehicleSeries(
            vehicle_id=i,
            label=v.profile.label.value,
            frame=frames.copy(),
            lane=lane_f,
            cell=np.repeat(cell[:, i], F),
            lateral_offset=offset,
            speed_mps=speed,
            accel_mps2=accel,
            steering_deg=STEER_GAIN_DEG * lat_rate,
            orientation_deg=orientation,
            flags=fl,
            x_m=np.mod(x_cells * config.cell_length_m, config.ring_length_m),
            y_m=lane_center_m(lane_f) + offset * LANE_WIDTH_M / 2,
        )
    return trace
