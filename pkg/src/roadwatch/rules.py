"""Driving-behavior rule library.

Detectors turn one vehicle's kinematic series into primitive events and
scalar fluents; the rule text below says how those events initiate and
terminate the micro-behavior fluents and the composite behaviors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ec import RuleDef, parse_rules
from .sim import HARD_BRAKE_DECEL, NORMAL_BRAKE_DECEL, VehicleSeries


class DetectorInputError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorParams:
    os: float = 41.25  # overspeed threshold, m/s
    slow_factor: float = 0.5
    speed_limit: float = 37.5
    hbd: float = HARD_BRAKE_DECEL
    nbd: float = NORMAL_BRAKE_DECEL
    drift_offset: float = 0.3
    drift_min_frames: int = 15
    proximity_offset: float = 0.6
    straddle_offset: float = 0.9
    weave_alternations: int = 2
    weave_window_frames: int = 90
    sudden_steer_deg_per_frame: float = 1.5
    sudden_steer_span_frames: int = 3  # per-frame change is averaged over this span
    behavior_min_frames: int = 30
    lane_change_frames: int = 60
    stopping_frames: int = 15

    def __post_init__(self):
        if not self.hbd < self.nbd < 0:
            raise ValueError("need hbd < nbd < 0")
        if not 0 < self.drift_offset < self.proximity_offset < self.straddle_offset <= 1.25:
            raise ValueError("need 0 < drift_offset < proximity_offset < straddle_offset <= 1.25")
        if not self.os > self.slow_speed:
            raise ValueError("overspeed threshold must exceed the slow-speed threshold")
        if self.weave_alternations < 1 or self.drift_min_frames < 1 or self.sudden_steer_span_frames < 1:
            raise ValueError("frame counts must be positive")

    @property
    def slow_speed(self) -> float:
        return self.slow_factor * self.speed_limit

    @classmethod
    def for_speed_limit(cls, speed_limit: float, **overrides) -> DetectorParams:
        """Thresholds for a road type: overspeed at 10% over the posted limit."""
        kw = {"os": 1.1 * speed_limit, "speed_limit": speed_limit}
        kw.update(overrides)
        return cls(**kw)

    def table(self) -> dict[str, float]:
        """Parameter table referenced by ``th(...)`` literals."""
        return {"os": self.os, "slow": self.slow_speed, "hbd": self.hbd, "nbd": self.nbd}

    def with_overrides(self, **kw) -> DetectorParams:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


EVENTS = (
    "proximityLeft", "proximityRight", "proximityEnd",
    "driftStart", "driftEnd", "straddleStart", "straddleEnd",
    "weaving", "suddenSteer",
    "changeLane1", "changeLane2", "enterLane1", "enterLane2", "laneChangeExpired",
    "stopping",
)
SCALARS = ("speed", "acceleration", "deceleration")


RULES_TEXT = """\
% lane membership
inA(atLane1(v) = true, T) :- hA(enterLane1(v), T).
tA(atLane1(v) = true, T) :- hA(enterLane2(v), T).
inA(atLane2(v) = true, T) :- hA(enterLane2(v), T).
tA(atLane2(v) = true, T) :- hA(enterLane1(v), T).

% a lane change stays relevant for a fixed time after the event
inA(laneChange(v) = true, T) :- hA(changeLane1(v), T).
inA(laneChange(v) = true, T) :- hA(changeLane2(v), T).
tA(laneChange(v) = true, T) :- hA(laneChangeExpired(v), T).

% speed
inA(overSpeed(v) = true, T) :- hoA(speed(v, S), T), hoA(atLane1(v) = true, T), not hoA(atLane2(v) = true, T), th(os, S >= os).
tA(overSpeed(v) = true, T) :- hoA(speed(v, S), T), th(os, S < os).
inA(overSpeed(v) = true, T) :- hoA(speed(v, S), T), hoA(atLane2(v) = true, T), not hoA(atLane1(v) = true, T), th(os, S >= os).
inA(slowSpeed(v) = true, T) :- hoA(speed(v, S), T), th(slow, S < slow).
tA(slowSpeed(v) = true, T) :- hoA(speed(v, S), T), th(slow, S >= slow).

% braking
inA(hardBraking(v) = true, T) :- hoA(acceleration(v, A), T), th(hbd, A <= hbd).
tA(hardBraking(v) = true, T) :- hoA(acceleration(v, A), T), th(hbd, A > hbd).
inA(normalBraking(v) = true, T) :- hoA(acceleration(v, A), T), th(hbd, A > hbd), th(nbd, A <= nbd).
tA(normalBraking(v) = true, T) :- hoA(acceleration(v, A), T), th(nbd, A > nbd).
tA(normalBraking(v) = true, T) :- hoA(acceleration(v, A), T), th(hbd, A <= hbd).

% lateral position
inA(proximity(v) = true, T) :- hA(proximityLeft(v), T).
inA(proximity(v) = true, T) :- hA(proximityRight(v), T).
tA(proximity(v) = true, T) :- hA(proximityEnd(v), T).
inA(laneDrifting(v) = true, T) :- hA(driftStart(v), T).
tA(laneDrifting(v) = true, T) :- hA(driftEnd(v), T).
inA(straddling(v) = true, T) :- hA(straddleStart(v), T).
tA(straddling(v) = true, T) :- hA(straddleEnd(v), T).
"""

AGGRESSIVE_TEXT = """\
inA(aggressiveDriving(v) = true, T) :- hoA(atLane1(v) = true, T), not hoA(atLane2(v) = true, T), hoA(hardBraking(v) = true, T), hoA(laneChange(v) = true, T), hoA(overSpeed(v) = true, T), hA(weaving(v), T), hA(suddenSteer(v), T), not hoA(safeDriving(v) = true, T), not hoA(distractedDriving(v) = true, T).
inA(aggressiveDriving(v) = true, T) :- hoA(atLane2(v) = true, T), not hoA(atLane1(v) = true, T), hoA(hardBraking(v) = true, T), hoA(laneChange(v) = true, T), hoA(overSpeed(v) = true, T), hA(weaving(v), T), hA(suddenSteer(v), T), not hoA(safeDriving(v) = true, T), not hoA(distractedDriving(v) = true, T).
"""

DISTRACTED_TEXT = """\
inA(distractedDriving(v) = true, T) :- hoA(atLane1(v) = true, T), not hoA(atLane2(v) = true, T), hoA(laneDrifting(v) = true, T), hoA(straddling(v) = true, T), hoA(laneChange(v) = true, T), hoA(slowSpeed(v) = true, T), hoA(normalBraking(v) = true, T).
inA(distractedDriving(v) = true, T) :- hoA(atLane2(v) = true, T), not hoA(atLane1(v) = true, T), hoA(laneDrifting(v) = true, T), hoA(straddling(v) = true, T), hoA(laneChange(v) = true, T), hoA(slowSpeed(v) = true, T), hoA(normalBraking(v) = true, T).
"""

SAFE_TEXT = """\
inA(safeDriving(v) = true, T) :- not hoA(aggressiveDriving(v) = true, T), not hoA(distractedDriving(v) = true, T).
tA(safeDriving(v) = true, T) :- hoA(aggressiveDriving(v) = true, T).
tA(safeDriving(v) = true, T) :- hoA(distractedDriving(v) = true, T).
"""

BEHAVIORS = ("aggressiveDriving", "distractedDriving", "safeDriving")


def primitive_rules() -> list[RuleDef]:
    return parse_rules(RULES_TEXT)[0]


def overspeed_rules() -> list[RuleDef]:
    """Lane-1 and lane-2 initiations of overSpeed plus its termination."""
    return [r for r in primitive_rules() if r.fluent == "overSpeed"]


def aggressive_rules(strict_negations: bool = True) -> list[RuleDef]:
    """Strict-conjunction aggressive rules.

    With ``strict_negations=False`` the ``not safeDriving`` literal is
    dropped, which breaks the safe/aggressive cycle so the set can run
    on the engine; classification itself is done by the weighted layer.
    """
    rules = parse_rules(AGGRESSIVE_TEXT)[0]
    if strict_negations:
        return rules
    return [
        RuleDef(r.kind, r.fluent, r.value,
                tuple(l for l in r.body if getattr(l, "fluent", None) != "safeDriving"), r.name)
        for r in rules
    ]


def distracted_rules() -> list[RuleDef]:
    return parse_rules(DISTRACTED_TEXT)[0]


def safe_rule() -> list[RuleDef]:
    return parse_rules(SAFE_TEXT)[0]


def full_rule_set() -> list[RuleDef]:
    """Everything, including the recursive safe/aggressive pair (for dependency analysis)."""
    return primitive_rules() + aggressive_rules() + distracted_rules() + safe_rule()


# ---------------------------------------------------------------- detectors


@dataclass
class PrimitiveStream:
    """Detector output for one vehicle: event frames and change-driven scalar samples."""

    vehicle_id: int
    start: int
    end: int
    events: dict[str, np.ndarray] = field(default_factory=dict)
    scalars: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def event_frames(self, name: str) -> np.ndarray:
        return self.events.get(name, np.empty(0, dtype=int))

    def active_events(self) -> set[str]:
        return {k for k, v in self.events.items() if len(v)} | {k for k, (t, _) in self.scalars.items() if len(t)}


def _rising(mask: np.ndarray) -> np.ndarray:
    m = mask.astype(np.int8)
    return np.flatnonzero(np.diff(np.concatenate([[0], m])) == 1)


def _falling(mask: np.ndarray) -> np.ndarray:
    """Index of the first frame after each run (may equal len(mask))."""
    m = mask.astype(np.int8)
    return np.flatnonzero(np.diff(np.concatenate([m, [0]])) == -1) + 1


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _rising(mask), _falling(mask)


def _change_points(values: np.ndarray) -> np.ndarray:
    if len(values) == 0:
        return np.empty(0, dtype=int)
    return np.concatenate([[0], np.flatnonzero(values[1:] != values[:-1]) + 1])


def weaving_frames(starts: np.ndarray, sides: np.ndarray, alternations: int, window: int) -> np.ndarray:
    """Start frames of proximity episodes that complete ``alternations`` side switches within ``window``."""
    out = []
    for j in range(alternations, len(starts)):
        lo = j - alternations
        if starts[j] - starts[lo] > window:
            continue
        if np.all(sides[lo + 1:j + 1] != sides[lo:j]):
            out.append(starts[j])
    return np.asarray(out, dtype=int)


def detect_primitives(series: VehicleSeries, params: DetectorParams = DetectorParams()) -> PrimitiveStream:
    frame = np.asarray(series.frame)
    if len(frame) and np.any(np.diff(frame) <= 0):
        raise DetectorInputError(f"vehicle {series.vehicle_id}: frame index is not strictly increasing")
    n = len(frame)
    f0 = int(frame[0]) if n else 0
    out = PrimitiveStream(series.vehicle_id, f0, f0 + n)
    if n == 0:
        return out
    if np.any(np.diff(frame) != 1):
        raise DetectorInputError(f"vehicle {series.vehicle_id}: frames must be contiguous")
    ev = out.events
    off = np.asarray(series.lateral_offset, dtype=float)

    left = off < -params.proximity_offset
    right = off > params.proximity_offset
    ev["proximityLeft"] = _rising(left) + f0
    ev["proximityRight"] = _rising(right) + f0
    ev["proximityEnd"] = _falling(left | right) + f0

    s, e = _runs(np.abs(off) > params.drift_offset)
    keep = (e - s) >= params.drift_min_frames
    ev["driftStart"] = s[keep] + f0
    ev["driftEnd"] = e[keep] + f0

    s, e = _runs(np.abs(off) > params.straddle_offset)
    ev["straddleStart"] = s + f0
    ev["straddleEnd"] = e + f0

    ls, rs = _rising(left), _rising(right)
    starts = np.concatenate([ls, rs])
    sides = np.concatenate([np.full(len(ls), -1), np.full(len(rs), 1)])
    order = np.argsort(starts, kind="stable")
    ev["weaving"] = weaving_frames(starts[order], sides[order], params.weave_alternations,
                                   params.weave_window_frames) + f0

    steer = np.asarray(series.steering_deg, dtype=float)
    k = params.sudden_steer_span_frames
    rate = np.abs(steer[k:] - steer[:-k]) / k if n > k else np.empty(0)
    ev["suddenSteer"] = np.flatnonzero(rate >= params.sudden_steer_deg_per_frame) + k + f0

    lane = np.asarray(series.lane)
    changes = np.flatnonzero(lane[1:] != lane[:-1]) + 1
    ev["changeLane1"] = changes[lane[changes] == 1] + f0
    ev["changeLane2"] = changes[lane[changes] == 2] + f0
    entry = np.concatenate([[0], changes])
    ev["enterLane1"] = entry[lane[entry] == 1] + f0
    ev["enterLane2"] = entry[lane[entry] == 2] + f0
    if len(changes):
        nxt = np.concatenate([changes[1:], [np.iinfo(np.int64).max]])
        expiry = changes + params.lane_change_frames
        expiry = expiry[(expiry < nxt) & (expiry < n)]
        ev["laneChangeExpired"] = expiry + f0
    else:
        ev["laneChangeExpired"] = np.empty(0, dtype=int)

    speed = np.asarray(series.speed_mps, dtype=float)
    accel = np.asarray(series.accel_mps2, dtype=float)
    brake_onsets = _rising(accel <= params.nbd)
    k = params.stopping_frames
    stops = [b for b in brake_onsets if b + k < n and np.all(np.diff(speed[b:b + k + 1]) < 0)]
    ev["stopping"] = np.asarray(stops, dtype=int) + f0

    for name, vals in (("speed", speed), ("acceleration", accel), ("deceleration", np.maximum(-accel, 0.0))):
        cp = _change_points(vals)
        out.scalars[name] = (cp + f0, vals[cp])
    return out


def behavior_label(durations: dict[str, int], min_frames: int) -> str:
    """Vehicle label from total holding durations of the behavior fluents.

    The longest non-safe behavior wins if it held for at least
    ``min_frames``; ties go to aggressive.  Otherwise the vehicle is safe.
    """
    best, best_d = "safe", 0
    for name in ("aggressive", "distracted"):
        d = durations.get(name, 0)
        if d >= min_frames and d > best_d:
            best, best_d = name, d
    return best
