"""Per-vehicle recognition: detectors -> windowed EC engine -> weighted classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ec import Engine, EventInstance, Window
from .intervals import IntervalSet
from .rules import (
    EVENTS,
    DetectorParams,
    PrimitiveStream,
    behavior_label,
    detect_primitives,
    primitive_rules,
    safe_rule,
)
from .sim import VehicleSeries
from .wpm import DEFAULT_SPECS, BehaviorSpec, classify

EVENT_ASSERTIONS = {"weaving", "suddenSteer"}
FLUENT_FOR = {"aggressive": "aggressiveDriving", "distracted": "distractedDriving", "safe": "safeDriving"}


@dataclass
class StepDecision:
    start: int
    end: int
    snapshot: dict[str, bool]
    label: str


@dataclass
class VehicleResult:
    vehicle_id: int
    label: str
    steps: list[StepDecision] = field(default_factory=list)
    behaviors: dict[str, IntervalSet] = field(default_factory=dict)

    def durations(self) -> dict[str, int]:
        return {k: v.total() for k, v in self.behaviors.items()}

    def recognized_steps(self, behavior: str) -> int:
        return sum(1 for s in self.steps if s.label == behavior)


class BehaviorRecognizer:
    """Runs the sliding-window recognition loop for one vehicle stream.

    Parameter and spec changes requested with :meth:`set_params` /
    :meth:`set_specs` take effect at the next window boundary.
    """

    def __init__(self, params: DetectorParams = DetectorParams(),
                 specs: Sequence[BehaviorSpec] = DEFAULT_SPECS, window: Window = Window()):
        self.params = params
        self.specs = tuple(specs)
        self.window = window
        self._pending_specs: tuple[BehaviorSpec, ...] | None = None
        self._pending_params: DetectorParams | None = None
        self._assertions = sorted({a for s in self.specs for a in s.assertions})

    def set_specs(self, specs: Sequence[BehaviorSpec]) -> None:
        self._pending_specs = tuple(specs)

    def set_params(self, params: DetectorParams) -> None:
        self._pending_params = params

    def snapshot(self, engine: Engine, lo: int, hi: int) -> dict[str, bool]:
        """An assertion is true when its event occurred, or its fluent held, anywhere in [lo, hi)."""
        snap = {}
        for a in self._assertions:
            if a in EVENT_ASSERTIONS:
                snap[a] = any(engine.happens_at(a, t) for t in range(lo, hi))
            else:
                snap[a] = engine.holds_for(a).overlaps(lo, hi)
        return snap

    def run(self, stream: PrimitiveStream) -> VehicleResult:
        w = self.window
        engine = Engine(
            primitive_rules() + safe_rule(), self.params.table(), w,
            declared_events=EVENTS, start=stream.start,
        )
        ev = sorted((int(t), name) for name, ts in stream.events.items() for t in ts)
        ev_t = np.array([t for t, _ in ev], dtype=np.int64)
        fed = 0
        scalar_fed = {k: 0 for k in stream.scalars}
        steps: list[StepDecision] = []
        behaviors = {k: IntervalSet() for k in FLUENT_FOR}
        next_step = stream.start
        end = stream.end
        while next_step < end:
            lo, hi = engine.start, engine.end
            upto = int(np.searchsorted(ev_t, hi, side="left"))
            for t, name in ev[fed:upto]:
                engine.assert_happens_at(EventInstance(name, (stream.vehicle_id,), t))
            fed = upto
            for name, (ts, vals) in stream.scalars.items():
                k = int(np.searchsorted(ts, hi, side="left"))
                if k > scalar_fed[name]:
                    engine.assert_scalar(name, ts[scalar_fed[name]:k], vals[scalar_fed[name]:k])
                    scalar_fed[name] = k
            decided = []
            while next_step < end and next_step + w.step <= hi:
                s_lo, s_hi = next_step, min(next_step + w.step, end)
                snap = self.snapshot(engine, s_lo, s_hi)
                label = classify(snap, self.specs)
                steps.append(StepDecision(s_lo, s_hi, snap, label))
                decided.append((s_lo, s_hi, label))
                next_step += w.step
            for s_lo, s_hi, label in decided:
                for beh in ("aggressive", "distracted"):
                    if label == beh:
                        engine.assert_happens_for(FLUENT_FOR[beh], True, [(s_lo, s_hi)])
            for s_lo, s_hi, _ in decided:
                safe = engine.holds_for("safeDriving").clip(s_lo, s_hi)
                behaviors["safe"] = behaviors["safe"] | safe
            for s_lo, s_hi, label in decided:
                if label != "safe":
                    behaviors[label] = behaviors[label] | [(s_lo, s_hi)]
            if next_step >= end:
                break
            if self._pending_specs is not None:
                self.specs, self._pending_specs = self._pending_specs, None
                self._assertions = sorted({a for s in self.specs for a in s.assertions})
            if self._pending_params is not None:
                self.params, self._pending_params = self._pending_params, None
                engine.set_params(self.params.table())
            engine.advance_window()
        durations = {k: v.total() for k, v in behaviors.items()}
        label = behavior_label(durations, self.params.behavior_min_frames)
        return VehicleResult(stream.vehicle_id, label, steps, behaviors)


def classify_vehicle(series: VehicleSeries, params: DetectorParams = DetectorParams(),
                     specs: Sequence[BehaviorSpec] = DEFAULT_SPECS,
                     window: Window = Window()) -> VehicleResult:
    stream = detect_primitives(series, params)
    return BehaviorRecognizer(params, specs, window).run(stream)


def classify_trace(series: Mapping[int, VehicleSeries], params: DetectorParams = DetectorParams(),
                   specs: Sequence[BehaviorSpec] = DEFAULT_SPECS,
                   window: Window = Window()) -> dict[int, VehicleResult]:
    """Classify every vehicle (or track) of a trace."""
    return {vid: classify_vehicle(s, params, specs, window) for vid, s in sorted(series.items())}
