import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roadwatch.ec import Engine, EventInstance, Window
from roadwatch.intervals import IntervalSet
from roadwatch.pipeline import classify_vehicle
from roadwatch.rules import (
    DetectorParams,
    aggressive_rules,
    behavior_label,
    detect_primitives,
    overspeed_rules,
    primitive_rules,
    weaving_frames,
)
from roadwatch.rules import DetectorInputError
from roadwatch.sim import FLAG_BITS, DriverProfile, Label, SimConfig, VehicleSeries, run_scenario
from roadwatch.wpm import DISTRACTED_SPEC, recognize

P = DetectorParams()


def series(n=300, offset=None, speed=None, accel=None, steer=None, lane=None, start=0):
    z = np.zeros(n)
    return VehicleSeries(
        vehicle_id=0, label="", frame=np.arange(start, start + n),
        lane=np.ones(n, dtype=int) if lane is None else np.asarray(lane),
        cell=np.zeros(n, dtype=int),
        lateral_offset=z if offset is None else np.asarray(offset, dtype=float),
        speed_mps=np.full(n, 30.0) if speed is None else np.asarray(speed, dtype=float),
        accel_mps2=z if accel is None else np.asarray(accel, dtype=float),
        steering_deg=z if steer is None else np.asarray(steer, dtype=float),
        orientation_deg=z, flags=np.zeros(n, dtype=np.int64), x_m=z, y_m=z,
    )


def run_engine(stream, params=P, rules=None):
    """Evaluate the primitive rules over the whole stream in one window."""
    n = stream.end - stream.start
    eng = Engine(rules or primitive_rules(), params.table(), Window(n, n), start=stream.start)
    for name, ts in stream.events.items():
        for t in ts:
            eng.assert_happens_at(EventInstance(name, (), int(t)))
    for name, (ts, vals) in stream.scalars.items():
        eng.assert_scalar(name, ts, vals)
    return eng


# ------------------------------------------------------------------ detector examples

def test_proximity_left_at_first_crossing():
    off = np.linspace(0, -1.0, 101)
    first = int(np.argmax(off < -P.proximity_offset))
    ev = detect_primitives(series(101, offset=off)).events
    assert ev["proximityLeft"].tolist() == [first]
    assert off[first] < -0.6 <= off[first - 1]


def test_hard_brake_at_frame_60():
    a = np.zeros(200)
    a[60:70] = -8.0
    eng = run_engine(detect_primitives(series(200, accel=a)))
    assert eng.holds_for("hardBraking") == IntervalSet([(60, 70)])
    assert eng.holds_for("normalBraking") == IntervalSet()


def test_normal_brake_band():
    a = np.zeros(200)
    a[50:60] = -5.0
    a[60:65] = -9.0
    eng = run_engine(detect_primitives(series(200, accel=a)))
    assert eng.holds_for("normalBraking") == IntervalSet([(50, 60)])
    assert eng.holds_for("hardBraking") == IntervalSet([(60, 65)])


def square_wave(n, half_period, amp=0.7):
    return amp * np.where((np.arange(n) // half_period) % 2 == 0, -1.0, 1.0)


def test_weaving_depends_on_oscillation_period():
    fast = detect_primitives(series(600, offset=square_wave(600, 30))).events["weaving"]
    slow = detect_primitives(series(600, offset=square_wave(600, 120))).events["weaving"]
    assert len(fast) > 0
    assert len(slow) == 0


@given(st.lists(st.tuples(st.integers(0, 400), st.sampled_from([-1, 1])), max_size=12),
       st.integers(1, 3), st.integers(10, 120))
def test_weaving_matches_alternation_count(eps, alternations, window):
    eps = sorted(dict(eps).items())
    starts = np.array([t for t, _ in eps], dtype=int)
    sides = np.array([s for _, s in eps], dtype=int)
    got = set(weaving_frames(starts, sides, alternations, window).tolist())
    want = set()
    for j in range(len(starts)):
        lo = j - alternations
        if lo < 0 or starts[j] - starts[lo] > window:
            continue
        if all(sides[i] != sides[i + 1] for i in range(lo, j)):
            want.add(int(starts[j]))
    assert got == want


def test_short_excursion_is_not_drift():
    off = np.zeros(200)
    off[50:60] = 0.4
    off[100:130] = 0.4
    ev = detect_primitives(series(200, offset=off)).events
    assert ev["driftStart"].tolist() == [100] and ev["driftEnd"].tolist() == [130]


def test_straddle_and_sudden_steer():
    off = np.zeros(200)
    off[80:120] = 1.0
    steer = np.zeros(200)
    steer[150:] = 10.0
    ev = detect_primitives(series(200, offset=off, steer=steer)).events
    assert ev["straddleStart"].tolist() == [80] and ev["straddleEnd"].tolist() == [120]
    assert len(ev["suddenSteer"]) and 150 <= ev["suddenSteer"][0] <= 153


def test_lane_change_events_and_fluent_expiry():
    lane = np.ones(300, dtype=int)
    lane[100:] = 2
    st_ = detect_primitives(series(300, lane=lane))
    assert st_.events["changeLane2"].tolist() == [100]
    eng = run_engine(st_)
    assert eng.holds_for("laneChange") == IntervalSet([(100, 100 + P.lane_change_frames)])
    assert eng.holds_for("atLane1") == IntervalSet([(0, 100)])
    assert eng.holds_for("atLane2") == IntervalSet([(100, 300)])


def test_non_monotonic_frames_rejected():
    s = series(10)
    s.frame = np.array([0, 1, 2, 4, 3, 5, 6, 7, 8, 9])
    with pytest.raises(DetectorInputError):
        detect_primitives(s)


def test_stopping_after_braking():
    speed = np.full(200, 30.0)
    speed[100:130] = np.linspace(30, 10, 30)
    speed[130:] = 10
    a = np.zeros(200)
    a[100:130] = -20 / 30 * 30
    ev = detect_primitives(series(200, speed=speed, accel=a)).events
    assert ev["stopping"].tolist() == [100]


# ------------------------------------------------------------------ overSpeed rule

def speed_engine(speed, lane1=True, lane2=False, params=None):
    params = params or DetectorParams(os=10.0, speed_limit=10.0)
    n = len(speed)
    eng = Engine(overspeed_rules(), params.table(), Window(n, n), declared_fluents=["atLane1", "atLane2"])
    if lane1:
        eng.assert_happens_for("atLane1", True, [(0, n)])
    if lane2:
        eng.assert_happens_for("atLane2", True, [(0, n)])
    t = np.flatnonzero(np.concatenate([[True], speed[1:] != speed[:-1]]))
    eng.assert_scalar("speed", t, speed[t])
    return eng


def test_overspeed_initiated_in_lane_one():
    assert speed_engine(np.full(10, 12.0)).holds_at("overSpeed", 0)


def test_overspeed_needs_a_lane():
    assert not speed_engine(np.full(10, 12.0), lane1=False).holds_for("overSpeed")
    assert not speed_engine(np.full(10, 12.0), lane1=True, lane2=True).holds_for("overSpeed")
    assert speed_engine(np.full(10, 12.0), lane1=False, lane2=True).holds_for("overSpeed")


def test_overspeed_interval_follows_speed_crossings():
    speed = np.full(600, 8.0)
    speed[100:400] = 12.0
    assert speed_engine(speed).holds_for("overSpeed") == IntervalSet([(100, 400)])


def test_aggressive_definition_shape():
    strict = aggressive_rules()
    assert len(strict) == 2
    body_fluents = strict[0].fluents_used()
    assert {"hardBraking", "laneChange", "overSpeed", "safeDriving", "distractedDriving"} <= body_fluents
    assert strict[0].events_used() == {"weaving", "suddenSteer"}
    assert all("safeDriving" not in r.fluents_used() for r in aggressive_rules(strict_negations=False))


def test_distracted_examples():
    base = {k: False for k in DISTRACTED_SPEC.assertions}
    assert recognize(DISTRACTED_SPEC, base | {"laneDrifting": True, "slowSpeed": True,
                                               "normalBraking": True}).recognized
    assert not recognize(DISTRACTED_SPEC, base | {"straddling": True}).recognized


def test_params_validation():
    with pytest.raises(ValueError):
        DetectorParams(hbd=-2.0)
    with pytest.raises(ValueError):
        DetectorParams(drift_offset=0.7)
    assert DetectorParams.for_speed_limit(20.0).os == pytest.approx(22.0)


def test_behavior_label_rule():
    assert behavior_label({"aggressive": 40, "distracted": 40}, 30) == "aggressive"
    assert behavior_label({"aggressive": 20, "distracted": 40}, 30) == "distracted"
    assert behavior_label({"aggressive": 29, "safe": 3000}, 30) == "safe"


# ------------------------------------------------------------------ ground-truth properties

SIX = (DriverProfile.safe(),) * 2 + (DriverProfile.distracted(),) * 2 + (DriverProfile.aggressive(),) * 2


@pytest.fixture(scope="module")
def traces():
    return [run_scenario(SimConfig(profiles=SIX, seed=s)) for s in range(4)]


def test_lane_and_braking_exclusivity(traces):
    for tr in traces:
        for s in tr.series.values():
            eng = run_engine(detect_primitives(s))
            assert not eng.holds_for("atLane1") & eng.holds_for("atLane2")
            assert not eng.holds_for("hardBraking") & eng.holds_for("normalBraking")


def flag_episodes(flags, bit):
    m = (flags & bit) > 0
    s = np.flatnonzero(np.diff(np.concatenate([[0], m.astype(int)])) == 1)
    e = np.flatnonzero(np.diff(np.concatenate([m.astype(int), [0]])) == -1) + 1
    return list(zip(s, e))


def detections(stream, eng, name):
    """Frames at which the detector for flag ``name`` fires (relative to stream start)."""
    ev = stream.events
    if name in ("weave", "sudden_steer", "drift", "straddle"):
        key = {"weave": "weaving", "sudden_steer": "suddenSteer", "drift": "driftStart",
               "straddle": "straddleStart"}[name]
        return IntervalSet((int(t), int(t) + 1) for t in ev[key] - stream.start)
    fluent = {"hard_brake": "hardBraking", "overspeed": "overSpeed", "slow_speed": "slowSpeed"}[name]
    return IntervalSet((a - stream.start, b - stream.start) for a, b in eng.holds_for(fluent))


def test_zero_noise_recall(traces):
    missed = []
    for tr in traces:
        for vid, s in tr.series.items():
            stream = detect_primitives(s)
            eng = run_engine(stream)
            n = len(s)
            for name, bit in FLAG_BITS.items():
                det = detections(stream, eng, name)
                for a, b in flag_episodes(s.flags, bit):
                    if b == n:
                        continue  # truncated by the end of the trace
                    if not det.overlaps(a - 2, b + 2):
                        missed.append((tr.config.seed, vid, name, a, b))
    assert missed == []


def test_no_detections_for_safe_drivers_in_free_flow():
    for seed in range(5):
        tr = run_scenario(SimConfig(profiles=(DriverProfile.safe(),) * 2, seed=seed))
        for s in tr.series.values():
            stream = detect_primitives(s)
            eng = run_engine(stream)
            lateral = ("proximityLeft", "proximityRight", "driftStart", "straddleStart", "weaving", "suddenSteer")
            assert all(len(stream.events[k]) == 0 for k in lateral)
            for f in ("hardBraking", "overSpeed", "slowSpeed"):
                assert not eng.holds_for(f)


def test_profiles_produce_their_behavior(traces):
    for tr in traces:
        for s in tr.series.values():
            r = classify_vehicle(s)
            if s.label != Label.SAFE.value:
                assert r.durations()[s.label] >= P.behavior_min_frames


def test_three_class_partition(traces):
    for tr in traces:
        for s in tr.series.values():
            r = classify_vehicle(s)
            masks = [ivs.to_mask(0, len(s)) for ivs in r.behaviors.values()]
            assert np.array_equal(np.sum(masks, axis=0), np.ones(len(s)))
