"""Batch experiments: both pipelines, metrics, error analysis, feedback study."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .ec import Window
from .observe import CameraModel, NoiseModel, ObservationSet, EstimatedTrace, estimate_kinematics, observe
from .pipeline import classify_trace
from .rules import DetectorParams
from .sim import ConfigError, DriverProfile, GroundTruthTrace, Label, SimConfig, run_scenario
from .wpm import DEFAULT_SPECS, BehaviorSpec

CLASSES = ("safe", "distracted", "aggressive")
PIPELINES = ("in-vehicle", "roadside")

# user-facing micro-behavior name -> (profile propensity, spec assertion)
MICRO_BEHAVIORS = {
    "speeding": ("overspeed_rate", "overSpeed"),
    "hardBraking": ("hard_brake_rate", "hardBraking"),
    "weaving": ("weave_rate", "weaving"),
    "suddenSteer": ("sudden_steer_rate", "suddenSteer"),
    "laneDrifting": ("drift_rate", "laneDrifting"),
    "straddling": ("straddle_rate", "straddling"),
    "slowSpeed": ("slow_speed_rate", "slowSpeed"),
}


class ExperimentError(RuntimeError):
    pass


def default_scenarios(n_scenarios: int = 50, per_class: int = 2, seed: int = 0,
                      duration_s: int = 120) -> tuple[SimConfig, ...]:
    """Mixed-traffic scenarios with ``per_class`` drivers of each label."""
    labels = [lab for lab in (Label.SAFE, Label.DISTRACTED, Label.AGGRESSIVE) for _ in range(per_class)]
    profiles = tuple(DriverProfile.default_for(lab) for lab in labels)
    return tuple(SimConfig(profiles=profiles, seed=seed + i, duration_s=duration_s) for i in range(n_scenarios))


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple[SimConfig, ...]
    camera: CameraModel = field(default_factory=CameraModel.oblique)
    noise: NoiseModel = field(default_factory=NoiseModel.calibrated)
    params: DetectorParams = DetectorParams()
    road_params: dict[float, DetectorParams] = field(default_factory=dict)  # keyed by speed limit
    specs: tuple[BehaviorSpec, ...] = DEFAULT_SPECS
    runs: int = 5
    seed: int = 0
    window: Window = Window()
    out_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.scenarios:
            raise ConfigError("experiment needs at least one scenario")
        if self.runs < 1:
            raise ConfigError("run count must be >= 1")
        for s in self.scenarios:
            s.validate()

    def params_for(self, speed_limit: float) -> DetectorParams:
        """Detector thresholds for a road with the given speed limit."""
        if speed_limit in self.road_params:
            return self.road_params[speed_limit]
        if speed_limit == self.params.speed_limit:
            return self.params
        return replace(self.params, os=1.1 * speed_limit, speed_limit=speed_limit)

    def with_profiles(self, fn) -> ExperimentConfig:
        """Copy with every driver profile mapped through ``fn``."""
        scen = tuple(replace(s, profiles=tuple(fn(p) for p in s.profiles)) for s in self.scenarios)
        return replace(self, scenarios=scen)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def realized_scenario(config: ExperimentConfig, run: int, index: int) -> SimConfig:
    """Scenario ``index`` of run ``run`` with its derived simulation seed."""
    scen = config.scenarios[index]
    return replace(scen, seed=_derive_seed(config.seed, run, index, scen.seed))


def observation_seed(config: ExperimentConfig, run: int, index: int) -> int:
    return _derive_seed(config.seed, run, index, config.scenarios[index].seed, 1)


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    accuracy: float


@dataclass
class ClassificationReport:
    """One-vs-rest metrics per class.

    ``confusion[i, j]`` counts vehicles of true class i predicted as j
    (a mean over runs for averaged reports).  Precision of a class that
    was never predicted is 1.0 when the class also has no true members
    and 0.0 otherwise; recall of a class with no members is 1.0.
    """

    classes: tuple[str, ...]
    confusion: np.ndarray
    per_class: dict[str, ClassMetrics]
    accuracy: float
    runs: int = 1

    @property
    def n(self) -> float:
        return float(self.confusion.sum())

    @classmethod
    def average(cls, reports: Sequence[ClassificationReport]) -> ClassificationReport:
        if not reports:
            raise ValueError("nothing to average")
        classes = reports[0].classes
        per = {
            c: ClassMetrics(*(float(np.mean([getattr(r.per_class[c], f) for r in reports]))
                              for f in ("precision", "recall", "accuracy")))
            for c in classes
        }
        conf = np.mean([r.confusion for r in reports], axis=0)
        acc = float(np.mean([r.accuracy for r in reports]))
        return cls(classes, conf, per, acc, len(reports))

    def table(self, title: str = "") -> str:
        lines = [title] if title else []
        lines.append(f"{'class':<12}{'precision':>10}{'recall':>10}{'accuracy':>10}")
        for c in self.classes:
            m = self.per_class[c]
            lines.append(f"{c:<12}{m.precision:>10.4f}{m.recall:>10.4f}{m.accuracy:>10.4f}")
        lines.append(f"{'overall':<12}{'':>10}{'':>10}{self.accuracy:>10.4f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "confusion": [[round(float(x), 6) for x in row] for row in self.confusion],
            "per_class": {c: {k: round(v, 6) for k, v in vars(m).items()} for c, m in self.per_class.items()},
            "accuracy": round(self.accuracy, 6),
            "runs": self.runs,
        }


def metrics(true_labels: Sequence[str], predicted_labels: Sequence[str],
            classes: Sequence[str] = CLASSES) -> ClassificationReport:
    if len(true_labels) != len(predicted_labels):
        raise ValueError("label lists differ in length")
    classes = tuple(classes)
    idx = {c: i for i, c in enumerate(classes)}
    unknown = (set(true_labels) | set(predicted_labels)) - set(classes)
    if unknown:
        raise ValueError(f"unknown labels {sorted(unknown)}")
    k = len(classes)
    conf = np.zeros((k, k), dtype=np.int64)
    if len(true_labels):
        np.add.at(conf, ([idx[t] for t in true_labels], [idx[p] for p in predicted_labels]), 1)
    n = conf.sum()
    per = {}
    for c, i in idx.items():
        tp = conf[i, i]
        fp = conf[:, i].sum() - tp
        fn = conf[i, :].sum() - tp
        tn = n - tp - fp - fn
        precision = tp / (tp + fp) if tp + fp else (1.0 if tp + fn == 0 else 0.0)
        recall = tp / (tp + fn) if tp + fn else 1.0
        accuracy = (tp + tn) / n if n else 1.0
        per[c] = ClassMetrics(float(precision), float(recall), float(accuracy))
    acc = float(np.trace(conf) / n) if n else 1.0
    return ClassificationReport(classes, conf, per, acc)


# ---------------------------------------------------------- error analysis


@dataclass
class ErrorBreakdown:
    tracked_frames: int = 0
    tracking_errors: int = 0
    estimated_points: int = 0
    estimation_errors: int = 0

    @property
    def tracking_error_rate(self) -> float:
        return self.tracking_errors / self.tracked_frames if self.tracked_frames else 0.0

    @property
    def estimation_error_rate(self) -> float:
        return self.estimation_errors / self.estimated_points if self.estimated_points else 0.0

    def __add__(self, other: ErrorBreakdown) -> ErrorBreakdown:
        return ErrorBreakdown(
            self.tracked_frames + other.tracked_frames,
            self.tracking_errors + other.tracking_errors,
            self.estimated_points + other.estimated_points,
            self.estimation_errors + other.estimation_errors,
        )

    def to_dict(self) -> dict:
        return {
            "tracking_error_rate": round(self.tracking_error_rate, 8),
            "estimation_error_rate": round(self.estimation_error_rate, 8),
            "tracked_frames": self.tracked_frames,
            "estimated_points": self.estimated_points,
        }


def error_breakdown(ground_truth: GroundTruthTrace, observations: ObservationSet,
                    estimates: EstimatedTrace, speed_tol_mps: float | None = None,
                    orientation_tol_deg: float = 5.0) -> ErrorBreakdown:
    """Tracking errors per observed frame; estimation errors per (vehicle, frame).

    A frame is a tracking error when any observation in it carries the
    wrong identity.  An estimate is an error when its speed is off by more
    than ``speed_tol_mps`` (default 5% of the speed limit) or its heading
    by more than ``orientation_tol_deg``.
    """
    if speed_tol_mps is None:
        speed_tol_mps = 0.05 * ground_truth.config.speed_limit_mps
    observed = np.unique(observations.frame)
    wrong = np.unique(observations.frame[observations.track_id != observations.true_id])
    out = ErrorBreakdown(len(observed), len(wrong))
    for vid, est in estimates.series.items():
        truth = ground_truth.series.get(vid)
        if truth is None:
            continue
        common, ie, it = np.intersect1d(est.frame, truth.frame, return_indices=True)
        if not len(common):
            continue
        bad = (np.abs(est.speed_mps[ie] - truth.speed_mps[it]) > speed_tol_mps) | (
            np.abs(est.orientation_deg[ie] - truth.orientation_deg[it]) > orientation_tol_deg)
        out.estimated_points += len(common)
        out.estimation_errors += int(bad.sum())
    if out.estimated_points == 0:
        raise ExperimentError("estimates share no frames with the ground truth")
    return out


# ------------------------------------------------------------ experiment


@dataclass
class RunOutcome:
    true: list[str] = field(default_factory=list)
    predicted: dict[str, list[str]] = field(default_factory=lambda: {p: [] for p in PIPELINES})
    recognized_steps: dict[str, dict[str, int]] = field(
        default_factory=lambda: {p: {"aggressive": 0, "distracted": 0} for p in PIPELINES})
    errors: ErrorBreakdown = field(default_factory=ErrorBreakdown)


@dataclass
class ExperimentReport:
    in_vehicle: ClassificationReport
    roadside: ClassificationReport | None
    errors: ErrorBreakdown
    runs: int
    samples_per_run: int

    @property
    def gap(self) -> float | None:
        """Accuracy gap in percentage points (in-vehicle minus roadside)."""
        if self.roadside is None:
            return None
        return 100.0 * (self.in_vehicle.accuracy - self.roadside.accuracy)

    def render(self) -> str:
        parts = [
            f"runs: {self.runs}, vehicles per run: {self.samples_per_run}",
            self.in_vehicle.table("in-vehicle"),
        ]
        if self.roadside is not None:
            parts.append(self.roadside.table("roadside"))
            parts.append(f"accuracy gap: {self.gap:.2f} points")
            parts.append(
                f"tracking error frames: {100 * self.errors.tracking_error_rate:.3f}%  "
                f"estimation error frames: {100 * self.errors.estimation_error_rate:.3f}%"
            )
        return "\n\n".join(parts) + "\n"

    def records(self) -> list[dict]:
        recs = [{"pipeline": "in-vehicle", **self.in_vehicle.to_dict()}]
        if self.roadside is not None:
            recs.append({"pipeline": "roadside", **self.roadside.to_dict()})
            recs.append({"gap_points": round(self.gap, 6), **self.errors.to_dict()})
        return recs

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def _run_one(config: ExperimentConfig, run: int, pipelines: Iterable[str]) -> RunOutcome:
    out = RunOutcome()
    for i, scen in enumerate(config.scenarios):
        try:
            cfg = realized_scenario(config, run, i)
            trace = run_scenario(cfg)
            params = config.params_for(cfg.speed_limit_mps)
            labels = trace.labels()
            vids = sorted(labels)
            out.true.extend(labels[v] for v in vids)
            if "in-vehicle" in pipelines:
                res = classify_trace(trace.series, params, config.specs, config.window)
                out.predicted["in-vehicle"].extend(res[v].label for v in vids)
                for r in res.values():
                    for b in ("aggressive", "distracted"):
                        out.recognized_steps["in-vehicle"][b] += r.recognized_steps(b)
            if "roadside" in pipelines:
                obs = observe(trace, config.camera, config.noise, observation_seed(config, run, i))
                est = estimate_kinematics(obs, config.noise, cfg.cell_length_m)
                out.errors = out.errors + error_breakdown(trace, obs, est)
                res = classify_trace(est.series, params, config.specs, config.window)
                out.predicted["roadside"].extend(res[v].label if v in res else "safe" for v in vids)
                for r in res.values():
                    for b in ("aggressive", "distracted"):
                        out.recognized_steps["roadside"][b] += r.recognized_steps(b)
        except Exception as exc:
            raise ExperimentError(f"scenario {i} (seed {scen.seed}), run {run}: {exc}") from exc
    return out


def run_experiment(config: ExperimentConfig,
                   pipelines: Sequence[str] = PIPELINES) -> tuple[ExperimentReport, ErrorBreakdown]:
    """Simulate every scenario for every run and score both pipelines."""
    bad = set(pipelines) - set(PIPELINES)
    if bad:
        raise ConfigError(f"unknown pipeline(s) {sorted(bad)}")
    outcomes = [_run_one(config, r, pipelines) for r in range(config.runs)]
    in_vehicle = roadside = None
    if "in-vehicle" in pipelines:
        in_vehicle = ClassificationReport.average([metrics(o.true, o.predicted["in-vehicle"]) for o in outcomes])
    if "roadside" in pipelines:
        roadside = ClassificationReport.average([metrics(o.true, o.predicted["roadside"]) for o in outcomes])
    errors = ErrorBreakdown()
    for o in outcomes:
        errors = errors + o.errors
    if in_vehicle is None:
        in_vehicle, roadside = roadside, None
    report = ExperimentReport(in_vehicle, roadside, errors, config.runs, len(outcomes[0].true))
    return report, errors


def recognized_instances(config: ExperimentConfig, pipeline: str = "in-vehicle") -> dict[str, int]:
    """Recognized behavior windows (steps), summed over vehicles, scenarios and runs."""
    total = {"aggressive": 0, "distracted": 0}
    for r in range(config.runs):
        o = _run_one(config, r, (pipeline,))
        for b in total:
            total[b] += o.recognized_steps[pipeline][b]
    return total


# ---------------------------------------------------------------- feedback


@dataclass(frozen=True)
class FeedbackRow:
    micro_behavior: str
    aggressive: float | None  # None: the behavior is not in that class's spec
    distracted: float | None

    def to_dict(self) -> dict:
        f = lambda x: None if x is None else round(x, 6)  # noqa: E731
        return {"micro_behavior": self.micro_behavior, "aggressive": f(self.aggressive),
                "distracted": f(self.distracted)}


def _ratio(after: int, before: int) -> float:
    if before == 0:
        return 1.0 if after == 0 else math.inf
    return after / before


def feedback_experiment(config: ExperimentConfig, micro_behavior: str, reduction: float = 0.5,
                        pipeline: str = "in-vehicle", baseline: dict[str, int] | None = None) -> FeedbackRow:
    """Ratio of recognized behavior windows after/before damping one propensity.

    Every driver's propensity for ``micro_behavior`` is multiplied by
    ``1 - reduction``; all other settings and seeds are unchanged.
    """
    if micro_behavior not in MICRO_BEHAVIORS:
        raise KeyError(f"unknown micro-behavior {micro_behavior!r}; choose from {sorted(MICRO_BEHAVIORS)}")
    if not 0.0 <= reduction <= 1.0:
        raise ValueError("reduction must be in [0, 1]")
    rate, assertion = MICRO_BEHAVIORS[micro_behavior]
    before = baseline if baseline is not None else recognized_instances(config, pipeline)
    if reduction == 0.0:
        after = before
    else:
        after = recognized_instances(config.with_profiles(lambda p: p.scaled(rate, 1.0 - reduction)), pipeline)
    cols = {}
    for spec in config.specs:
        cols[spec.name] = _ratio(after[spec.name], before[spec.name]) if assertion in spec.assertions else None
    return FeedbackRow(micro_behavior, cols.get("aggressive"), cols.get("distracted"))


def feedback_table(config: ExperimentConfig, reduction: float = 0.5,
                   pipeline: str = "in-vehicle") -> list[FeedbackRow]:
    """One row per micro-behavior, each reduced on its own against a shared baseline."""
    base = recognized_instances(config, pipeline)
    return [feedback_experiment(config, mb, reduction, pipeline, base) for mb in MICRO_BEHAVIORS]


def render_feedback(rows: Sequence[FeedbackRow]) -> str:
    fmt = lambda x: "N/A" if x is None else f"{x:.2f}"  # noqa: E731
    lines = [f"{'micro-behavior':<16}{'aggressive':>12}{'distracted':>12}"]
    lines += [f"{r.micro_behavior:<16}{fmt(r.aggressive):>12}{fmt(r.distracted):>12}" for r in rows]
    return "\n".join(lines) + "\n"
