"""Driving-behavior recognition from simulated in-vehicle and roadside data."""

from .ec import Engine, EventInstance, RuleDef, Window, parse_rules
from .harness import ExperimentConfig, default_scenarios, feedback_experiment, metrics, run_experiment
from .intervals import IntervalSet
from .observe import CameraModel, NoiseModel, estimate_kinematics, observe
from .pipeline import classify_trace, classify_vehicle
from .rules import DetectorParams, detect_primitives
from .sim import DriverProfile, Label, SimConfig, run_scenario
from .wpm import AGGRESSIVE_SPEC, DISTRACTED_SPEC, BehaviorSpec, classify, solve

__all__ = [
    "AGGRESSIVE_SPEC", "DISTRACTED_SPEC", "BehaviorSpec", "CameraModel", "DetectorParams",
    "DriverProfile", "Engine", "EventInstance", "ExperimentConfig", "IntervalSet", "Label",
    "NoiseModel", "RuleDef", "SimConfig", "Window", "classify", "classify_trace", "classify_vehicle",
    "default_scenarios", "detect_primitives", "estimate_kinematics", "feedback_experiment",
    "metrics", "observe", "parse_rules", "run_experiment", "run_scenario", "solve",
]
