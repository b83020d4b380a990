"""Virtual roadside camera.

Ground-truth positions are projected into the image through a ground-plane
homography, corrupted by pixel noise, dropped detections and transient
identity switches, and mapped back to the road with inverse perspective
mapping.  :func:`estimate_kinematics` then rebuilds speed, acceleration,
heading and lane position from the noisy tracks, the way a roadside unit
would have to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.ndimage import median_filter, uniform_filter1d
from scipy.signal import savgol_filter

from .sim import LANE_WIDTH_M, STEER_GAIN_DEG, GroundTruthTrace, VehicleSeries

HALF_LANE_M = LANE_WIDTH_M / 2


class ProjectionError(ArithmeticError):
    """The point maps to (or from) the line at infinity."""


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    homography: np.ndarray
    fps: float = 30.0
    # (x_min, x_max, y_min, y_max) on the ground plane, metres
    field_of_view_bounds: tuple[float, float, float, float] = (0.0, 262.5, 0.0, 7.0)

    def __post_init__(self):
        H = np.asarray(self.homography, dtype=float)
        if H.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(np.linalg.det(H)) <= 1e-9:
            raise ProjectionError("homography is singular")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "homography", H)

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.homography)

    def in_bounds(self, pts) -> np.ndarray:
        p = np.atleast_2d(pts)
        x0, x1, y0, y1 = self.field_of_view_bounds
        return (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)

    @classmethod
    def oblique(
        cls,
        height_m: float = 10.0,
        depression_deg: float = 30.0,
        focal_px: float = 1000.0,
        principal=(640.0, 360.0),
        setback_m: float = 5.0,
        road_length_m: float = 262.5,
        road_width_m: float = 2 * LANE_WIDTH_M,
        fps: float = 30.0,
    ) -> CameraModel:
        """Camera on a pole behind the start of the road, looking down the road axis.

        Ground frame: x along the road, y across it (lane 1 at small y).
        """
        th = math.radians(depression_deg)
        # camera axes in ground coordinates: image-right, image-down, optical axis
        xc = np.array([0.0, -1.0, 0.0])
        yc = np.array([-math.sin(th), 0.0, -math.cos(th)])
        zc = np.array([math.cos(th), 0.0, -math.sin(th)])
        R = np.vstack([xc, yc, zc])
        C = np.array([-setback_m, road_width_m / 2, height_m])
        K = np.array([[focal_px, 0, principal[0]], [0, focal_px, principal[1]], [0, 0, 1]])
        H = K @ np.column_stack([R[:, 0], R[:, 1], -R @ C])
        return cls(H / H[2, 2], fps, (0.0, road_length_m, 0.0, road_width_m))


def _apply(H: np.ndarray, pts, eps: float) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    hom = np.column_stack([p, np.ones(len(p))]) @ H.T
    w = hom[:, 2]
    if np.any(np.abs(w) <= eps * np.abs(hom[:, :2]).max(axis=1, initial=1.0)):
        raise ProjectionError("point maps to infinity")
    out = hom[:, :2] / w[:, None]
    return out[0] if single else out


def project_to_image(ground_point, camera: CameraModel, eps: float = 1e-12) -> np.ndarray:
    """Map ground-plane point(s) ``(x, y)`` to pixel(s) ``(u, v)``."""
    return _apply(camera.homography, ground_point, eps)


def ipm_to_ground(pixel, camera: CameraModel, eps: float = 1e-12) -> np.ndarray:
    """Inverse perspective mapping: pixel(s) back onto the ground plane."""
    return _apply(camera.inverse, pixel, eps)


@dataclass(frozen=True)
class NoiseModel:
    pos_noise_sigma_px: float = 0.0
    id_switch_prob: float = 0.0
    miss_prob: float = 0.0
    window: int = 15  # frames, longitudinal smoothing
    lateral_window: int = 7  # frames, lateral smoothing
    accel_window: int = 45  # frames, local linear fit for acceleration

    def __post_init__(self):
        for name in ("id_switch_prob", "miss_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.pos_noise_sigma_px < 0:
            raise ValueError("pos_noise_sigma_px must be >= 0")
        if self.window < 1 or self.lateral_window < 1 or self.accel_window < 1:
            raise ValueError("smoothing windows must be >= 1 frame")

    @classmethod
    def zero(cls) -> NoiseModel:
        return cls(0.0, 0.0, 0.0, window=1, lateral_window=1, accel_window=1)

    @classmethod
    def calibrated(cls) -> NoiseModel:
        """Noise level reproducing ~0.57% tracking and ~1.33% estimation error frames."""
        return cls(pos_noise_sigma_px=CALIBRATED_SIGMA_PX, id_switch_prob=0.0057, miss_prob=0.0)


CALIBRATED_SIGMA_PX = 0.23
# a car centred on the lane line must not flip lanes on pixel noise
LANE_HYSTERESIS_M = 0.5 * HALF_LANE_M


@dataclass(frozen=True)
class TrackedObservation:
    frame: int
    track_id: int
    ground_pos_est: tuple[float, float]
    speed_est: float = float("nan")
    orientation_est: float = float("nan")
    lane_est: int = 0
    lateral_offset_est: float = float("nan")


@dataclass
class ObservationSet:
    """Columnar detector output: one row per (frame, track)."""

    frame: np.ndarray
    track_id: np.ndarray
    true_id: np.ndarray
    x_m: np.ndarray
    y_m: np.ndarray
    labels: dict[int, str] = field(default_factory=dict)
    ring_length_m: float | None = None
    fps: float = 30.0

    def __len__(self) -> int:
        return len(self.frame)

    def observations(self) -> Iterator[TrackedObservation]:
        for i in range(len(self)):
            yield TrackedObservation(
                int(self.frame[i]), int(self.track_id[i]), (float(self.x_m[i]), float(self.y_m[i]))
            )

    def by_track(self) -> dict[int, np.ndarray]:
        order = np.lexsort((self.frame, self.track_id))
        tid = self.track_id[order]
        cuts = np.flatnonzero(np.diff(tid)) + 1
        return {int(self.track_id[g[0]]): g for g in np.split(order, cuts) if len(g)}


def observe(trace: GroundTruthTrace, camera: CameraModel, noise: NoiseModel, seed: int) -> ObservationSet:
    """Run the ground truth through the camera and tracker noise channel."""
    if not trace.series:
        raise ValueError("empty trace")
    rng = np.random.default_rng(seed)
    ids = sorted(trace.series)
    F = trace.n_frames
    nv = len(ids)
    X = np.stack([trace.series[i].x_m for i in ids], axis=1)
    Y = np.stack([trace.series[i].y_m for i in ids], axis=1)
    frames = trace.series[ids[0]].frame

    pts = np.column_stack([X.ravel(), Y.ravel()])
    if noise.pos_noise_sigma_px > 0:
        px = project_to_image(pts, camera)
        px = px + rng.normal(0.0, noise.pos_noise_sigma_px, px.shape)
        pts = ipm_to_ground(px, camera)
    Xn = pts[:, 0].reshape(F, nv)
    Yn = pts[:, 1].reshape(F, nv)

    visible = rng.random((F, nv)) >= noise.miss_prob
    track = np.tile(np.arange(nv), (F, 1))
    switch = rng.random(F) < noise.id_switch_prob
    ring = trace.config.ring_length_m
    for f in np.flatnonzero(switch):
        vis = np.flatnonzero(visible[f])
        if len(vis) < 2:
            continue
        dx = np.abs(X[f, vis][:, None] - X[f, vis][None, :])
        dx = np.minimum(dx, ring - dx)
        d = np.hypot(dx, Y[f, vis][:, None] - Y[f, vis][None, :])
        d[np.diag_indices_from(d)] = np.inf
        a, b = np.unravel_index(np.argmin(d), d.shape)
        ia, ib = vis[a], vis[b]
        track[f, ia], track[f, ib] = track[f, ib], track[f, ia]

    fr = np.repeat(frames, nv).reshape(F, nv)
    true = np.tile(np.asarray(ids), (F, 1))
    track_ids = np.asarray(ids)[track]
    m = visible
    return ObservationSet(
        frame=fr[m], track_id=track_ids[m], true_id=true[m], x_m=Xn[m], y_m=Yn[m],
        labels=trace.labels(), ring_length_m=ring, fps=camera.fps,
    )


def _hampel(x: np.ndarray, size: int, thresh: float) -> np.ndarray:
    """Replace samples further than ``thresh`` from the running median."""
    if len(x) < size:
        return x
    med = median_filter(x, size=size, mode="nearest")
    out = x.copy()
    bad = np.abs(x - med) > thresh
    out[bad] = med[bad]
    return out


def _smooth(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(x) < window:
        return x
    # centred moving average with reflective edges
    return uniform_filter1d(x, size=window, mode="nearest")


def _slope(x: np.ndarray, window: int, dt: float) -> np.ndarray:
    """Derivative from a sliding least-squares line (exact for linear motion, edges included)."""
    w = window | 1
    if w < 3 or len(x) < w:
        return np.gradient(x, dt)
    return savgol_filter(x, w, 1, deriv=1, delta=dt, mode="interp")


def _runs(a: np.ndarray) -> list[slice]:
    cuts = np.flatnonzero(np.diff(a)) + 1
    bounds = np.concatenate([[0], cuts, [len(a)]])
    return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def _hysteresis_lane(y: np.ndarray, margin_m: float) -> np.ndarray:
    """Lane index that only switches once y is ``margin_m`` past the lane line."""
    state = np.where(y > LANE_WIDTH_M + margin_m, 2, np.where(y < LANE_WIDTH_M - margin_m, 1, 0))
    idx = np.where(state > 0, np.arange(len(y)), -1)
    last = np.maximum.accumulate(idx)
    first = np.where(y < LANE_WIDTH_M, 1, 2)[0]
    return np.where(last >= 0, state[np.maximum(last, 0)], first)


def _majority_lane(lane: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(lane) < window:
        return lane
    frac2 = uniform_filter1d((lane == 2).astype(float), size=window, mode="nearest")
    return np.where(frac2 > 0.5, 2, 1)


def estimate_track(frames: np.ndarray, x: np.ndarray, y: np.ndarray, noise: NoiseModel,
                   fps: float, ring_length_m: float | None = None,
                   cell_length_m: float = 7.5, track_id: int = 0, label: str = "") -> VehicleSeries:
    """Kinematics of one track from its (possibly gappy) ground positions."""
    if len(frames) < 3:
        raise EstimationError(f"track {track_id} has {len(frames)} frames; need at least 3")
    order = np.argsort(frames)
    frames, x, y = frames[order], x[order], y[order]
    if ring_length_m:
        x = np.unwrap(x, period=ring_length_m)
    full = np.arange(frames[0], frames[-1] + 1)
    if len(full) != len(frames):
        x = np.interp(full, frames, x)
        y = np.interp(full, frames, y)
    n = len(full)
    confident = n >= noise.window
    dt = 1.0 / fps

    x = _hampel(x, 5, 1.5)
    y = _hampel(y, 5, 0.5)

    speed = _slope(x, 2 * noise.window - 1, dt)
    accel = _slope(speed, noise.accel_window, dt)

    lane = _majority_lane(_hysteresis_lane(y, LANE_HYSTERESIS_M), noise.window)
    offset = (y - (lane - 0.5) * LANE_WIDTH_M) / HALF_LANE_M
    lat_rate = np.zeros(n)
    for seg in _runs(lane):
        o = _smooth(offset[seg], noise.lateral_window)
        offset[seg] = o
        if len(o) >= 2:
            lat_rate[seg] = np.gradient(o, dt)
    offset = np.clip(offset, -1.25, 1.25)

    orientation = np.degrees(np.arctan2(lat_rate * HALF_LANE_M, speed))
    x_ring = np.mod(x, ring_length_m) if ring_length_m else x
    return VehicleSeries(
        vehicle_id=track_id,
        label=label,
        frame=full,
        lane=lane,
        cell=(x_ring // cell_length_m).astype(int),
        lateral_offset=offset,
        speed_mps=np.maximum(speed, 0.0),
        accel_mps2=accel,
        steering_deg=STEER_GAIN_DEG * lat_rate,
        orientation_deg=orientation,
        flags=np.zeros(n, dtype=np.int64),
        x_m=x_ring,
        y_m=(lane - 0.5) * LANE_WIDTH_M + offset * HALF_LANE_M,
        confident=np.full(n, confident),
    )


@dataclass
class EstimatedTrace:
    series: dict[int, VehicleSeries]

    def observations(self) -> Iterator[TrackedObservation]:
        for tid, s in sorted(self.series.items()):
            for i in range(len(s)):
                yield TrackedObservation(
                    int(s.frame[i]), tid, (float(s.x_m[i]), float(s.y_m[i])),
                    float(s.speed_mps[i]), float(s.orientation_deg[i]), int(s.lane[i]),
                    float(s.lateral_offset[i]),
                )


def estimate_kinematics(obs: ObservationSet, noise: NoiseModel, cell_length_m: float = 7.5) -> EstimatedTrace:
    """Group observations by track id and estimate each track's kinematics."""
    out = {}
    for tid, idx in obs.by_track().items():
        out[tid] = estimate_track(
            obs.frame[idx], obs.x_m[idx], obs.y_m[idx], noise, obs.fps,
            obs.ring_length_m, cell_length_m, tid, obs.labels.get(tid, ""),
        )
    return EstimatedTrace(out)


def roadside_view(trace: GroundTruthTrace, camera: CameraModel, noise: NoiseModel, seed: int) -> EstimatedTrace:
    obs = observe(trace, camera, noise, seed)
    return estimate_kinematics(obs, noise, trace.config.cell_length_m)
