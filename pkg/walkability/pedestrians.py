"""Pedestrian trajectories, behaviour metrics and moving-observer density.

Detections arrive in the robot frame (x forward, y left). They are placed in
the network's planar frame using the robot pose, filtered to the segment
corridor, smoothed, and scored. Density is accumulated over the prism swept
by the robot's forward detection plane.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numba
import numpy as np
import pandas as pd

from .config import PedestrianConfig
from .model import Segment, SegmentTraversal
from .utils import heading_vectors, interp_heading_deg

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class PedestrianTrack:
    ped_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    qualified: bool = True
    smoothed: Optional[pd.DataFrame] = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    @property
    def span_s(self):
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    @property
    def points(self):
        return pd.DataFrame({"t": self.t, "x": self.x, "y": self.y})


@dataclass
class UtilizationFeatureBlock:
    total_ped_count: int = 0
    avg_ped_speed: Optional[float] = None
    ped_speed_variation: Optional[float] = None
    ped_turns: Optional[float] = None
    ped_path_deviation: Optional[float] = None
    max_ped_density: Optional[float] = 0.0
    avg_ped_density: Optional[float] = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass
class DetectionPrism:
    b: float
    c: float
    T: float
    occupancy: Dict[str, float] = field(default_factory=dict)
    tick_t: np.ndarray = field(default=None, repr=False)
    tick_count: np.ndarray = field(default=None, repr=False)

    @property
    def area(self):
        return self.b * self.c

    @property
    def volume(self):
        return self.T * self.area


class TrackMetrics(NamedTuple):
    avg_speed: float
    speed_sd: float
    n_turns: int
    path_deviation: float


class DensityResult(NamedTuple):
    k_max: Optional[float]
    k_avg: Optional[float]
    n_ped: int
    prism: Optional[DetectionPrism]


def robot_pose(trav: SegmentTraversal, segment: Segment, t):
    """Planar robot position and compass heading at times ``t``.

    Position follows the along-track odometry on the polyline, shifted by the
    median cross-track offset of the matched fixes.
    """
    t = np.asarray(t, dtype=float)
    s_poly = np.clip(trav.polyline_position(t), 0.0, segment.length_m)
    px, py = segment.point_at(s_poly)
    offset = float(np.median(trav.path["d_m"].to_numpy())) * trav.direction if len(trav.path) else 0.0
    fx, fy, lx, ly = heading_vectors(segment.heading_at(s_poly, 1))
    px, py = px + offset * lx, py + offset * ly

    vel = trav.channel("vel")
    if len(vel) >= 1:
        heading = interp_heading_deg(t, vel["t"].to_numpy(), vel["heading_deg"].to_numpy())
    else:
        heading = segment.heading_at(s_poly, trav.direction)
    return px, py, heading


def build_tracks(
    trav: SegmentTraversal, segment: Segment, config: Optional[PedestrianConfig] = None
) -> List[PedestrianTrack]:
    """Absolute-frame tracks of the pedestrians seen inside the segment corridor.

    Every corridor track is returned; ``qualified`` marks those long enough
    for behaviour metrics.
    """
    config = config or PedestrianConfig()
    ped = trav.channel("ped")
    if ped.empty or trav.path.empty:
        return []

    t = ped["t"].to_numpy(dtype=float)
    rel_x = ped["x_m"].to_numpy(dtype=float)
    rel_y = ped["y_m"].to_numpy(dtype=float)
    in_range = np.hypot(rel_x, rel_y) <= config.detection_range_m

    px, py, heading = robot_pose(trav, segment, t)
    fx, fy, lx, ly = heading_vectors(heading)
    ax = px + rel_x * fx + rel_y * lx
    ay = py + rel_x * fy + rel_y * ly

    _, _, dist = segment.project(ax, ay)
    keep = in_range & (dist <= segment.nominal_width_m / 2 + config.corridor_margin_m)
    frame = pd.DataFrame({"ped_id": ped["ped_id"].to_numpy(), "t": t, "x": ax, "y": ay})[keep]

    tracks = []
    for ped_id, group in frame.groupby("ped_id", sort=True):
        group = group.drop_duplicates("t").sort_values("t")
        track = PedestrianTrack(
            str(ped_id), group["t"].to_numpy(), group["x"].to_numpy(), group["y"].to_numpy()
        )
        track.qualified = len(track) >= config.min_track_points and track.span_s >= config.min_track_span_s
        tracks.append(track)
    logger.debug(
        "%s/%s: %d corridor tracks (%d qualified)",
        trav.trip_id,
        trav.segment_id,
        len(tracks),
        sum(tr.qualified for tr in tracks),
    )
    return tracks


def smooth_track(track: PedestrianTrack, window_s=1.0, step_s=0.5) -> pd.DataFrame:
    """Sliding-window mean positions on ticks at multiples of ``step_s``.

    Ticks whose full window lies inside the track span are used; tracks too
    short for any such tick fall back to every tick that has data.
    """
    t, x, y = track.t, track.x, track.y
    half = window_s / 2
    eps = 1e-9
    k0 = int(np.ceil((t[0] - half) / step_s - eps))
    k1 = int(np.floor((t[-1] + half) / step_s + eps))
    rows = []
    for k in range(k0, k1 + 1):
        tick = k * step_s
        lo = np.searchsorted(t, tick - half - eps, side="left")
        hi = np.searchsorted(t, tick + half + eps, side="right")
        if hi <= lo:
            continue
        full = tick - half >= t[0] - eps and tick + half <= t[-1] + eps
        rows.append((tick, float(np.mean(x[lo:hi])), float(np.mean(y[lo:hi])), full))
    frame = pd.DataFrame(rows, columns=["t", "x", "y", "full"])
    if frame["full"].any():
        frame = frame[frame["full"]]
    return frame.drop(columns="full").reset_index(drop=True)


def track_metrics(smoothed: pd.DataFrame, config: Optional[PedestrianConfig] = None) -> Optional[TrackMetrics]:
    """Average speed, speed spread, turn count and path deviation of one smoothed track.

    Average speed is walked path length over elapsed time. None below three
    points.
    """
    config = config or PedestrianConfig()
    if len(smoothed) < 3:
        return None
    t = smoothed["t"].to_numpy(dtype=float)
    x = smoothed["x"].to_numpy(dtype=float)
    y = smoothed["y"].to_numpy(dtype=float)
    dx, dy, dt = np.diff(x), np.diff(y), np.abs(np.diff(t))
    step = np.hypot(dx, dy)
    if np.all(step == 0):
        return TrackMetrics(0.0, 0.0, 0, 0.0)

    speeds = step / dt
    avg_speed = float(step.sum() / abs(t[-1] - t[0]))
    speed_sd = float(np.std(speeds))

    moving = step > config.bearing_floor_m
    bearings = np.arctan2(dy[moving], dx[moving])
    turn = np.abs(np.angle(np.exp(1j * np.diff(bearings))))
    n_turns = int(np.sum(np.degrees(turn) > config.turn_threshold_deg))

    chord_x, chord_y = x[-1] - x[0], y[-1] - y[0]
    chord = np.hypot(chord_x, chord_y)
    if chord < 1e-12:
        deviation = 0.0
    else:
        deviation = float(np.mean(np.abs(chord_x * (y - y[0]) - chord_y * (x - x[0])) / chord))
    return TrackMetrics(avg_speed, speed_sd, n_turns, deviation)


@numba.jit(nopython=True, cache=True)
def _prism_occupancy_(tick_t, robot_s, offsets, ped_t, ped_s, ped_d, c, half_b):
    n_tracks = len(offsets) - 1
    n_ticks = len(tick_t)
    inside = np.zeros((n_tracks, n_ticks), dtype=np.uint8)
    for j in range(n_tracks):
        a = offsets[j]
        b = offsets[j + 1]
        if b <= a:
            continue
        t0 = ped_t[a]
        t1 = ped_t[b - 1]
        for i in range(n_ticks):
            tt = tick_t[i]
            if tt < t0 - 1e-9 or tt > t1 + 1e-9:
                continue
            if b - a == 1:
                s = ped_s[a]
                d = ped_d[a]
            else:
                k = np.searchsorted(ped_t[a:b], tt) + a
                if k <= a:
                    k = a + 1
                if k >= b:
                    k = b - 1
                w = (tt - ped_t[k - 1]) / (ped_t[k] - ped_t[k - 1])
                w = min(max(w, 0.0), 1.0)
                s = ped_s[k - 1] + w * (ped_s[k] - ped_s[k - 1])
                d = ped_d[k - 1] + w * (ped_d[k] - ped_d[k - 1])
            if s >= robot_s[i] and s <= robot_s[i] + c and abs(d) <= half_b:
                inside[j, i] = 1
    return inside


def prism_duration(trav: SegmentTraversal, c: float) -> Optional[float]:
    """Time from segment entry until the robot is ``c`` meters before the end."""
    target = trav.length_m - c
    if target < 0:
        return None
    grid = np.arange(trav.t_enter, trav.t_exit + 1e-9, 0.05)
    if grid[-1] < trav.t_exit:
        grid = np.append(grid, trav.t_exit)
    s = np.maximum.accumulate(trav.along_track(grid))
    reached = np.flatnonzero(s >= target)
    if reached.size == 0:
        return None
    i = reached[0]
    if i == 0:
        return 0.0
    w = (target - s[i - 1]) / (s[i] - s[i - 1])
    return float(grid[i - 1] + w * (grid[i] - grid[i - 1]) - trav.t_enter)


def _occupancy_span(track: PedestrianTrack, smoothed: pd.DataFrame):
    """Smoothed points extended linearly to cover the raw detection span.

    Each raw detection stands for half a sampling interval on either side.
    """
    st = smoothed["t"].to_numpy(dtype=float)
    sx = smoothed["x"].to_numpy(dtype=float)
    sy = smoothed["y"].to_numpy(dtype=float)
    if len(st) < 2:
        return st, sx, sy
    half_dt = 0.5 * float(np.median(np.diff(track.t))) if len(track.t) > 1 else 0.0
    lo, hi = track.t[0] - half_dt, track.t[-1] + half_dt
    if lo < st[0]:
        w = (lo - st[0]) / (st[1] - st[0])
        st = np.concatenate(([lo], st))
        sx = np.concatenate(([sx[0] + w * (sx[1] - sx[0])], sx))
        sy = np.concatenate(([sy[0] + w * (sy[1] - sy[0])], sy))
    if hi > st[-1]:
        w = (hi - st[-1]) / (st[-1] - st[-2])
        st = np.append(st, hi)
        sx = np.append(sx, sx[-1] + w * (sx[-1] - sx[-2]))
        sy = np.append(sy, sy[-1] + w * (sy[-1] - sy[-2]))
    return st, sx, sy


def prism_density(
    trav: SegmentTraversal,
    tracks: Sequence[PedestrianTrack],
    segment: Segment,
    config: Optional[PedestrianConfig] = None,
) -> DensityResult:
    """Maximum and time-averaged density over the moving detection prism."""
    config = config or PedestrianConfig()
    n_ped = len({tr.ped_id for tr in tracks})
    b = segment.nominal_width_m
    c = config.prism_depth_m
    if b <= 0 or segment.length_m < c:
        logger.warning("%s/%s: segment too short or narrow for the detection prism", trav.trip_id, trav.segment_id)
        return DensityResult(None, None, n_ped, None)
    T = prism_duration(trav, c)
    if T is None or T <= 0:
        logger.warning("%s/%s: robot never covered the prism depth, densities null", trav.trip_id, trav.segment_id)
        return DensityResult(None, None, n_ped, None)

    step = config.smooth_step_s
    n_ticks = int(np.ceil(T / step - 1e-9))
    tick_t = trav.t_enter + step * np.arange(n_ticks)
    durations = np.minimum(step, trav.t_enter + T - tick_t)
    prism = DetectionPrism(b=b, c=c, T=T, tick_t=tick_t, tick_count=np.zeros(n_ticks, dtype=int))
    if not tracks:
        return DensityResult(0.0, 0.0, 0, prism)

    robot_s = trav.along_track(tick_t)
    offsets = [0]
    ts, ss, ds = [], [], []
    for tr in tracks:
        smoothed = tr.smoothed if tr.smoothed is not None else smooth_track(tr, config.smooth_window_s, step)
        st, sx, sy = _occupancy_span(tr, smoothed)
        s_poly, d_poly, _ = segment.project(sx, sy)
        s_travel = s_poly if trav.direction > 0 else segment.length_m - s_poly
        ts.append(st)
        ss.append(s_travel)
        ds.append(d_poly)
        offsets.append(offsets[-1] + len(st))

    inside = _prism_occupancy_(
        tick_t,
        robot_s,
        np.asarray(offsets, dtype=np.int64),
        np.concatenate(ts).astype(float),
        np.concatenate(ss).astype(float),
        np.concatenate(ds).astype(float),
        float(c),
        float(b / 2),
    )
    tau = inside.astype(float) @ durations
    prism.occupancy = {tr.ped_id: float(v) for tr, v in zip(tracks, tau)}
    prism.tick_count = inside.sum(axis=0).astype(int)
    k_avg = float(tau.sum() / prism.volume)
    k_max = float(prism.tick_count.max() / prism.area) if n_ticks else 0.0
    return DensityResult(k_max, k_avg, n_ped, prism)


def utilization_block(
    tracks: Sequence[PedestrianTrack], density: DensityResult, config: Optional[PedestrianConfig] = None
) -> UtilizationFeatureBlock:
    config = config or PedestrianConfig()
    block = UtilizationFeatureBlock(
        total_ped_count=density.n_ped, max_ped_density=density.k_max, avg_ped_density=density.k_avg
    )
    metrics = []
    for tr in tracks:
        if not tr.qualified:
            continue
        smoothed = tr.smoothed if tr.smoothed is not None else smooth_track(tr, config.smooth_window_s, config.smooth_step_s)
        m = track_metrics(smoothed, config)
        if m is not None:
            metrics.append(m)
    if metrics:
        block.avg_ped_speed = float(np.mean([m.avg_speed for m in metrics]))
        block.ped_speed_variation = float(np.mean([m.speed_sd for m in metrics]))
        block.ped_turns = float(np.mean([m.n_turns for m in metrics]))
        block.ped_path_deviation = float(np.mean([m.path_deviation for m in metrics]))
    return block


def track_rows(trav: SegmentTraversal, tracks: Sequence[PedestrianTrack]):
    """Rows for the optional track dump (raw points, then smoothed points)."""
    rows = []
    for tr in tracks:
        for t, x, y in zip(tr.t, tr.x, tr.y):
            rows.append((trav.trip_id, trav.segment_id, tr.ped_id, float(t), float(x), float(y), False))
        if tr.smoothed is not None:
            for t, x, y in tr.smoothed[["t", "x", "y"]].itertuples(index=False, name=None):
                rows.append((trav.trip_id, trav.segment_id, tr.ped_id, float(t), float(x), float(y), True))
    return rows
