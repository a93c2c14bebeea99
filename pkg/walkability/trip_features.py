import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence

from .config import TripConfig
from .model import FeatureError, SegmentTraversal, TripLog
from .utils import clip_series, contiguous_runs, time_integral

logger = logging.getLogger(__name__)


@dataclass
class TripFeatureBlock:
    segment_duration_s: Optional[float] = None
    segment_distance_m: Optional[float] = None
    relative_duration: Optional[float] = None
    relative_distance: Optional[float] = None
    segment_max_speed: Optional[float] = None
    segment_min_speed: Optional[float] = None
    segment_avg_speed: Optional[float] = None
    speed_drop_avg: Optional[float] = None
    trip_peak_speed: Optional[float] = None
    num_stops: Optional[int] = None
    total_wait_time_s: Optional[float] = None
    complete: bool = True

    def to_dict(self):
        out = asdict(self)
        out.pop("complete")
        return out


class Kinematics(NamedTuple):
    duration_s: float
    distance_m: float
    v_max: float
    v_min: float
    v_avg: float


def _velocity(trav):
    vel = trav.channel("vel")
    return vel["t"].to_numpy(dtype=float), vel["v_mps"].to_numpy(dtype=float)


def compute_kinematics(trav: SegmentTraversal) -> Optional[Kinematics]:
    """Duration, trapezoid distance and speed extrema of one traversal.

    Returns None when fewer than two velocity samples fall in the window.
    """
    t, v = _velocity(trav)
    if len(t) < 2:
        logger.debug("%s/%s: %d velocity samples, kinematics skipped", trav.trip_id, trav.segment_id, len(t))
        return None
    duration = trav.duration
    distance = time_integral(t, v, trav.t_enter, trav.t_exit)
    return Kinematics(duration, distance, float(v.max()), float(v.min()), distance / duration)


def compute_relative(values: Sequence[Optional[float]]) -> List[Optional[float]]:
    """Ratio of every value to the smallest positive value of the group.

    ``values`` holds one entry per traversal of a segment (durations or
    distances); missing entries stay None.
    """
    present = [v for v in values if v is not None and v > 0]
    if not present:
        return [None] * len(values)
    low = min(present)
    return [v / low if v is not None and v > 0 else None for v in values]


def compute_stops(trav: SegmentTraversal, config: Optional[TripConfig] = None):
    """Count halts below the stop speed lasting at least the dwell time.

    Interval edges are placed at the linearly interpolated threshold
    crossings and clipped to the traversal window.
    """
    config = config or TripConfig()
    t, v = _velocity(trav)
    if len(t) == 0:
        return None
    thr = config.stop_speed_mps
    below = v < thr
    n_stops, wait = 0, 0.0
    for lo, hi in contiguous_runs(below):
        if lo == 0:
            start = trav.t_enter
        else:
            t0, t1, v0, v1 = t[lo - 1], t[lo], v[lo - 1], v[lo]
            start = t0 + (v0 - thr) / (v0 - v1) * (t1 - t0)
        if hi == len(t):
            end = trav.t_exit
        else:
            t0, t1, v0, v1 = t[hi - 1], t[hi], v[hi - 1], v[hi]
            end = t0 + (thr - v0) / (v1 - v0) * (t1 - t0)
        start, end = max(start, trav.t_enter), min(end, trav.t_exit)
        if end - start >= config.stop_dwell_s:
            n_stops += 1
            wait += end - start
    return n_stops, wait


def compute_speed_drop(trav: SegmentTraversal, v_peak: float) -> float:
    """Time-averaged shortfall below the trip peak speed."""
    t, v = _velocity(trav)
    if len(t) == 0:
        raise FeatureError(f"{trav.trip_id}/{trav.segment_id}: no velocity samples")
    if trav.duration <= 0:
        raise FeatureError(f"{trav.trip_id}/{trav.segment_id}: non-positive duration")
    if v_peak < v.max() - 1e-12:
        raise FeatureError(
            f"{trav.trip_id}/{trav.segment_id}: peak speed {v_peak:.3f} below observed maximum {v.max():.3f}"
        )
    tt, vv = clip_series(t, v, trav.t_enter, trav.t_exit)
    return time_integral(tt, v_peak - vv, trav.t_enter, trav.t_exit) / trav.duration


def compute_trip_peak(trip: TripLog) -> Optional[float]:
    vel = trip.channel("vel")
    if vel.empty:
        return None
    return float(vel["v_mps"].max())


def trip_feature_block(trav: SegmentTraversal, v_peak: Optional[float], config: Optional[TripConfig] = None):
    block = TripFeatureBlock(segment_duration_s=trav.duration, trip_peak_speed=v_peak)
    kin = compute_kinematics(trav)
    if kin is None:
        block.complete = False
        return block
    block.segment_distance_m = kin.distance_m
    block.segment_max_speed = kin.v_max
    block.segment_min_speed = kin.v_min
    block.segment_avg_speed = kin.v_avg
    if v_peak is not None:
        block.speed_drop_avg = compute_speed_drop(trav, v_peak)
    n_stops, wait = compute_stops(trav, config)
    block.num_stops = n_stops
    block.total_wait_time_s = wait
    return block


def apply_relative(blocks_by_segment: Dict[str, List[TripFeatureBlock]]):
    """Fill relative duration and distance in place, per segment."""
    for blocks in blocks_by_segment.values():
        durations = compute_relative([b.segment_duration_s for b in blocks])
        distances = compute_relative([b.segment_distance_m for b in blocks])
        for block, rd, rs in zip(blocks, durations, distances):
            block.relative_duration = rd
            block.relative_distance = rs
