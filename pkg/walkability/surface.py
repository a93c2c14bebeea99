"""Sidewalk condition features from IMU, GNSS, width and light channels.

Two branches share the vertical acceleration: a high-pass branch feeds the
sliding-window RMS event detector (localized defects), a low-pass branch the
speed-normalized unevenness RMS (long-wave waviness).
"""

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np
import pandas as pd
from scipy import signal

from .config import SurfaceConfig
from .model import FeatureError, SegmentTraversal

logger = logging.getLogger(__name__)

MIN_FILTER_SAMPLES = 10


@dataclass(frozen=True)
class IrregularityEvent:
    trip_id: str
    segment_id: str
    s_m: float
    value: float
    t: float
    window_rms: float
    v_at: float


@dataclass
class IrregularityCluster:
    segment_id: str
    center_s_m: float
    extent_L_m: float
    mean_value: float
    event_count: int
    trips: Tuple[str, ...] = field(default_factory=tuple)


@dataclass
class ConditionFeatureBlock:
    segment_length_m: Optional[float] = None
    segment_width_m: Optional[float] = None
    min_effective_width: Optional[float] = None
    avg_effective_width: Optional[float] = None
    segment_slope: Optional[float] = None
    lighting_condition: Optional[float] = None
    irregularity_index: Optional[float] = None
    unevenness_index: Optional[float] = None
    unevenness_index_norm: Optional[float] = None

    def to_dict(self):
        return asdict(self)


def sample_rate(t):
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        return 0.0
    return 1.0 / float(np.median(np.diff(t)))


def _butter_filter(x, fs, cutoff_hz, order, btype):
    x = np.asarray(x, dtype=float)
    if len(x) < MIN_FILTER_SAMPLES:
        logger.warning("Signal of %d samples too short for %s filter", len(x), btype)
        return np.empty(0)
    if fs < 4 * cutoff_hz:
        raise FeatureError(f"Sample rate {fs:.2f} Hz below 4x the {cutoff_hz} Hz cutoff")
    sos = signal.butter(order, cutoff_hz, btype=btype, fs=fs, output="sos")
    padlen = min(3 * (2 * len(sos) + 1), len(x) - 1)
    return signal.sosfiltfilt(sos, x, padlen=padlen)


def highpass(x, fs, cutoff_hz=1.0, order=2):
    """Zero-phase Butterworth high-pass (forward-backward)."""
    return _butter_filter(x, fs, cutoff_hz, order, "highpass")


def lowpass(x, fs, cutoff_hz=3.0, order=2):
    """Zero-phase Butterworth low-pass (forward-backward)."""
    return _butter_filter(x, fs, cutoff_hz, order, "lowpass")


@numba.jit(nopython=True, cache=True)
def _window_rms_(t, x, starts, window):
    n = len(t)
    cs = np.zeros(n + 1)
    for i in range(n):
        cs[i + 1] = cs[i] + x[i] * x[i]
    out = np.zeros(len(starts))
    lo = 0
    hi = 0
    for k in range(len(starts)):
        a = starts[k] - 1e-9
        b = starts[k] + window - 1e-9
        while lo < n and t[lo] < a:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < n and t[hi] < b:
            hi += 1
        m = hi - lo
        if m > 0:
            out[k] = np.sqrt(max(cs[hi] - cs[lo], 0.0) / m)
        else:
            out[k] = np.nan
    return out


def sliding_rms(t, x, window_s=1.0, step_s=0.1) -> pd.DataFrame:
    """RMS over overlapping windows ``[start, start + window_s)``.

    :return: frame with columns ``t`` (window center), ``t_start``, ``rms``
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    empty = pd.DataFrame({"t": [], "t_start": [], "rms": []})
    if len(t) == 0 or t[-1] - t[0] < window_s - 1e-9:
        return empty
    n_windows = int(np.floor((t[-1] - t[0] - window_s) / step_s + 1e-9)) + 1
    starts = t[0] + step_s * np.arange(n_windows)
    rms = _window_rms_(t, x, starts, float(window_s))
    frame = pd.DataFrame({"t": starts + window_s / 2, "t_start": starts, "rms": rms})
    return frame.dropna().reset_index(drop=True)


def _imu_series(trav):
    imu = trav.channel("imu")
    return imu["t"].to_numpy(dtype=float), imu["az_mps2"].to_numpy(dtype=float)


def _speed_at(trav, t):
    vel = trav.channel("vel")
    if vel.empty:
        return np.full(np.shape(t), np.nan)
    return np.interp(t, vel["t"].to_numpy(dtype=float), vel["v_mps"].to_numpy(dtype=float))


def traversal_rms(trav: SegmentTraversal, config: Optional[SurfaceConfig] = None) -> pd.DataFrame:
    """High-pass the traversal's vertical acceleration and slide the RMS window over it."""
    config = config or SurfaceConfig()
    t, az = _imu_series(trav)
    if len(t) < MIN_FILTER_SAMPLES:
        return sliding_rms([], [])
    filtered = highpass(az, sample_rate(t), config.highpass_hz, config.filter_order)
    return sliding_rms(t, filtered, config.rms_window_s, config.rms_step_s)


def detect_events(
    trav: SegmentTraversal, rms: pd.DataFrame, threshold: float = 0.35, config: Optional[SurfaceConfig] = None
) -> List[IrregularityEvent]:
    """Speed-normalized events from above-threshold RMS windows.

    Consecutive windows over the threshold form one event. Its value uses the
    peak window and the speed there; its position is the RMS-weighted center
    of the run mapped through the traversal's along-track position.
    """
    config = config or SurfaceConfig()
    if rms.empty or trav.channel("vel").empty:
        return []
    tc = rms["t"].to_numpy()
    r = rms["rms"].to_numpy()
    v = _speed_at(trav, tc)
    hot = (r > threshold) & (v >= config.velocity_floor)

    idx = np.flatnonzero(hot)
    if idx.size == 0:
        return []
    groups = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    events = []
    for g in groups:
        peak = g[np.argmax(r[g])]
        w = r[g] ** 2
        t_center = float(np.sum(w * tc[g]) / np.sum(w))
        s_poly = float(np.clip(trav.polyline_position(t_center), 0.0, trav.length_m))
        v_at = float(v[peak])
        events.append(
            IrregularityEvent(
                trip_id=trav.trip_id,
                segment_id=trav.segment_id,
                s_m=s_poly,
                value=float(r[peak]) / max(v_at, config.velocity_floor),
                t=float(tc[peak]),
                window_rms=float(r[peak]),
                v_at=v_at,
            )
        )
    return events


def cluster_events(events: Sequence[IrregularityEvent], eps_m=1.0, min_extent_m=0.5) -> List[IrregularityCluster]:
    """1-D single-linkage clustering of one segment's events along the polyline."""
    if not events:
        return []
    ordered = sorted(events, key=lambda e: (e.s_m, e.trip_id, e.t))
    s = np.array([e.s_m for e in ordered])
    breaks = np.flatnonzero(np.diff(s) > eps_m) + 1
    clusters = []
    for members in np.split(np.arange(len(ordered)), breaks):
        group = [ordered[i] for i in members]
        pos = s[members]
        clusters.append(
            IrregularityCluster(
                segment_id=group[0].segment_id,
                center_s_m=float(np.mean(pos)),
                extent_L_m=max(float(pos.max() - pos.min()), min_extent_m),
                mean_value=float(np.mean([e.value for e in group])),
                event_count=len(group),
                trips=tuple(sorted({e.trip_id for e in group})),
            )
        )
    return clusters


def irregularity_index(clusters: Sequence[IrregularityCluster]) -> float:
    return float(sum(c.mean_value * c.extent_L_m for c in clusters))


def unevenness(trav: SegmentTraversal, config: Optional[SurfaceConfig] = None) -> Optional[float]:
    """Speed-normalized RMS of the low-passed vertical acceleration for one traversal.

    None when IMU or velocity is missing or the robot moved for less than the
    configured fraction of the samples.
    """
    config = config or SurfaceConfig()
    t, az = _imu_series(trav)
    if len(t) < MIN_FILTER_SAMPLES or trav.channel("vel").empty:
        return None
    v = _speed_at(trav, t)
    moving = np.mean(v >= config.velocity_floor)
    if moving < config.min_moving_fraction:
        logger.debug("%s/%s: moving fraction %.2f, excluded from unevenness", trav.trip_id, trav.segment_id, moving)
        return None
    centered = signal.detrend(az, type="constant")
    low = lowpass(centered, sample_rate(t), config.lowpass_hz, config.filter_order)
    normalized = low / np.maximum(v, config.velocity_floor)
    return float(np.sqrt(np.mean(normalized**2)))


def segment_unevenness(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def normalize_unevenness(per_segment: Dict[str, Optional[float]]) -> Dict[str, Optional[float]]:
    """Min-max scale segment unevenness to [0, 1] across the network."""
    present = {k: v for k, v in per_segment.items() if v is not None}
    if not present:
        return {k: None for k in per_segment}
    lo, hi = min(present.values()), max(present.values())
    span = hi - lo
    return {k: (None if v is None else (0.0 if span == 0 else (v - lo) / span)) for k, v in per_segment.items()}


def slope(trav: SegmentTraversal) -> Optional[float]:
    """Rise over run between the first and last matched fix, in travel direction."""
    alt = trav.path["alt_m"].to_numpy(dtype=float)
    finite = np.flatnonzero(np.isfinite(alt))
    if finite.size < 2 or trav.length_m <= 0:
        return None
    return float((alt[finite[-1]] - alt[finite[0]]) / trav.length_m)


def segment_slope(slopes: Sequence[Tuple[Optional[float], int]]):
    """Median slope along the polyline direction, and median absolute slope.

    :param slopes: ``(travel_slope, direction)`` per traversal
    """
    corrected = [s * d for s, d in slopes if s is not None]
    if not corrected:
        return None, None
    return float(np.median(corrected)), float(np.median(np.abs(corrected)))


def width_features(trav: SegmentTraversal):
    """``(min width, mean width, mean light level)``; each None without samples."""
    w = trav.channel("width")["w_m"].to_numpy(dtype=float)
    light = trav.channel("light")["level"].to_numpy(dtype=float)
    w_min = float(w.min()) if len(w) else None
    w_avg = float(w.mean()) if len(w) else None
    level = float(light.mean()) if len(light) else None
    return w_min, w_avg, level


def events_by_segment(events: Sequence[IrregularityEvent]):
    grouped = defaultdict(list)
    for e in events:
        grouped[e.segment_id].append(e)
    return grouped
