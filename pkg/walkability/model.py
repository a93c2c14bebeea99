"""Sidewalk network, trip data model and map matching.

A network is a set of polyline segments in WGS84; all geometry work happens in
a local planar frame (meters) centered on the network. Trips are stored as one
pandas frame per sensor channel, sorted by time.
"""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
import shapely
from scipy.integrate import cumulative_trapezoid

from .config import MatchingConfig
from .utils import LocalFrame, compass_heading_deg, polyline_length_m

logger = logging.getLogger(__name__)


class WalkabilityError(ValueError):
    """Base class for every error raised by the pipeline."""


class NetworkError(WalkabilityError):
    pass


class IngestError(WalkabilityError):
    pass


class FeatureError(WalkabilityError):
    pass


class AnalysisError(WalkabilityError):
    pass


class ScenarioError(WalkabilityError):
    pass


ENDPOINT_TOLERANCE_M = 1.0
LENGTH_TOLERANCE = 0.01


class SegmentKind(str, Enum):
    SIDEWALK = "sidewalk"
    CROSSING = "crossing"


@dataclass(frozen=True, eq=False)
class Segment:
    id: str
    polyline: Tuple[Tuple[float, float], ...]
    length_m: float
    nominal_width_m: float
    kind: SegmentKind
    xy: np.ndarray = field(repr=False)
    line: shapely.LineString = field(repr=False)

    @property
    def _scale(self):
        # planar frame meters -> geodesic meters
        return self.length_m / self.line.length

    def project(self, x, y):
        """Project planar points onto the polyline.

        :return: ``(s_m, d_m, dist_m)`` arrays; ``s_m`` is arc length from the
            first vertex, ``d_m`` the cross-track offset, positive to the left
            of the polyline direction.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        pts = shapely.points(x, y)
        s_planar = shapely.line_locate_point(self.line, pts)
        foot = shapely.line_interpolate_point(self.line, s_planar)
        px, py = shapely.get_x(foot), shapely.get_y(foot)

        h = 0.05
        ahead = shapely.line_interpolate_point(self.line, np.minimum(s_planar + h, self.line.length))
        behind = shapely.line_interpolate_point(self.line, np.maximum(s_planar - h, 0.0))
        tx = shapely.get_x(ahead) - shapely.get_x(behind)
        ty = shapely.get_y(ahead) - shapely.get_y(behind)

        rx, ry = x - px, y - py
        dist = np.hypot(rx, ry)
        side = np.sign(tx * ry - ty * rx)
        return s_planar * self._scale, side * dist, dist

    def point_at(self, s_m):
        """Planar position at arc length ``s_m`` (clamped to the segment)."""
        s_planar = np.clip(np.asarray(s_m, dtype=float) / self._scale, 0.0, self.line.length)
        pts = shapely.line_interpolate_point(self.line, s_planar)
        return shapely.get_x(pts), shapely.get_y(pts)

    def heading_at(self, s_m, direction=1):
        """Compass heading of travel at ``s_m`` for direction +1 (along the polyline) or -1."""
        s_m = np.asarray(s_m, dtype=float)
        x0, y0 = self.point_at(s_m - 0.05)
        x1, y1 = self.point_at(s_m + 0.05)
        heading = compass_heading_deg(x1 - x0, y1 - y0)
        if direction < 0:
            heading = np.mod(heading + 180.0, 360.0)
        return heading


@dataclass(eq=False)
class SidewalkNetwork:
    segments: Dict[str, Segment]
    frame: LocalFrame
    graph: nx.Graph = field(repr=False)
    bounds: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        self._ids = list(self.segments)
        self._lines = np.array([s.line for s in self.segments.values()], dtype=object)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments.values())

    @property
    def ids(self):
        return list(self._ids)

    @property
    def adjacency(self):
        """Sorted segment-id pairs sharing an endpoint."""
        return sorted(tuple(sorted(e)) for e in self.graph.edges())

    def segment(self, segment_id):
        try:
            return self.segments[segment_id]
        except KeyError as e:
            raise NetworkError(f"Unknown segment id: {segment_id}") from e

    def index_of(self, segment_id):
        return self._ids.index(segment_id)

    def inside_bounds(self, x, y, margin_m):
        minx, miny, maxx, maxy = self.bounds
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x >= minx - margin_m) & (x <= maxx + margin_m) & (y >= miny - margin_m) & (y <= maxy + margin_m)

    def distance_matrix(self, x, y):
        """Planar distance of every point to every segment, shape (n_points, n_segments)."""
        pts = shapely.points(np.atleast_1d(x), np.atleast_1d(y))
        return shapely.distance(self._lines[np.newaxis, :], pts[:, np.newaxis])

    def to_document(self):
        features = []
        for seg in self.segments.values():
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "LineString",
                        "coordinates": [[lon, lat] for lat, lon in seg.polyline],
                    },
                    "properties": {
                        "id": seg.id,
                        "kind": seg.kind.value,
                        "width_m": seg.nominal_width_m,
                        "length_m": seg.length_m,
                    },
                }
            )
        return {"type": "FeatureCollection", "features": features}


def _read_document(source):
    if isinstance(source, dict):
        return source
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as e:
            raise NetworkError(f"Cannot read network document {source}: {e}") from e
    else:
        text = source
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkError(f"Network document is not valid JSON: {e}") from e


def _positive_number(seg_id, key, value) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise NetworkError(f"Segment {seg_id}: {key} must be a number, got {value!r}") from None
    if not np.isfinite(number) or number <= 0:
        raise NetworkError(f"Segment {seg_id}: {key} must be positive, got {value!r}")
    return number


def load_network(source) -> SidewalkNetwork:
    """Load and validate a GeoJSON-style network document.

    :param source: path, JSON text or an already parsed mapping
    :return: validated network with planar geometry and an adjacency graph
    """
    doc = _read_document(source)
    features = doc.get("features") if isinstance(doc, dict) else None
    if not isinstance(features, list) or not features:
        raise NetworkError("Network document has no features")

    raw = []
    seen = set()
    for i, feat in enumerate(features):
        if not isinstance(feat, dict):
            raise NetworkError(f"Feature #{i} is not an object")
        props = feat.get("properties") or {}
        if not isinstance(props, dict):
            raise NetworkError(f"Feature #{i}: properties must be an object")
        seg_id = props.get("id")
        if seg_id is None:
            raise NetworkError(f"Feature #{i} has no id")
        seg_id = str(seg_id)
        if seg_id in seen:
            raise NetworkError(f"Duplicate segment id: {seg_id}")
        seen.add(seg_id)

        geom = feat.get("geometry") or {}
        coords = geom.get("coordinates") if isinstance(geom, dict) else None
        if not isinstance(geom, dict) or geom.get("type", "LineString") != "LineString":
            raise NetworkError(f"Segment {seg_id}: geometry must be a LineString")
        if not isinstance(coords, (list, tuple)) or len(coords) < 2:
            raise NetworkError(f"Segment {seg_id}: polyline needs at least 2 points")
        try:
            polyline = tuple((float(c[1]), float(c[0])) for c in coords)
        except (TypeError, ValueError, IndexError) as e:
            raise NetworkError(f"Segment {seg_id}: malformed coordinates") from e

        try:
            kind = SegmentKind(props.get("kind"))
        except ValueError as e:
            raise NetworkError(f"Segment {seg_id}: unknown kind {props.get('kind')!r}") from e

        width = _positive_number(seg_id, "width_m", props.get("width_m"))

        arc = polyline_length_m(polyline)
        if arc <= 0:
            raise NetworkError(f"Segment {seg_id}: polyline has zero length")
        length = props.get("length_m")
        if length is None:
            length = arc
        else:
            length = _positive_number(seg_id, "length_m", length)
            if abs(length - arc) > LENGTH_TOLERANCE * arc:
                raise NetworkError(f"Segment {seg_id}: length_m {length:.2f} differs from polyline arc length {arc:.2f}")
        raw.append((seg_id, polyline, float(length), width, kind))

    all_pts = np.array([p for r in raw for p in r[1]])
    lat0 = 0.5 * (all_pts[:, 0].min() + all_pts[:, 0].max())
    lon0 = 0.5 * (all_pts[:, 1].min() + all_pts[:, 1].max())
    frame = LocalFrame(lat0, lon0)

    segments = {}
    for seg_id, polyline, length, width, kind in raw:
        pts = np.array(polyline)
        x, y = frame.to_xy(pts[:, 0], pts[:, 1])
        xy = np.column_stack([x, y])
        segments[seg_id] = Segment(seg_id, polyline, length, width, kind, xy, shapely.LineString(xy))

    graph = nx.Graph()
    for seg in segments.values():
        graph.add_node(seg.id, kind=seg.kind.value, length_m=seg.length_m)
    seg_list = list(segments.values())
    for i, a in enumerate(seg_list):
        ends_a = a.xy[[0, -1]]
        for b in seg_list[i + 1 :]:
            ends_b = b.xy[[0, -1]]
            gap = np.min(np.hypot(ends_a[:, None, 0] - ends_b[None, :, 0], ends_a[:, None, 1] - ends_b[None, :, 1]))
            if gap < ENDPOINT_TOLERANCE_M:
                graph.add_edge(a.id, b.id, gap_m=float(gap))

    xs = np.concatenate([s.xy[:, 0] for s in seg_list])
    ys = np.concatenate([s.xy[:, 1] for s in seg_list])
    bounds = (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
    network = SidewalkNetwork(segments, frame, graph, bounds)
    logger.info("Loaded network with %d segments and %d adjacencies", len(segments), graph.number_of_edges())
    return network


# --- trip data -------------------------------------------------------------

CHANNEL_SCHEMAS = {
    "gnss": (("lat", "lat"), ("lon", "lon"), ("alt", "alt_m")),
    "vel": (("v", "v_mps"), ("heading", "heading_deg")),
    "imu": (("az", "az_mps2"),),
    "width": (("w", "w_m"),),
    "ped": (("id", "ped_id"), ("x", "x_m"), ("y", "y_m")),
    "light": (("level", "level"),),
}
STRING_COLUMNS = {"ped_id"}


@dataclass(frozen=True)
class Gnss:
    lat: float
    lon: float
    alt_m: float = float("nan")


@dataclass(frozen=True)
class Velocity:
    v_mps: float
    heading_deg: float


@dataclass(frozen=True)
class Imu:
    az_mps2: float


@dataclass(frozen=True)
class Width:
    w_m: float


@dataclass(frozen=True)
class Ped:
    ped_id: str
    x_m: float
    y_m: float


@dataclass(frozen=True)
class Light:
    level: float


PAYLOAD_TYPES = {"gnss": Gnss, "vel": Velocity, "imu": Imu, "width": Width, "ped": Ped, "light": Light}


@dataclass(frozen=True)
class SensorRecord:
    t: float
    channel: str
    payload: object


@dataclass(frozen=True)
class WeatherMeta:
    temperature: float
    wind_speed: float
    pressure: float
    precipitation: float


def empty_channel_frame(channel):
    cols = {"t": pd.Series(dtype=float)}
    for _, col in CHANNEL_SCHEMAS[channel]:
        cols[col] = pd.Series(dtype=object if col in STRING_COLUMNS else float)
    return pd.DataFrame(cols)


@dataclass(eq=False)
class TripLog:
    trip_id: str
    start_time: datetime
    channels: Dict[str, pd.DataFrame]
    meta: Optional[WeatherMeta] = None

    def channel(self, name) -> pd.DataFrame:
        if name not in CHANNEL_SCHEMAS:
            raise KeyError(f"Unknown channel: {name}")
        frame = self.channels.get(name)
        return empty_channel_frame(name) if frame is None else frame

    def has(self, name):
        frame = self.channels.get(name)
        return frame is not None and len(frame) > 0

    @property
    def counts(self):
        return {name: len(self.channel(name)) for name in CHANNEL_SCHEMAS}

    @property
    def time_span(self):
        starts = [f["t"].iloc[0] for f in self.channels.values() if len(f)]
        ends = [f["t"].iloc[-1] for f in self.channels.values() if len(f)]
        if not starts:
            return None
        return float(min(starts)), float(max(ends))

    @property
    def date(self):
        return self.start_time.astimezone(timezone.utc).date()

    def records(self) -> Iterator[SensorRecord]:
        """All records, ordered by time then channel."""
        rows = []
        for order, name in enumerate(CHANNEL_SCHEMAS):
            frame = self.channels.get(name)
            if frame is None or frame.empty:
                continue
            cols = [c for _, c in CHANNEL_SCHEMAS[name]]
            cls = PAYLOAD_TYPES[name]
            for i, row in enumerate(frame[["t"] + cols].itertuples(index=False, name=None)):
                rows.append((row[0], order, i, name, cls(*row[1:])))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        for t, _, _, name, payload in rows:
            yield SensorRecord(float(t), name, payload)

    def __eq__(self, other):
        if not isinstance(other, TripLog):
            return NotImplemented
        if self.trip_id != other.trip_id or self.start_time != other.start_time or self.meta != other.meta:
            return False
        for name in CHANNEL_SCHEMAS:
            a = self.channel(name).reset_index(drop=True)
            b = other.channel(name).reset_index(drop=True)
            if len(a) != len(b):
                return False
            if len(a) and not a.equals(b):
                return False
        return True


def trip_start_time(t0):
    return datetime.fromtimestamp(float(t0), tz=timezone.utc)


# --- traversals ------------------------------------------------------------


class MatchResult(NamedTuple):
    segment_id: str
    s_m: float
    d_m: float


@dataclass(eq=False)
class SegmentTraversal:
    trip_id: str
    segment_id: str
    t_enter: float
    t_exit: float
    direction: int
    length_m: float
    records: Dict[str, pd.DataFrame]
    path: pd.DataFrame

    @property
    def duration(self):
        return self.t_exit - self.t_enter

    def channel(self, name) -> pd.DataFrame:
        frame = self.records.get(name)
        return empty_channel_frame(name) if frame is None else frame

    def along_track(self, t):
        """Travel-frame distance from the segment entry at times ``t``.

        Integrated velocity anchored to the map-matched path; falls back to
        interpolating the path when fewer than two velocity samples exist.
        """
        t = np.asarray(t, dtype=float)
        vel = self.channel("vel")
        path_t = self.path["t"].to_numpy()
        path_s = self.path["s_m"].to_numpy()
        if len(vel) >= 2:
            tv = vel["t"].to_numpy()
            odo = cumulative_trapezoid(vel["v_mps"].to_numpy(), tv, initial=0.0)
            offset = np.median(path_s - np.interp(path_t, tv, odo))
            return np.interp(t, tv, odo) + offset
        return np.interp(t, path_t, path_s)

    def polyline_position(self, t):
        s = self.along_track(t)
        return s if self.direction > 0 else self.length_m - s


def _assign_segments(dist, gate_m, hysteresis_m):
    """Sequential gated nearest-segment assignment with hysteresis. -1 = unmatched."""
    n = dist.shape[0]
    out = np.full(n, -1, dtype=int)
    prev = -1
    for i in range(n):
        row = dist[i]
        best = int(np.argmin(row))
        if not row[best] <= gate_m:
            continue
        if prev >= 0 and row[prev] <= gate_m and row[prev] <= row[best] + hysteresis_m:
            best = prev
        out[i] = best
        prev = best
    return out


def _fix_latlon(fix):
    if isinstance(fix, Gnss):
        return fix.lat, fix.lon
    if isinstance(fix, dict):
        return float(fix["lat"]), float(fix["lon"])
    return float(fix[0]), float(fix[1])


def match_position(
    network: SidewalkNetwork, fix, prev: Optional[str] = None, config: Optional[MatchingConfig] = None
) -> Optional[MatchResult]:
    """Match one GNSS fix to the network.

    :param fix: ``Gnss`` record, ``(lat, lon)`` pair or mapping with lat/lon
    :param prev: segment id matched for the previous fix, if any
    :return: ``MatchResult`` or None when no segment lies within the gate
    """
    config = config or MatchingConfig()
    lat, lon = _fix_latlon(fix)
    x, y = network.frame.to_xy(lat, lon)
    if not network.inside_bounds(x, y, config.bbox_margin_m):
        logger.debug("Fix (%.6f, %.6f) outside network bounds", lat, lon)
        return None
    dist = network.distance_matrix(x, y)
    row = dist[0]
    best = int(np.argmin(row))
    if not row[best] <= config.gate_m:
        return None
    if prev is not None and prev in network.segments:
        p = network.index_of(prev)
        if row[p] <= config.gate_m and row[p] <= row[best] + config.hysteresis_m:
            best = p
    seg = network.segments[network.ids[best]]
    s, d, _ = seg.project(x, y)
    return MatchResult(seg.id, float(s[0]), float(d[0]))


@dataclass
class _Run:
    seg: int
    idx: np.ndarray


def _runs_from_assignment(t, seg_idx, max_gap_s):
    runs = []
    current = None
    last_t = None
    for i, s in enumerate(seg_idx):
        if s < 0:
            continue
        if current is not None and current.seg == s and t[i] - last_t <= max_gap_s:
            current.idx.append(i)
        else:
            current = _Run(int(s), [i])
            runs.append(current)
        last_t = t[i]
    for r in runs:
        r.idx = np.asarray(r.idx, dtype=int)
    return runs


def split_traversals(
    network: SidewalkNetwork, trip: TripLog, config: Optional[MatchingConfig] = None
) -> List[SegmentTraversal]:
    """Split a trip into per-segment traversals.

    Fixes are matched in time order; maximal runs of one segment become
    traversals. Runs shorter than the configured minimum are absorbed when
    both neighbours are the same segment, otherwise dropped.
    """
    config = config or MatchingConfig()
    gnss = trip.channel("gnss")
    if gnss.empty:
        logger.warning("Trip %s has no GNSS fixes, no traversals", trip.trip_id)
        return []

    t = gnss["t"].to_numpy(dtype=float)
    x, y = network.frame.to_xy(gnss["lat"].to_numpy(), gnss["lon"].to_numpy())
    alt = gnss["alt_m"].to_numpy(dtype=float)
    dist = network.distance_matrix(x, y)
    dist[~network.inside_bounds(x, y, config.bbox_margin_m)] = np.inf
    seg_idx = _assign_segments(dist, config.gate_m, config.hysteresis_m)
    runs = _runs_from_assignment(t, seg_idx, config.max_gap_s)
    if not runs:
        logger.warning("Trip %s: no GNSS fix matched any segment", trip.trip_id)
        return []

    segs = [network.segments[i] for i in network.ids]

    def is_short(run):
        s, _, _ = segs[run.seg].project(x[run.idx], y[run.idx])
        return t[run.idx[-1]] - t[run.idx[0]] < config.min_traversal_s or np.ptp(s) < config.min_traversal_m

    while True:
        short = [i for i, r in enumerate(runs) if is_short(r)]
        if not short:
            break
        i = short[0]
        if 0 < i < len(runs) - 1 and runs[i - 1].seg == runs[i + 1].seg:
            merged = _Run(runs[i - 1].seg, np.concatenate([runs[i - 1].idx, runs[i].idx, runs[i + 1].idx]))
            runs[i - 1 : i + 2] = [merged]
            continue
        logger.debug("Trip %s: dropping short run on %s", trip.trip_id, segs[runs[i].seg].id)
        del runs[i]
        if 0 < i < len(runs) and runs[i - 1].seg == runs[i].seg:
            runs[i - 1 : i + 1] = [_Run(runs[i - 1].seg, np.concatenate([runs[i - 1].idx, runs[i].idx]))]

    if not runs:
        logger.warning("Trip %s: every matched run was shorter than the minimum traversal", trip.trip_id)
        return []

    traversals = []
    for k, run in enumerate(runs):
        seg = segs[run.seg]
        t_first, t_last = t[run.idx[0]], t[run.idx[-1]]
        t_enter, t_exit = t_first, t_last
        if k > 0:
            t_prev = t[runs[k - 1].idx[-1]]
            if t_first - t_prev <= config.max_gap_s:
                t_enter = 0.5 * (t_prev + t_first)
        if k < len(runs) - 1:
            t_next = t[runs[k + 1].idx[0]]
            if t_next - t_last <= config.max_gap_s:
                t_exit = 0.5 * (t_last + t_next)
        if t_exit <= t_enter:
            continue

        s_poly, d_poly, _ = seg.project(x[run.idx], y[run.idx])
        direction = 1 if s_poly[-1] >= s_poly[0] else -1
        s_travel = s_poly if direction > 0 else seg.length_m - s_poly
        path = pd.DataFrame(
            {
                "t": t[run.idx],
                "s_m": s_travel,
                "d_m": d_poly * direction,
                "s_poly": s_poly,
                "x": x[run.idx],
                "y": y[run.idx],
                "alt_m": alt[run.idx],
            }
        )
        records = {}
        for name, frame in trip.channels.items():
            tt = frame["t"].to_numpy()
            lo = np.searchsorted(tt, t_enter, side="left")
            hi = np.searchsorted(tt, t_exit, side="right")
            records[name] = frame.iloc[lo:hi].reset_index(drop=True)
        traversals.append(
            SegmentTraversal(trip.trip_id, seg.id, float(t_enter), float(t_exit), direction, seg.length_m, records, path)
        )
    logger.debug("Trip %s split into %d traversals", trip.trip_id, len(traversals))
    return traversals
