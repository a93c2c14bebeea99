"""Synthetic trips with planted ground truth.

A scenario drives the robot along a route of connected segments with an
acceleration-limited speed controller, then samples every sensor channel
from the true state plus noise. Each channel draws from its own seeded
substream so toggling one channel never reshuffles another.
"""

import copy
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, ValidationError, model_validator

from .ingest import trip_to_lines, write_trip
from .model import (
    CHANNEL_SCHEMAS,
    NetworkError,
    ScenarioError,
    SidewalkNetwork,
    TripLog,
    load_network,
    trip_start_time,
)
from .utils import LocalFrame, heading_vectors

logger = logging.getLogger(__name__)

GRAVITY = 9.80665
BUMP_FREQ_HZ = 8.0
BUMP_DURATION_S = 0.3
BUMP_DECAY_S = 0.08
WAYPOINT_INTERVAL_S = 2.0
CHANNEL_STREAMS = ["gnss", "vel", "imu", "width", "light", "ped_world", "ped_detect", "battery"]


class HaltSpec(BaseModel):
    segment_id: str
    s_m: float = Field(ge=0)
    duration_s: float = Field(gt=0)


class RobotSpec(BaseModel):
    target_speed_mps: float = Field(1.5, gt=0, le=1.6)
    battery_scale: float = Field(1.0, gt=0, le=1.0)
    battery_jitter: float = Field(0.0, ge=0, lt=1)
    accel_mps2: float = Field(1.5, gt=0)
    rolling_start: bool = True
    halts: List[HaltSpec] = Field(default_factory=list)


class BumpSpec(BaseModel):
    s_m: float = Field(ge=0)
    magnitude: float = Field(gt=0)


class PinchSpec(BaseModel):
    s_start_m: float = Field(ge=0)
    s_end_m: float = Field(ge=0)
    width_m: float = Field(ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.s_end_m <= self.s_start_m:
            raise ValueError("pinch s_end_m must exceed s_start_m")
        return self


class SurfaceSpec(BaseModel):
    bumps: List[BumpSpec] = Field(default_factory=list)
    undulation_amplitude: float = Field(0.0, ge=0)
    undulation_hz: float = Field(0.2, gt=0)
    grade: float = Field(0.0, ge=-0.3, le=0.3)
    effective_width_m: Optional[float] = Field(None, gt=0)
    width_spread_m: float = Field(0.0, ge=0)
    pinches: List[PinchSpec] = Field(default_factory=list)
    brightness: float = Field(0.5, ge=0)


class PedestrianSpec(BaseModel):
    density: float = Field(0.0, ge=0)
    speed_mean: float = Field(1.3, gt=0)
    speed_sd: float = Field(0.2, ge=0)
    speed_jitter: float = Field(0.1, ge=0)
    forward_fraction: float = Field(0.5, ge=0, le=1)
    zigzag_fraction: float = Field(0.0, ge=0, le=1)
    zigzag_amplitude_m: float = Field(0.5, ge=0)
    zigzag_period_s: float = Field(4.0, gt=0)
    congestion_coupling: float = Field(0.0, ge=0)
    density_jitter: float = Field(0.0, ge=0, lt=1)


class NoiseSpec(BaseModel):
    gnss_sigma_m: float = Field(0.05, ge=0)
    alt_sigma_m: float = Field(0.05, ge=0)
    imu_sigma: float = Field(0.1, ge=0)
    velocity_sigma: float = Field(0.01, ge=0)
    heading_sigma_deg: float = Field(0.0, ge=0)
    width_sigma_m: float = Field(0.05, ge=0)
    ped_sigma_m: float = Field(0.05, ge=0)
    light_sigma: float = Field(0.01, ge=0)
    dropout: float = Field(0.0, ge=0, lt=1)


class RatesSpec(BaseModel):
    imu_hz: int = Field(100, gt=0)
    gnss_hz: int = Field(10, gt=0)
    vel_hz: int = Field(10, gt=0)
    width_hz: int = Field(1, gt=0)
    light_hz: int = Field(1, gt=0)
    ped_hz: int = Field(5, gt=0)

    @model_validator(mode="after")
    def _divides_imu_rate(self):
        for name in ("gnss_hz", "vel_hz", "width_hz", "light_hz", "ped_hz"):
            rate = getattr(self, name)
            if rate > self.imu_hz or self.imu_hz % rate:
                raise ValueError(f"{name}={rate} must divide imu_hz={self.imu_hz}")
        return self


class ScenarioSpec(BaseModel):
    name: str = "scenario"
    network: Union[str, dict] = "builtin:campus"
    route: List[str] = Field(default_factory=list)
    start_time: datetime = datetime(2024, 9, 18, 8, 0, tzinfo=timezone.utc)
    trip_id: Optional[str] = None
    robot: RobotSpec = RobotSpec()
    surface: Dict[str, SurfaceSpec] = Field(default_factory=dict)
    pedestrians: Dict[str, PedestrianSpec] = Field(default_factory=dict)
    noise: NoiseSpec = NoiseSpec()
    rates: RatesSpec = RatesSpec()
    sensor_range_m: float = Field(12.0, gt=0)
    seed: int = Field(0, ge=0)
    trips_per_day: int = Field(2, ge=1)
    record_paths: bool = False


def load_scenario(source) -> ScenarioSpec:
    """Scenario from a JSON file path, JSON text or mapping."""
    try:
        if isinstance(source, dict):
            return ScenarioSpec.model_validate(source)
        text = Path(source).read_text(encoding="utf-8") if not str(source).lstrip().startswith("{") else source
        return ScenarioSpec.model_validate_json(text)
    except OSError as e:
        raise ScenarioError(f"Cannot read scenario {source}: {e}") from e
    except ValidationError as e:
        raise ScenarioError(f"Invalid scenario {source}: {e}") from e


# --- built-in network ------------------------------------------------------

CAMPUS_ORIGIN = (59.3490, 18.0720)
CAMPUS_LAYOUT = [
    # id, kind, width, planar vertices (m east, m north)
    ("S1", "sidewalk", 2.6, [(0, 0), (60, 0)]),
    ("S2", "sidewalk", 2.4, [(60, 0), (110, 0)]),
    ("S3", "sidewalk", 2.8, [(110, 0), (110, 45)]),
    ("S4", "sidewalk", 2.9, [(110, 45), (112, 80), (110, 115)]),
    ("S5", "sidewalk", 6.0, [(110, 115), (60, 115)]),
    ("S6", "sidewalk", 8.0, [(60, 115), (30, 117), (0, 115)]),
    ("S7", "sidewalk", 2.7, [(0, 115), (0, 60)]),
    ("S8", "crossing", 5.5, [(0, 60), (0, 30)]),
    ("S9", "sidewalk", 10.0, [(0, 30), (0, 0)]),
]


def layout_document(layout, origin=CAMPUS_ORIGIN):
    """GeoJSON document from ``(id, kind, width, planar vertices)`` rows around ``origin``."""
    frame = LocalFrame(*origin)
    features = []
    for seg_id, kind, width, vertices in layout:
        xy = np.array(vertices, dtype=float)
        lat, lon = frame.to_latlon(xy[:, 0], xy[:, 1])
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[round(float(b), 9), round(float(a), 9)] for a, b in zip(lat, lon)],
                },
                "properties": {"id": seg_id, "kind": kind, "width_m": width},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def campus_document():
    """GeoJSON document of a nine-segment campus loop."""
    return layout_document(CAMPUS_LAYOUT)


def builtin_network(name="campus") -> SidewalkNetwork:
    if name != "campus":
        raise NetworkError(f"Unknown built-in network: {name}")
    return load_network(campus_document())


def scenario_network(spec: ScenarioSpec) -> SidewalkNetwork:
    ref = spec.network
    if isinstance(ref, dict):
        return load_network(ref)
    if ref.startswith("builtin:"):
        return builtin_network(ref.split(":", 1)[1])
    return load_network(Path(ref))


# --- ground truth ----------------------------------------------------------


@dataclass
class GroundTruth:
    trip_id: str
    seed: int
    battery_scale: float
    peak_speed: float
    traversals: List[dict] = field(default_factory=list)
    bumps: List[dict] = field(default_factory=list)
    halts: List[dict] = field(default_factory=list)
    slopes: Dict[str, float] = field(default_factory=dict)
    ped_paths: Dict[str, list] = field(default_factory=dict, repr=False)

    @property
    def segment_sequence(self):
        return [tr["segment_id"] for tr in self.traversals]

    def to_dict(self, include_paths=False):
        out = {
            "trip_id": self.trip_id,
            "seed": self.seed,
            "battery_scale": self.battery_scale,
            "peak_speed": self.peak_speed,
            "traversals": self.traversals,
            "bumps": self.bumps,
            "halts": self.halts,
            "slopes": self.slopes,
        }
        if include_paths:
            out["ped_paths"] = self.ped_paths
        return out


@dataclass(eq=False)
class SimulatedTrip:
    trip: TripLog
    truth: GroundTruth
    network: SidewalkNetwork = field(repr=False)

    def wire_lines(self):
        return list(trip_to_lines(self.trip))


@dataclass(eq=False)
class _Leg:
    segment: object
    direction: int
    odo_start: float

    @property
    def odo_end(self):
        return self.odo_start + self.segment.length_m


def _plan_route(network: SidewalkNetwork, route: Sequence[str]) -> List[_Leg]:
    if not route:
        raise ScenarioError("Scenario route is empty")
    segs = []
    for seg_id in route:
        if seg_id not in network.segments:
            raise ScenarioError(f"Route references unknown segment {seg_id}")
        segs.append(network.segments[seg_id])

    def ends(seg):
        return seg.xy[0], seg.xy[-1]

    legs = []
    odo = 0.0
    exit_point = None
    for i, seg in enumerate(segs):
        start, end = ends(seg)
        if i == 0:
            direction = 1
            if len(segs) > 1:
                nxt_start, nxt_end = ends(segs[1])
                gap_fwd = min(np.hypot(*(end - nxt_start)), np.hypot(*(end - nxt_end)))
                gap_rev = min(np.hypot(*(start - nxt_start)), np.hypot(*(start - nxt_end)))
                direction = 1 if gap_fwd <= gap_rev else -1
        else:
            d_start = np.hypot(*(start - exit_point))
            d_end = np.hypot(*(end - exit_point))
            if min(d_start, d_end) >= 1.0:
                raise ScenarioError(f"Route step {route[i - 1]} -> {seg.id} is not connected")
            direction = 1 if d_start <= d_end else -1
        exit_point = end if direction > 0 else start
        legs.append(_Leg(seg, direction, odo))
        odo += seg.length_m
    return legs


def _drive(legs, robot: RobotSpec, scale, imu_hz):
    """Time-step the speed controller; returns time, odometry and speed arrays."""
    dt = 1.0 / imu_hz
    total = legs[-1].odo_end
    v_target = robot.target_speed_mps * scale
    a = robot.accel_mps2

    halts = []
    for h in robot.halts:
        leg = next((lg for lg in legs if lg.segment.id == h.segment_id), None)
        if leg is None:
            raise ScenarioError(f"Halt references segment {h.segment_id} not on the route")
        halts.append((leg.odo_start + min(h.s_m, leg.segment.length_m), h.duration_s, h.segment_id))
    halts.sort()

    xs, vs, halt_log = [], [], []
    x = 0.0
    v = v_target if robot.rolling_start else 0.0
    hold = 0
    k = 0
    max_steps = int(24 * 3600 * imu_hz)
    while x < total:
        if k > max_steps:
            raise ScenarioError("Route cannot be completed within 24 h")
        xs.append(x)
        if hold > 0:
            v = 0.0
            hold -= 1
        else:
            v_cmd = v_target
            if halts:
                dist = halts[0][0] - x
                v_cmd = min(v_cmd, np.sqrt(2.0 * a * max(dist, 0.0)))
                if dist <= 0.002:
                    odo, duration, seg_id = halts.pop(0)
                    hold = int(round(duration * imu_hz))
                    halt_log.append({"segment_id": seg_id, "t_start": k * dt, "t_end": (k + hold) * dt, "duration": hold * dt})
                    v = 0.0
                    hold -= 1
                    vs.append(v)
                    k += 1
                    continue
            v = v + float(np.clip(v_cmd - v, -a * dt, a * dt))
        vs.append(v)
        x += v * dt
        k += 1
    t = np.arange(len(xs)) * dt
    return t, np.asarray(xs), np.asarray(vs), halt_log


def _bump_signature(imu_hz, magnitude, window_s=1.0):
    u = np.arange(int(round(BUMP_DURATION_S * imu_hz))) / imu_hz
    unit = np.exp(-u / BUMP_DECAY_S) * np.sin(2 * np.pi * BUMP_FREQ_HZ * u)
    window_rms = np.sqrt(np.sum(unit**2) / (window_s * imu_hz))
    return unit * (magnitude / window_rms)


def _rngs(seed):
    children = np.random.SeedSequence(seed).spawn(len(CHANNEL_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(CHANNEL_STREAMS, children)}


def _triangle(u):
    return 4.0 * np.abs(u - np.floor(u + 0.5)) - 1.0


def _simulate_pedestrians(trip_id, k_leg, leg, pspec, ticks, t_enter, pose, rngs, spec, truth):
    """Detections of one leg's pedestrian population at the ped ticks (relative seconds)."""
    seg = leg.segment
    L, b = seg.length_m, seg.nominal_width_m
    world = rngs["ped_world"]
    rho = pspec.density * (1.0 + world.uniform(-pspec.density_jitter, pspec.density_jitter))
    count = int(world.poisson(rho * L * b))
    if count == 0 or len(ticks) == 0:
        return [], rho, 0

    mean_speed = pspec.speed_mean * max(0.2, 1.0 - pspec.congestion_coupling * rho)
    s0 = world.uniform(0, L, count)
    heading_sign = np.where(world.uniform(size=count) < pspec.forward_fraction, 1.0, -1.0)
    base = np.clip(world.normal(mean_speed, pspec.speed_sd, count), 0.3, 2.5)
    zigzag = world.uniform(size=count) < pspec.zigzag_fraction
    amp = np.where(zigzag, min(pspec.zigzag_amplitude_m, b / 2), 0.0)
    d0 = world.uniform(-b / 2 + amp, b / 2 - amp)
    phase = world.uniform(size=count)

    rel = ticks - t_enter
    n_wp = int(np.floor(rel[-1] / WAYPOINT_INTERVAL_S)) + 1
    wp_speed = np.clip(base[:, None] * (1.0 + world.normal(0.0, pspec.speed_jitter, (count, n_wp))), 0.2, None)
    speed = wp_speed[:, np.floor(rel / WAYPOINT_INTERVAL_S).astype(int)]
    dt = np.diff(rel, prepend=rel[0])
    s = s0[:, None] + heading_sign[:, None] * np.cumsum(speed * dt[None, :], axis=1)
    wraps = np.floor(s / L).astype(int)
    s_mod = s - wraps * L
    d = d0[:, None] + amp[:, None] * _triangle(rel[None, :] / pspec.zigzag_period_s + phase[:, None])

    px, py = seg.point_at(s_mod.ravel())
    _, _, lx, ly = heading_vectors(seg.heading_at(s_mod.ravel(), 1))
    px = (px + d.ravel() * lx).reshape(s.shape)
    py = (py + d.ravel() * ly).reshape(s.shape)

    rx, ry, rh = pose
    fx, fy, hlx, hly = heading_vectors(rh)
    dx, dy = px - rx[None, :], py - ry[None, :]
    xr = dx * fx[None, :] + dy * fy[None, :]
    yr = dx * hlx[None, :] + dy * hly[None, :]

    detect = rngs["ped_detect"]
    visible = (xr >= 0) & (np.hypot(xr, yr) <= spec.sensor_range_m)
    visible &= detect.uniform(size=xr.shape) >= spec.noise.dropout
    xr = xr + detect.normal(0.0, spec.noise.ped_sigma_m, xr.shape) if spec.noise.ped_sigma_m else xr
    yr = yr + detect.normal(0.0, spec.noise.ped_sigma_m, yr.shape) if spec.noise.ped_sigma_m else yr

    rows = []
    for n in range(count):
        for j in range(len(ticks)):
            ped_id = f"{trip_id}.{k_leg}.{n}.{wraps[n, j]}"
            truth.ped_paths.setdefault(ped_id, []).append([float(ticks[j]), float(px[n, j]), float(py[n, j])])
            if visible[n, j]:
                rows.append((ticks[j], ped_id, xr[n, j], yr[n, j]))
    return rows, rho, count


def generate(spec: ScenarioSpec, network: Optional[SidewalkNetwork] = None) -> SimulatedTrip:
    """Simulate one trip of ``spec``; the seed fixes every emitted byte."""
    network = network or scenario_network(spec)
    route = list(spec.route) or network.ids
    legs = _plan_route(network, route)
    for seg_id in list(spec.surface) + list(spec.pedestrians):
        if seg_id not in network.segments:
            raise ScenarioError(f"Scenario references unknown segment {seg_id}")

    rngs = _rngs(spec.seed)
    scale = spec.robot.battery_scale * (1.0 - rngs["battery"].uniform(0.0, spec.robot.battery_jitter))
    rates = spec.rates
    t, odo, v, halt_log = _drive(legs, spec.robot, scale, rates.imu_hz)
    n = len(t)
    t0 = spec.start_time.timestamp()
    trip_id = spec.trip_id or spec.name

    leg_starts = np.array([lg.odo_start for lg in legs])
    leg_idx = np.clip(np.searchsorted(leg_starts, odo, side="right") - 1, 0, len(legs) - 1)
    s_travel = odo - leg_starts[leg_idx]
    s_poly = np.empty(n)
    x = np.empty(n)
    y = np.empty(n)
    heading = np.empty(n)
    alt = np.empty(n)
    grade_travel = np.zeros(n)
    for k, leg in enumerate(legs):
        sel = leg_idx == k
        seg = leg.segment
        sp = s_travel[sel] if leg.direction > 0 else seg.length_m - s_travel[sel]
        s_poly[sel] = sp
        x[sel], y[sel] = seg.point_at(sp)
        heading[sel] = seg.heading_at(sp, leg.direction)
        grade = spec.surface[seg.id].grade if seg.id in spec.surface else 0.0
        alt[sel] = 20.0 + grade * sp
        grade_travel[sel] = grade * leg.direction

    truth = GroundTruth(trip_id=trip_id, seed=spec.seed, battery_scale=float(scale), peak_speed=float(v.max()))
    truth.halts = [{**h, "t_start": t0 + h["t_start"], "t_end": t0 + h["t_end"]} for h in halt_log]

    az = GRAVITY * np.cos(np.arctan(grade_travel))
    leg_enter = {}
    for k, leg in enumerate(legs):
        idx = np.flatnonzero(leg_idx == k)
        if idx.size == 0:
            continue
        t_in = t[idx[0]]
        t_out = t[idx[-1] + 1] if idx[-1] + 1 < n else t[-1]
        leg_enter[k] = (idx, t_in, t_out, len(truth.traversals))
        sspec = spec.surface.get(leg.segment.id)
        truth.traversals.append(
            {
                "segment_id": leg.segment.id,
                "direction": leg.direction,
                "t_enter": t0 + t_in,
                "t_exit": t0 + t_out,
                "odometry_m": float(odo[idx[-1]] - odo[idx[0]] + v[idx[-1]] / rates.imu_hz),
                "density": 0.0,
                "n_peds": 0,
            }
        )
        if sspec is None:
            continue
        truth.slopes[leg.segment.id] = sspec.grade
        if sspec.undulation_amplitude > 0:
            az[idx] += sspec.undulation_amplitude * np.sin(2 * np.pi * sspec.undulation_hz * (t[idx] - t_in))
        for bump in sspec.bumps:
            s_b = min(bump.s_m, leg.segment.length_m)
            target = leg.odo_start + (s_b if leg.direction > 0 else leg.segment.length_m - s_b)
            hit = np.searchsorted(odo, target, side="left")
            if hit >= n:
                continue
            sig = _bump_signature(rates.imu_hz, bump.magnitude)
            end = min(hit + len(sig), n)
            az[hit:end] += sig[: end - hit]
            truth.bumps.append(
                {"segment_id": leg.segment.id, "s_m": s_b, "t": t0 + t[hit], "magnitude": bump.magnitude}
            )

    noise = spec.noise
    channels = {}

    imu_noise = rngs["imu"].normal(0.0, noise.imu_sigma, n) if noise.imu_sigma else 0.0
    channels["imu"] = pd.DataFrame({"t": t, "az_mps2": np.round(az + imu_noise, 4)})

    gi = np.arange(0, n, rates.imu_hz // rates.gnss_hz)
    g = rngs["gnss"]
    gx = x[gi] + (g.normal(0.0, noise.gnss_sigma_m, gi.size) if noise.gnss_sigma_m else 0.0)
    gy = y[gi] + (g.normal(0.0, noise.gnss_sigma_m, gi.size) if noise.gnss_sigma_m else 0.0)
    galt = alt[gi] + (g.normal(0.0, noise.alt_sigma_m, gi.size) if noise.alt_sigma_m else 0.0)
    lat, lon = network.frame.to_latlon(gx, gy)
    channels["gnss"] = pd.DataFrame(
        {"t": t[gi], "lat": np.round(lat, 9), "lon": np.round(lon, 9), "alt_m": np.round(galt, 3)}
    )

    vi = np.arange(0, n, rates.imu_hz // rates.vel_hz)
    r = rngs["vel"]
    vv = v[vi] + (r.normal(0.0, noise.velocity_sigma, vi.size) if noise.velocity_sigma else 0.0)
    hh = heading[vi] + (r.normal(0.0, noise.heading_sigma_deg, vi.size) if noise.heading_sigma_deg else 0.0)
    channels["vel"] = pd.DataFrame(
        {"t": t[vi], "v_mps": np.round(np.clip(vv, 0.0, None), 4), "heading_deg": np.round(np.mod(hh, 360.0), 3)}
    )

    wi = np.arange(0, n, rates.imu_hz // rates.width_hz)
    r = rngs["width"]
    width = np.empty(wi.size)
    for j, i in enumerate(wi):
        seg = legs[leg_idx[i]].segment
        sspec = spec.surface.get(seg.id)
        w = seg.nominal_width_m
        if sspec is not None:
            w = sspec.effective_width_m or w
            for pinch in sspec.pinches:
                if pinch.s_start_m <= s_poly[i] <= pinch.s_end_m:
                    w = min(w, pinch.width_m)
            w -= r.uniform(0.0, sspec.width_spread_m) if sspec.width_spread_m else 0.0
        width[j] = w
    if noise.width_sigma_m:
        width += r.normal(0.0, noise.width_sigma_m, wi.size)
    channels["width"] = pd.DataFrame({"t": t[wi], "w_m": np.round(np.clip(width, 0.0, None), 3)})

    li = np.arange(0, n, rates.imu_hz // rates.light_hz)
    r = rngs["light"]
    level = np.array(
        [spec.surface[s].brightness if s in spec.surface else 0.5 for s in (legs[leg_idx[i]].segment.id for i in li)]
    )
    if noise.light_sigma:
        level = level + r.normal(0.0, noise.light_sigma, li.size)
    channels["light"] = pd.DataFrame({"t": t[li], "level": np.round(np.clip(level, 0.0, None), 3)})

    ped_rows = []
    step = rates.imu_hz // rates.ped_hz
    for k, leg in enumerate(legs):
        pspec = spec.pedestrians.get(leg.segment.id)
        if pspec is None or k not in leg_enter:
            continue
        idx, t_in, t_out, tk = leg_enter[k]
        pi = idx[(idx % step) == 0]
        pose = (x[pi], y[pi], heading[pi])
        rows, rho, count = _simulate_pedestrians(trip_id, k, leg, pspec, t[pi], t_in, pose, rngs, spec, truth)
        ped_rows.extend(rows)
        truth.traversals[tk]["density"] = count / (leg.segment.length_m * leg.segment.nominal_width_m)
        truth.traversals[tk]["n_peds"] = count
    if ped_rows:
        ped = pd.DataFrame(ped_rows, columns=["t", "ped_id", "x_m", "y_m"])
        ped = ped.sort_values(["t", "ped_id"], kind="mergesort").reset_index(drop=True)
        ped["x_m"] = np.round(ped["x_m"].to_numpy(dtype=float), 3)
        ped["y_m"] = np.round(ped["y_m"].to_numpy(dtype=float), 3)
        ped["ped_id"] = ped["ped_id"].astype(object)
        channels["ped"] = ped

    for name, frame in channels.items():
        frame["t"] = np.round(frame["t"].to_numpy() + t0, 3)
        channels[name] = frame[["t"] + [c for _, c in CHANNEL_SCHEMAS[name]]].reset_index(drop=True)
    for paths in truth.ped_paths.values():
        for p in paths:
            p[0] = round(p[0] + t0, 3)

    trip = TripLog(trip_id=trip_id, start_time=trip_start_time(min(f["t"].iloc[0] for f in channels.values())),
                   channels=channels)
    logger.info("Simulated trip %s: %d legs, %.0f s", trip_id, len(legs), t[-1])
    return SimulatedTrip(trip, truth, network)


# --- fleets ----------------------------------------------------------------


@dataclass(eq=False)
class Fleet:
    trips: List[SimulatedTrip]
    manifest: dict
    network: SidewalkNetwork = field(repr=False)


def _trip_spec(specs, i, seed):
    base = specs[i % len(specs)]
    trip_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
    day, slot = divmod(i, base.trips_per_day)
    spec = copy.deepcopy(base)
    spec.seed = trip_seed
    spec.trip_id = f"trip_{i:03d}"
    spec.start_time = base.start_time + timedelta(days=day, hours=2 * slot)
    return spec


def _manifest(names, seed, trip_specs, trips):
    return {
        "scenarios": list(names),
        "seed": seed,
        "n_trips": len(trips),
        "network": "network.geojson",
        "weather": "weather.csv",
        "trips": [
            {
                "trip_id": sim.truth.trip_id,
                "scenario": s.name,
                "seed": s.seed,
                "start_time": s.start_time.isoformat(),
                "log": f"{sim.truth.trip_id}.jsonl",
                "truth": f"{sim.truth.trip_id}.truth.json",
            }
            for s, sim in zip(trip_specs, trips)
        ],
    }


def fleet(specs: Sequence[ScenarioSpec], n: int, seed=0, n_jobs=1) -> Fleet:
    """``n`` seeded variations of the given scenarios, cycled in order."""
    if n < 1:
        raise ScenarioError("A fleet needs at least one trip")
    if not specs:
        raise ScenarioError("A fleet needs at least one scenario")
    network = scenario_network(specs[0])
    trip_specs = [_trip_spec(list(specs), i, seed) for i in range(n)]
    trips = Parallel(n_jobs=n_jobs)(delayed(generate)(s, network) for s in trip_specs)
    return Fleet(trips, _manifest([s.name for s in specs], seed, trip_specs, trips), network)


def single(spec: ScenarioSpec) -> Fleet:
    """One trip of ``spec`` exactly as configured, wrapped for ``write_fleet``."""
    sim = generate(spec)
    return Fleet([sim], _manifest([spec.name], spec.seed, [spec], [sim]), sim.network)


def synthetic_weather(dates, seed=0) -> pd.DataFrame:
    """Daily weather rows for the given dates (deterministic in ``seed``)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1_000_003]))
    dates = sorted(set(dates))
    n = len(dates)
    return pd.DataFrame(
        {
            "date": [d.isoformat() for d in dates],
            "avg_temperature": np.round(rng.normal(12.0, 4.0, n), 1),
            "avg_wind_speed": np.round(rng.uniform(1.0, 8.0, n), 1),
            "pressure": np.round(rng.normal(1013.0, 6.0, n), 1),
            "precipitation": np.round(np.clip(rng.normal(0.5, 2.0, n), 0.0, None), 1),
        }
    )


def write_fleet(result: Fleet, out_dir, include_paths=False) -> Path:
    """Write logs, truth sidecars, network, weather and manifest; returns the manifest path."""
    from .functions import write_json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sim in result.trips:
        write_trip(sim.trip, out / f"{sim.truth.trip_id}.jsonl")
        write_json(sim.truth.to_dict(include_paths=include_paths), out / f"{sim.truth.trip_id}.truth.json")
    write_json(result.network.to_document(), out / "network.geojson")
    weather = synthetic_weather([sim.trip.date for sim in result.trips], result.manifest["seed"])
    weather.to_csv(out / "weather.csv", index=False, lineterminator="\n")
    return write_json(result.manifest, out / "manifest.json")
