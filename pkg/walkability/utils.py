from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

EARTH_RADIUS_M = 6371008.8


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters. Accepts scalars or numpy arrays."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def polyline_length_m(latlon):
    """Sum of pairwise geodesic distances along a (n, 2) lat/lon array."""
    latlon = np.asarray(latlon, dtype=float)
    if len(latlon) < 2:
        return 0.0
    d = haversine_m(latlon[:-1, 0], latlon[:-1, 1], latlon[1:, 0], latlon[1:, 1])
    return float(np.sum(d))


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular east/north frame in meters around an origin.

    :param lat0: origin latitude in degrees
    :param lon0: origin longitude in degrees
    """

    lat0: float
    lon0: float

    @property
    def _kx(self):
        return EARTH_RADIUS_M * np.cos(np.radians(self.lat0))

    def to_xy(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x = np.radians(lon - self.lon0) * self._kx
        y = np.radians(lat - self.lat0) * EARTH_RADIUS_M
        return x, y

    def to_latlon(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lat = self.lat0 + np.degrees(y / EARTH_RADIUS_M)
        lon = self.lon0 + np.degrees(x / self._kx)
        return lat, lon


def compass_heading_deg(dx, dy):
    """Compass heading (0 = north, clockwise) of a planar displacement."""
    return np.mod(np.degrees(np.arctan2(dx, dy)), 360.0)


def heading_vectors(heading_deg):
    """Forward and left unit vectors for a compass heading.

    Returns ``(fx, fy, lx, ly)``; forward of heading 0 is north, left of it west.
    """
    h = np.radians(np.asarray(heading_deg, dtype=float))
    fx, fy = np.sin(h), np.cos(h)
    return fx, fy, -fy, fx


def interp_heading_deg(t_new, t, heading_deg):
    """Linear interpolation of a compass heading across the 0/360 wrap."""
    if len(t) == 0:
        return np.full(np.shape(t_new), np.nan)
    unwrapped = np.unwrap(np.radians(np.asarray(heading_deg, dtype=float)))
    return np.mod(np.degrees(np.interp(t_new, t, unwrapped)), 360.0)


def clip_series(t, v, t0, t1):
    """Samples of ``v(t)`` restricted to ``[t0, t1]`` with interpolated endpoints.

    Values outside the sampled range are held at the nearest sample.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (t > t0) & (t < t1)
    v0, v1 = np.interp([t0, t1], t, v)
    tt = np.concatenate(([t0], t[inside], [t1]))
    vv = np.concatenate(([v0], v[inside], [v1]))
    return tt, vv


def time_integral(t, v, t0, t1):
    """Trapezoid integral of ``v(t)`` over ``[t0, t1]``."""
    if t1 <= t0:
        return 0.0
    tt, vv = clip_series(t, v, t0, t1)
    return float(trapezoid(vv, tt))


def contiguous_runs(mask):
    """Start/stop index pairs (stop exclusive) of the True runs of a boolean array."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return np.empty((0, 2), dtype=int)
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return edges.reshape(-1, 2)
