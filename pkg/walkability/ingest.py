import dataclasses
import io
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd

from .model import (
    CHANNEL_SCHEMAS,
    STRING_COLUMNS,
    IngestError,
    TripLog,
    WeatherMeta,
    trip_start_time,
)

logger = logging.getLogger(__name__)

MAX_DROP_FRACTION = 0.10
MAX_SPAN_S = 24 * 3600.0
MAX_ABS_AZ = 50.0
FIELD_CHECKS = {
    ("vel", "v"): (lambda v: v >= 0, "negative speed"),
    ("width", "w"): (lambda w: w >= 0, "negative width"),
    ("imu", "az"): (lambda az: abs(az) < MAX_ABS_AZ, "acceleration out of range"),
    ("gnss", "lat"): (lambda lat: abs(lat) <= 90, "coordinate out of range"),
    ("gnss", "lon"): (lambda lon: abs(lon) <= 180, "coordinate out of range"),
}
WEATHER_COLUMNS = ["date", "avg_temperature", "avg_wind_speed", "pressure", "precipitation"]


@dataclass
class IngestReport:
    source: str
    total_lines: int = 0
    counts: Dict[str, int] = field(default_factory=dict)
    dropped: List[Tuple[int, str]] = field(default_factory=list)
    time_span: Optional[Tuple[float, float]] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def kept(self):
        return sum(self.counts.values())

    @property
    def dropped_count(self):
        return len(self.dropped)

    @property
    def reasons(self):
        return dict(Counter(reason for _, reason in self.dropped))

    def to_dict(self):
        return {
            "source": self.source,
            "total_lines": self.total_lines,
            "kept": self.kept,
            "counts": dict(self.counts),
            "dropped": self.dropped_count,
            "reasons": self.reasons,
            "time_span": list(self.time_span) if self.time_span else None,
            "warnings": list(self.warnings),
        }


class _LineError(Exception):
    pass


def _number(obj, key):
    if key not in obj:
        raise _LineError(f"missing field {key}")
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _LineError(f"non-numeric field {key}")
    value = float(value)
    if not math.isfinite(value):
        raise _LineError(f"non-finite field {key}")
    return value


def _parse_line(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        raise _LineError("invalid json")
    if not isinstance(obj, dict):
        raise _LineError("not an object")
    kind = obj.get("type")
    if kind not in CHANNEL_SCHEMAS:
        raise _LineError("unknown type")
    if "t" not in obj:
        raise _LineError("bad timestamp")
    try:
        t = _number(obj, "t")
    except _LineError:
        raise _LineError("bad timestamp")

    values = []
    for key, col in CHANNEL_SCHEMAS[kind]:
        if col in STRING_COLUMNS:
            if key not in obj:
                raise _LineError(f"missing field {key}")
            raw = obj[key]
            if isinstance(raw, bool) or not isinstance(raw, (str, int)):
                raise _LineError(f"invalid field {key}")
            values.append(str(raw))
        else:
            value = _number(obj, key)
            check = FIELD_CHECKS.get((kind, key))
            # range checks run before the remaining fields are required
            if check is not None and not check[0](value):
                raise _LineError(check[1])
            values.append(value)
    return kind, t, values


def _read_lines(source):
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8").splitlines(), "<bytes>"
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return source.read().splitlines(), getattr(source, "name", "<stream>")
    if isinstance(source, str) and ("\n" in source or source.lstrip().startswith("{")):
        return source.splitlines(), "<text>"
    path = Path(source)
    try:
        return path.read_text(encoding="utf-8").splitlines(), str(path)
    except (OSError, UnicodeDecodeError) as e:
        raise IngestError(f"Cannot read trip log {path}: {e}") from e


def parse_trip(source, trip_id: Optional[str] = None) -> Tuple[TripLog, IngestReport]:
    """Parse a line-delimited JSON trip log.

    :param source: path, JSON-lines text, bytes or a readable stream
    :param trip_id: defaults to the file stem
    :return: ``(TripLog, IngestReport)``
    """
    lines, name = _read_lines(source)
    if trip_id is None:
        trip_id = Path(name).stem if not name.startswith("<") else "trip"
    report = IngestReport(source=name)

    rows = {kind: [] for kind in CHANNEL_SCHEMAS}
    for line_no, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        report.total_lines += 1
        try:
            kind, t, values = _parse_line(text)
        except _LineError as e:
            report.dropped.append((line_no, str(e)))
            continue
        rows[kind].append((t, line_no, *values))

    if report.total_lines == 0:
        raise IngestError(f"{name}: empty trip log")

    channels = {}
    for kind, items in rows.items():
        if not items:
            continue
        cols = [c for _, c in CHANNEL_SCHEMAS[kind]]
        frame = pd.DataFrame(items, columns=["t", "_line"] + cols)
        frame = frame.sort_values("t", kind="mergesort").reset_index(drop=True)
        keys = ["t", "ped_id"] if kind == "ped" else ["t"]
        dup = frame.duplicated(subset=keys, keep="first")
        for line_no in frame.loc[dup, "_line"]:
            report.dropped.append((int(line_no), "duplicate timestamp"))
        frame = frame.loc[~dup].drop(columns="_line").reset_index(drop=True)
        for col in cols:
            frame[col] = frame[col].astype(object if col in STRING_COLUMNS else float)
        channels[kind] = frame
    report.dropped.sort()

    fraction = report.dropped_count / report.total_lines
    if fraction > MAX_DROP_FRACTION:
        raise IngestError(
            f"{name}: {report.dropped_count} of {report.total_lines} lines malformed ({fraction:.1%}), "
            f"reasons {report.reasons}"
        )
    if "gnss" not in channels:
        raise IngestError(f"{name}: no GNSS channel")

    report.counts = {kind: len(channels[kind]) if kind in channels else 0 for kind in CHANNEL_SCHEMAS}
    t0 = min(f["t"].iloc[0] for f in channels.values())
    t1 = max(f["t"].iloc[-1] for f in channels.values())
    report.time_span = (float(t0), float(t1))
    if t1 - t0 > MAX_SPAN_S:
        raise IngestError(f"{name}: time span {t1 - t0:.0f} s exceeds 24 h")
    if "vel" not in channels:
        report.warnings.append("no velocity channel")
    if report.dropped:
        logger.warning("%s: dropped %d malformed lines %s", name, report.dropped_count, report.reasons)
    for message in report.warnings:
        logger.warning("%s: %s", name, message)

    trip = TripLog(trip_id=trip_id, start_time=trip_start_time(t0), channels=channels)
    return trip, report


def trip_to_lines(trip: TripLog):
    """Yield the wire-format lines of a trip, ordered by time then channel."""
    for rec in trip.records():
        payload = dataclasses.asdict(rec.payload)
        obj = {"t": rec.t, "type": rec.channel}
        for key, col in CHANNEL_SCHEMAS[rec.channel]:
            obj[key] = payload[col] if col in STRING_COLUMNS else float(payload[col])
        yield json.dumps(obj, separators=(",", ":"))


def write_trip(trip: TripLog, target) -> int:
    """Write a trip in the wire format. Returns the number of lines written."""
    n = 0
    handle = open(target, "w", encoding="utf-8", newline="\n") if isinstance(target, (str, Path)) else target
    try:
        for line in trip_to_lines(trip):
            handle.write(line)
            handle.write("\n")
            n += 1
    finally:
        if handle is not target:
            handle.close()
    return n


@dataclass(eq=False)
class WeatherTable:
    frame: pd.DataFrame

    def __len__(self):
        return len(self.frame)

    def lookup(self, date) -> Optional[WeatherMeta]:
        if date not in self.frame.index:
            return None
        row = self.frame.loc[date]
        return WeatherMeta(
            temperature=float(row["avg_temperature"]),
            wind_speed=float(row["avg_wind_speed"]),
            pressure=float(row["pressure"]),
            precipitation=float(row["precipitation"]),
        )


def load_weather(source) -> WeatherTable:
    """Load a daily weather CSV (``date,avg_temperature,avg_wind_speed,pressure,precipitation``)."""
    try:
        df = pd.read_csv(source)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"Cannot read weather table {source}: {e}") from e
    missing = [c for c in WEATHER_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError(f"Weather table {source} lacks columns {missing}")
    df = df[WEATHER_COLUMNS].copy()
    try:
        df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d").dt.date
    except (ValueError, TypeError) as e:
        raise IngestError(f"Weather table {source}: bad date value ({e})") from e
    for col in WEATHER_COLUMNS[1:]:
        df[col] = pd.to_numeric(df[col], errors="coerce")
    incomplete = df.isna().any(axis=1)
    if incomplete.any():
        logger.warning("Weather table %s: dropping %d incomplete rows", source, int(incomplete.sum()))
        df = df.loc[~incomplete]
    dup = df["date"].duplicated()
    if dup.any():
        raise IngestError(f"Weather table {source}: duplicate date {df.loc[dup, 'date'].iloc[0]}")
    return WeatherTable(df.set_index("date").sort_index())


def join_weather(trip: TripLog, table: WeatherTable) -> TripLog:
    """Attach the weather row of the trip's start date (UTC); unchanged when absent."""
    meta = table.lookup(trip.date)
    if meta is None:
        logger.debug("No weather row for trip %s on %s", trip.trip_id, trip.date)
        return trip
    return dataclasses.replace(trip, meta=meta)
