import glob
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import pedestrians, surface, trip_features
from .config import ExtractionConfig
from .ingest import IngestReport, join_weather, parse_trip
from .model import FeatureError, SidewalkNetwork, TripLog, WalkabilityError, load_network, split_traversals

logger = logging.getLogger(__name__)

KEY_COLUMNS = ["trip_id", "segment_id", "segment_kind", "direction", "t_enter", "t_exit"]
TRIP_COLUMNS = [
    "segment_duration_s",
    "segment_distance_m",
    "relative_duration",
    "relative_distance",
    "segment_max_speed",
    "segment_min_speed",
    "segment_avg_speed",
    "speed_drop_avg",
    "trip_peak_speed",
    "num_stops",
    "total_wait_time_s",
]
CONDITION_COLUMNS = [
    "segment_length_m",
    "segment_width_m",
    "min_effective_width",
    "avg_effective_width",
    "segment_slope",
    "lighting_condition",
    "irregularity_index",
    "unevenness_index",
]
UTILIZATION_COLUMNS = [
    "total_ped_count",
    "avg_ped_speed",
    "ped_speed_variation",
    "ped_turns",
    "ped_path_deviation",
    "max_ped_density",
    "avg_ped_density",
]
EXTRA_COLUMNS = ["unevenness_index_norm", "segment_abs_slope"]
WEATHER_COLUMNS = ["avg_temperature", "avg_wind_speed", "pressure", "precipitation"]
FEATURE_COLUMNS = (
    KEY_COLUMNS + TRIP_COLUMNS + CONDITION_COLUMNS + UTILIZATION_COLUMNS + EXTRA_COLUMNS + WEATHER_COLUMNS + ["flags"]
)
CATALOG_COLUMNS = TRIP_COLUMNS + CONDITION_COLUMNS + UTILIZATION_COLUMNS
INTEGER_COLUMNS = ["direction", "num_stops", "total_ped_count"]


@dataclass
class TripResult:
    trip_id: str
    rows: List[dict] = field(default_factory=list)
    events: List[surface.IrregularityEvent] = field(default_factory=list)
    track_rows: List[tuple] = field(default_factory=list)


@dataclass
class Extraction:
    features: pd.DataFrame
    events: List[surface.IrregularityEvent]
    clusters: Dict[str, List[surface.IrregularityCluster]]
    segment_values: Dict[str, dict]
    track_rows: List[tuple] = field(default_factory=list)


def resolve_network(ref) -> SidewalkNetwork:
    """Network from a document path, or ``builtin:campus``."""
    if isinstance(ref, SidewalkNetwork):
        return ref
    if str(ref).startswith("builtin:"):
        from .simulator import builtin_network

        return builtin_network(str(ref).split(":", 1)[1])
    return load_network(Path(ref))


def expand_inputs(patterns: Sequence[str]) -> List[Path]:
    """Sorted, de-duplicated trip log paths from files, directories and globs."""
    paths = set()
    for pattern in patterns:
        p = Path(pattern)
        if p.is_dir():
            paths.update(q for q in p.glob("*.jsonl"))
        elif any(ch in str(pattern) for ch in "*?["):
            paths.update(Path(q) for q in glob.glob(str(pattern)))
        else:
            paths.add(p)
    return sorted(paths)


def _parse_one(path, table):
    trip, report = parse_trip(path)
    if table is not None:
        trip = join_weather(trip, table)
    return trip, report


def load_trips(paths: Sequence[Path], weather=None, n_jobs=1):
    """Parse trip logs in parallel; returns ``[(TripLog, IngestReport), ...]`` in path order."""
    return Parallel(n_jobs=n_jobs)(delayed(_parse_one)(p, weather) for p in paths)


def _traversal_row(network, trav, v_peak, trip, config: ExtractionConfig):
    seg = network.segment(trav.segment_id)
    flags = []
    block = trip_features.trip_feature_block(trav, v_peak, config.trip)
    if not block.complete or v_peak is None:
        flags.append("incomplete")

    w_min, w_avg, light = surface.width_features(trav)
    if w_min is None or trav.channel("imu").empty:
        flags.append("incomplete")

    events = []
    try:
        rms = surface.traversal_rms(trav, config.surface)
        events = surface.detect_events(trav, rms, config.surface.event_threshold, config.surface)
        a_norm = surface.unevenness(trav, config.surface)
    except FeatureError as e:
        logger.warning("%s/%s: surface features skipped: %s", trav.trip_id, trav.segment_id, e)
        a_norm = None
        flags.append("incomplete")

    tracks = pedestrians.build_tracks(trav, seg, config.pedestrians)
    for tr in tracks:
        tr.smoothed = pedestrians.smooth_track(tr, config.pedestrians.smooth_window_s, config.pedestrians.smooth_step_s)
    density = pedestrians.prism_density(trav, tracks, seg, config.pedestrians)
    if density.prism is None:
        flags.append("prism_degenerate")
    util = pedestrians.utilization_block(tracks, density, config.pedestrians)

    # wait ratio over the prism duration when there is one
    t_obs = density.prism.T if density.prism is not None else trav.duration
    if block.total_wait_time_s is not None and t_obs > 0:
        if block.total_wait_time_s / t_obs > config.pedestrians.wait_flag_ratio:
            flags.append("high_wait_ratio")

    condition = surface.ConditionFeatureBlock(
        segment_length_m=seg.length_m,
        segment_width_m=seg.nominal_width_m,
        min_effective_width=w_min,
        avg_effective_width=w_avg,
        lighting_condition=light,
    )

    row = {
        "trip_id": trav.trip_id,
        "segment_id": trav.segment_id,
        "segment_kind": seg.kind.value,
        "direction": trav.direction,
        "t_enter": trav.t_enter,
        "t_exit": trav.t_exit,
        **block.to_dict(),
        **condition.to_dict(),
        **util.to_dict(),
        "flags": ";".join(sorted(set(flags))),
        "_slope": surface.slope(trav),
        "_unevenness": a_norm,
        "_trip_block": block,
    }
    meta = trip.meta
    row.update(
        avg_temperature=meta.temperature if meta else None,
        avg_wind_speed=meta.wind_speed if meta else None,
        pressure=meta.pressure if meta else None,
        precipitation=meta.precipitation if meta else None,
    )
    return row, events, pedestrians.track_rows(trav, tracks)


def process_trip(network: SidewalkNetwork, trip: TripLog, config: Optional[ExtractionConfig] = None, keep_tracks=False):
    """Per-traversal features of one trip, before the dataset-wide reductions."""
    config = config or ExtractionConfig()
    result = TripResult(trip.trip_id)
    traversals = split_traversals(network, trip, config.matching)
    v_peak = trip_features.compute_trip_peak(trip)
    for trav in traversals:
        row, events, tracks = _traversal_row(network, trav, v_peak, trip, config)
        result.rows.append(row)
        result.events.extend(events)
        if keep_tracks:
            result.track_rows.extend(tracks)
    logger.info("Trip %s: %d traversals, %d events", trip.trip_id, len(result.rows), len(result.events))
    return result


def extract_dataset(
    network: SidewalkNetwork,
    trips: Sequence[TripLog],
    config: Optional[ExtractionConfig] = None,
    n_jobs=1,
    keep_tracks=False,
) -> Extraction:
    """Feature table of every traversal in ``trips``.

    Trips are processed independently (optionally in parallel); relative
    duration and distance, irregularity clusters, segment unevenness and
    slope are then reduced per segment over the whole dataset.
    """
    config = config or ExtractionConfig()
    ordered = sorted(trips, key=lambda tr: tr.trip_id)
    results = Parallel(n_jobs=n_jobs)(delayed(process_trip)(network, trip, config, keep_tracks) for trip in ordered)

    rows = [row for res in results for row in res.rows]
    if not rows:
        raise WalkabilityError("No valid traversals in the input trips")
    events = [e for res in results for e in res.events]
    by_segment = defaultdict(list)
    for row in rows:
        by_segment[row["segment_id"]].append(row)

    scfg = config.surface
    grouped_events = surface.events_by_segment(events)
    clusters, segment_values, unevenness = {}, {}, {}
    trip_features.apply_relative({sid: [r["_trip_block"] for r in seg_rows] for sid, seg_rows in by_segment.items()})
    for sid, seg_rows in by_segment.items():
        clusters[sid] = surface.cluster_events(grouped_events.get(sid, []), scfg.cluster_eps_m, scfg.min_cluster_extent_m)
        unevenness[sid] = surface.segment_unevenness([r["_unevenness"] for r in seg_rows])
        slope, abs_slope = surface.segment_slope([(r["_slope"], r["direction"]) for r in seg_rows])
        segment_values[sid] = {
            "irregularity_index": surface.irregularity_index(clusters[sid]),
            "unevenness_index": unevenness[sid],
            "segment_slope": slope,
            "segment_abs_slope": abs_slope,
        }
    for sid, norm in surface.normalize_unevenness(unevenness).items():
        segment_values[sid]["unevenness_index_norm"] = norm

    for row in rows:
        row.update(segment_values[row["segment_id"]])
        row.pop("_slope")
        row.pop("_unevenness")
        block = row.pop("_trip_block")
        row.update(relative_duration=block.relative_duration, relative_distance=block.relative_distance)

    features = pd.DataFrame(rows, columns=FEATURE_COLUMNS)
    features = features.sort_values(["trip_id", "t_enter"], kind="mergesort").reset_index(drop=True)
    for col in INTEGER_COLUMNS:
        features[col] = features[col].astype("Int64")
    float_cols = [c for c in FEATURE_COLUMNS if c not in INTEGER_COLUMNS + ["trip_id", "segment_id", "segment_kind", "flags"]]
    features[float_cols] = features[float_cols].astype(float)
    track_rows = [tr for res in results for tr in res.track_rows]
    logger.info("Extracted %d traversals over %d segments", len(features), len(by_segment))
    return Extraction(features, events, clusters, segment_values, track_rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    if obj is pd.NA:
        return None
    return obj


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_jsonable(obj), f, indent=2, allow_nan=False)
        f.write("\n")
    return path


def generate_features_csv(features: pd.DataFrame, path):
    """Write the feature table; missing values become empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features.to_csv(path, index=False, na_rep="", float_format="%.10g", lineterminator="\n")
    return path


def generate_summary_json(extraction: Extraction, path, config: Optional[ExtractionConfig] = None):
    from .Metrics import calculate_all_segment_summaries

    config = config or ExtractionConfig()
    summary = {
        "n_traversals": int(len(extraction.features)),
        "n_trips": int(extraction.features["trip_id"].nunique()),
        "segments": calculate_all_segment_summaries(extraction.features),
        "clusters": {
            sid: [
                {"center_s": c.center_s_m, "extent": c.extent_L_m, "mean_value": c.mean_value, "count": c.event_count}
                for c in cl
            ]
            for sid, cl in sorted(extraction.clusters.items())
        },
        "config": config.model_dump(),
    }
    return write_json(summary, path)


def generate_events_csv(events, path):
    frame = pd.DataFrame(
        [(e.segment_id, e.s_m, e.value, e.trip_id) for e in events], columns=["segment_id", "s_m", "value", "trip_id"]
    )
    frame.sort_values(["segment_id", "s_m", "trip_id"], kind="mergesort").to_csv(
        path, index=False, float_format="%.10g", lineterminator="\n"
    )
    return path


def generate_clusters_csv(clusters, path):
    rows = [
        (sid, c.center_s_m, c.extent_L_m, c.mean_value, c.event_count)
        for sid, cl in sorted(clusters.items())
        for c in cl
    ]
    frame = pd.DataFrame(rows, columns=["segment_id", "center_s", "extent", "mean_value", "count"])
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def generate_tracks_csv(track_rows, path):
    frame = pd.DataFrame(track_rows, columns=["trip_id", "segment_id", "ped_id", "t", "x", "y", "smoothed"])
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def ingest_summary(reports: Sequence[IngestReport]):
    return {
        "files": len(reports),
        "total_lines": sum(r.total_lines for r in reports),
        "dropped": sum(r.dropped_count for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
