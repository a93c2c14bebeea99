import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SUMMARY_FEATURES = [
    "segment_duration_s",
    "segment_distance_m",
    "relative_duration",
    "segment_avg_speed",
    "speed_drop_avg",
    "num_stops",
    "total_wait_time_s",
    "min_effective_width",
    "avg_effective_width",
    "lighting_condition",
    "total_ped_count",
    "avg_ped_speed",
    "ped_speed_variation",
    "ped_turns",
    "ped_path_deviation",
    "max_ped_density",
    "avg_ped_density",
]

BOX_FEATURES = [
    "min_effective_width",
    "avg_effective_width",
    "segment_slope",
    "avg_ped_density",
    "max_ped_density",
    "avg_ped_speed",
    "segment_avg_speed",
    "unevenness_index",
    "irregularity_index",
]


def _clean(value):
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


def calculate_box_stats(values) -> Optional[Dict[str, Any]]:
    """Quartiles and Tukey whiskers (1.5 IQR, clipped to the data) of one sample."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return None
    q1, median, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    return {
        "n": int(x.size),
        "min": float(x.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(x.max()),
        "mean": float(x.mean()),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": int(x.size - inside.size),
    }


def calculate_segment_summary(segment_id: str, rows: pd.DataFrame) -> Dict[str, Any]:
    summary = {
        "segment_id": segment_id,
        "segment_kind": rows["segment_kind"].iloc[0] if "segment_kind" in rows else None,
        "n_traversals": int(len(rows)),
        "n_trips": int(rows["trip_id"].nunique()) if "trip_id" in rows else None,
    }
    for col in ("segment_length_m", "segment_width_m", "irregularity_index", "unevenness_index",
                "unevenness_index_norm", "segment_slope", "segment_abs_slope"):
        if col in rows:
            present = rows[col].dropna()
            summary[col] = _clean(present.iloc[0]) if len(present) else None
    summary["means"] = {c: _clean(rows[c].mean()) for c in SUMMARY_FEATURES if c in rows}
    summary["quantiles"] = {c: calculate_box_stats(rows[c]) for c in SUMMARY_FEATURES if c in rows}
    return summary


def calculate_all_segment_summaries(features: pd.DataFrame) -> Dict[str, Any]:
    """Per-segment means and box-plot quantiles, computed in parallel threads."""
    segment_ids = sorted(features["segment_id"].unique())
    with ThreadPoolExecutor() as executor:
        futures = {
            sid: executor.submit(calculate_segment_summary, sid, features[features["segment_id"] == sid])
            for sid in segment_ids
        }
        summaries = {}
        for sid, future in futures.items():
            try:
                summaries[sid] = future.result()
            except Exception as e:
                logger.warning("Summary of segment %s failed: %s", sid, e)
                summaries[sid] = None
    return summaries


def calculate_segment_boxes(features: pd.DataFrame, columns=None) -> Dict[str, Dict[str, Any]]:
    columns = [c for c in (columns or BOX_FEATURES) if c in features.columns]
    boxes = {}
    for sid in sorted(features["segment_id"].unique()):
        rows = features[features["segment_id"] == sid]
        boxes[sid] = {c: calculate_box_stats(rows[c]) for c in columns}
    return boxes


def calculate_fd_scatter(features: pd.DataFrame):
    """Density-speed pairs per traversal plus a least-squares line and Pearson r.

    :return: ``(scatter frame, fit dict)``; the fit holds nulls below three pairs
    """
    cols = ["avg_ped_density", "avg_ped_speed", "segment_id"]
    scatter = features[cols].dropna(subset=cols[:2]).reset_index(drop=True)
    scatter = scatter.rename(columns={"avg_ped_density": "k_avg", "avg_ped_speed": "v_avg_ped"})
    fit = {"n": int(len(scatter)), "slope": None, "intercept": None, "r": None}
    if len(scatter) >= 3 and scatter["k_avg"].nunique() > 1 and scatter["v_avg_ped"].nunique() > 1:
        k = scatter["k_avg"].to_numpy()
        v = scatter["v_avg_ped"].to_numpy()
        slope, intercept = np.polyfit(k, v, 1)
        fit.update(slope=float(slope), intercept=float(intercept), r=float(np.corrcoef(k, v)[0, 1]))
    return scatter, fit
