import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import cumulative_trapezoid

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from walkability.model import SegmentTraversal, load_network  # noqa: E402
from walkability.simulator import NoiseSpec, ScenarioSpec, builtin_network, layout_document  # noqa: E402

T0 = 1_726_646_400.0

STRAIGHT_LAYOUT = [("A", "sidewalk", 3.0, [(0, 0), (50, 0)])]
CORRIDOR_LAYOUT = [
    ("A", "sidewalk", 3.0, [(0, 0), (40, 0)]),
    ("B", "sidewalk", 3.0, [(40, 0), (80, 0)]),
    ("C", "sidewalk", 3.0, [(80, 0), (80, 30)]),
]


def quiet_noise(**overrides):
    fields = {name: 0.0 for name in NoiseSpec.model_fields}
    fields.update(overrides)
    return NoiseSpec(**fields)


def scenario(layout=None, **fields):
    """Scenario on a small custom layout (or the campus loop when ``layout`` is None)."""
    if layout is not None:
        fields.setdefault("network", layout_document(layout))
    return ScenarioSpec(**fields)


def make_traversal(t, v, segment_id="A", length_m=None, t_enter=None, t_exit=None, direction=1, records=None):
    """Traversal on a straight east-bound segment with the given velocity samples."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    s = cumulative_trapezoid(v, t, initial=0.0) if len(t) > 1 else np.zeros(len(t))
    length = float(length_m if length_m is not None else max(s[-1] if len(s) else 1.0, 1.0))
    vel = pd.DataFrame({"t": t, "v_mps": v, "heading_deg": np.full(len(t), 90.0)})
    path = pd.DataFrame(
        {
            "t": t,
            "s_m": s,
            "d_m": np.zeros(len(t)),
            "s_poly": s if direction > 0 else length - s,
            "x": s,
            "y": np.zeros(len(t)),
            "alt_m": np.zeros(len(t)),
        }
    )
    return SegmentTraversal(
        "trip",
        segment_id,
        float(t[0] if t_enter is None else t_enter),
        float(t[-1] if t_exit is None else t_exit),
        direction,
        length,
        {"vel": vel, **(records or {})},
        path,
    )


def straight_pass(segment, speed=1.0, t0=1000.0, ped=None, dt=0.1):
    """The robot driving the full length of ``segment`` at constant speed, in the network frame."""
    duration = segment.length_m / speed
    t = t0 + np.arange(0.0, duration + 1e-9, dt)
    s = speed * (t - t0)
    x, y = segment.point_at(s)
    vel = pd.DataFrame({"t": t, "v_mps": np.full(len(t), speed), "heading_deg": segment.heading_at(s, 1)})
    path = pd.DataFrame({"t": t, "s_m": s, "d_m": 0.0, "s_poly": s, "x": x, "y": y, "alt_m": 0.0})
    records = {"vel": vel}
    if ped is not None:
        records["ped"] = ped
    return SegmentTraversal("trip", segment.id, float(t[0]), float(t[-1]), 1, segment.length_m, records, path)


@pytest.fixture(scope="session")
def campus():
    return builtin_network("campus")


@pytest.fixture(scope="session")
def straight_network():
    return load_network(layout_document(STRAIGHT_LAYOUT))


@pytest.fixture(scope="session")
def corridor_network():
    return load_network(layout_document(CORRIDOR_LAYOUT))
