import numpy as np
import pandas as pd
import pytest

from conftest import make_traversal, quiet_noise, scenario
from walkability.config import ExtractionConfig
from walkability.functions import extract_dataset
from walkability.model import FeatureError, load_network, split_traversals
from walkability.simulator import BumpSpec, NoiseSpec, RobotSpec, SurfaceSpec, fleet, generate, layout_document
from walkability.surface import (
    IrregularityEvent,
    cluster_events,
    detect_events,
    highpass,
    irregularity_index,
    lowpass,
    normalize_unevenness,
    segment_slope,
    sliding_rms,
    traversal_rms,
    unevenness,
    width_features,
)

FS = 100.0
SHORT_LAYOUT = [("A", "sidewalk", 3.0, [(0, 0), (50, 0)])]
BUMPY_LAYOUT = [
    ("A", "sidewalk", 3.0, [(0, 0), (40, 0)]),
    ("B", "sidewalk", 3.0, [(40, 0), (80, 0)]),
    ("C", "sidewalk", 3.0, [(80, 0), (110, 0)]),
]


def _sine(freq, amp=1.0, seconds=60.0):
    t = np.arange(0.0, seconds, 1.0 / FS)
    return t, amp * np.sin(2 * np.pi * freq * t)


def _rms(x):
    return float(np.sqrt(np.mean(x**2)))


def test_highpass_separates_bands():
    t, fast = _sine(8.0)
    _, slow = _sine(0.1)
    out_fast = highpass(fast + 9.81, FS, 1.0)
    out_slow = highpass(slow + 9.81, FS, 1.0)
    assert _rms(out_fast) == pytest.approx(1 / np.sqrt(2), rel=0.02)
    assert _rms(out_slow) < 0.01


def test_lowpass_separates_bands():
    _, fast = _sine(8.0)
    _, slow = _sine(0.1)
    assert _rms(lowpass(fast, FS, 3.0)) < 0.05
    assert _rms(lowpass(slow, FS, 3.0)) == pytest.approx(1 / np.sqrt(2), rel=0.02)


def test_filter_guards(caplog):
    assert highpass(np.ones(5), FS).size == 0
    assert "too short" in caplog.text
    with pytest.raises(FeatureError, match="below 4x"):
        lowpass(np.ones(100), 10.0, 3.0)


def test_sliding_rms_windows():
    t = np.arange(0.0, 5.0, 0.01)
    frame = sliding_rms(t, np.full(len(t), 2.0), 1.0, 0.1)
    assert len(frame) == 40
    assert frame["rms"].to_numpy() == pytest.approx(2.0)
    assert frame["t"].iloc[0] == pytest.approx(0.5)
    assert sliding_rms(t[:50], np.ones(50)).empty


def _bump_trip(network, speed, seed=0, **surface):
    spec = scenario(
        SHORT_LAYOUT,
        route=["A"],
        robot=RobotSpec(target_speed_mps=speed),
        surface={"A": SurfaceSpec(**surface)},
        noise=quiet_noise(),
        seed=seed,
    )
    sim = generate(spec, network)
    (trav,) = split_traversals(network, sim.trip)
    return sim, trav


def test_event_value_scales_inversely_with_speed(straight_network):
    values = {}
    for speed in (0.5, 1.0):
        _, trav = _bump_trip(straight_network, speed, bumps=[BumpSpec(s_m=25.0, magnitude=1.0)])
        events = detect_events(trav, traversal_rms(trav))
        assert len(events) == 1
        assert events[0].s_m == pytest.approx(25.0, abs=1.0)
        assert events[0].window_rms == pytest.approx(1.0, rel=0.05)
        values[speed] = events[0].value
    assert values[0.5] / values[1.0] == pytest.approx(2.0, rel=0.05)


def test_unevenness_scales_inversely_with_speed(straight_network):
    norm = {}
    for speed in (0.5, 1.0):
        _, trav = _bump_trip(straight_network, speed, undulation_amplitude=0.5, undulation_hz=0.1)
        norm[speed] = unevenness(trav)
    assert norm[0.5] / norm[1.0] == pytest.approx(2.0, rel=0.05)


def test_undulation_raises_unevenness_without_events(straight_network):
    previous = 0.0
    for amp in (0.2, 0.5, 1.0):
        _, trav = _bump_trip(straight_network, 1.0, undulation_amplitude=amp, undulation_hz=0.1)
        assert detect_events(trav, traversal_rms(trav)) == []
        u = unevenness(trav)
        assert u > previous
        previous = u

    _, trav = _bump_trip(straight_network, 1.0, bumps=[BumpSpec(s_m=20.0, magnitude=1.0)])
    assert len(detect_events(trav, traversal_rms(trav))) == 1
    assert unevenness(trav) < 0.25 * previous


def test_unevenness_of_noise_stays_near_the_floor(straight_network):
    sigma = 0.2
    spec = scenario(
        SHORT_LAYOUT,
        route=["A"],
        robot=RobotSpec(target_speed_mps=1.0),
        noise=quiet_noise(imu_sigma=sigma),
        seed=4,
    )
    sim = generate(spec, straight_network)
    (trav,) = split_traversals(straight_network, sim.trip)
    # speed is 1 m/s, so the normalised RMS equals the low-passed RMS
    assert unevenness(trav) <= 1.5 * sigma


def test_stationary_traversal_has_no_unevenness():
    t = np.arange(0.0, 20.0, 0.01)
    imu = pd.DataFrame({"t": t, "az_mps2": 9.81 + 0.1 * np.sin(t)})
    trav = make_traversal(t[::10], np.zeros(len(t[::10])), length_m=10.0, records={"imu": imu})
    assert unevenness(trav) is None


def _event(s, value=1.0, trip="t"):
    return IrregularityEvent(trip, "A", s, value, 0.0, value, 1.0)


def test_cluster_events_single_linkage():
    events = [_event(10.0, 1.0), _event(10.4, 2.0), _event(10.9, 3.0), _event(30.0, 4.0)]
    clusters = cluster_events(events, eps_m=1.0, min_extent_m=0.5)
    assert [c.event_count for c in clusters] == [3, 1]
    assert clusters[0].center_s_m == pytest.approx(10.433333, abs=1e-5)
    assert clusters[0].extent_L_m == pytest.approx(0.9)
    assert clusters[1].extent_L_m == pytest.approx(0.5)
    assert irregularity_index(clusters) == pytest.approx(2.0 * 0.9 + 4.0 * 0.5)
    assert irregularity_index(cluster_events([])) == 0.0


def test_irregularity_index_ignores_trip_order_and_duplicates():
    rng = np.random.default_rng(12)
    events = [
        _event(float(s), float(v), trip=f"trip_{i % 4}")
        for i, (s, v) in enumerate(zip(rng.uniform(0.0, 40.0, 30), rng.uniform(0.3, 2.0, 30)))
    ]
    index = irregularity_index(cluster_events(events))
    reordered = sorted(events, key=lambda e: (e.trip_id, -e.s_m))
    assert irregularity_index(cluster_events(reordered)) == pytest.approx(index, abs=1e-12)
    assert irregularity_index(cluster_events(events + events)) == pytest.approx(index, abs=1e-12)


def test_normalize_unevenness():
    assert normalize_unevenness({"A": 1.0, "B": 3.0, "C": None, "D": 2.0}) == {
        "A": 0.0,
        "B": 1.0,
        "C": None,
        "D": 0.5,
    }
    assert normalize_unevenness({"A": 2.0, "B": 2.0}) == {"A": 0.0, "B": 0.0}


def test_segment_slope_is_direction_corrected():
    assert segment_slope([(0.02, 1), (-0.02, -1), (0.03, 1)]) == pytest.approx((0.02, 0.02))
    assert segment_slope([(None, 1)]) == (None, None)
    assert segment_slope([(-0.04, 1), (-0.04, -1)]) == pytest.approx((0.0, 0.04))


def test_planted_grade_is_recovered(straight_network):
    sim, _ = _bump_trip(straight_network, 1.0, grade=0.03)
    extraction = extract_dataset(straight_network, [sim.trip], ExtractionConfig())
    assert extraction.segment_values["A"]["segment_slope"] == pytest.approx(0.03, abs=1e-3)


def test_width_features():
    t = np.arange(0.0, 5.0, 1.0)
    width = pd.DataFrame({"t": t, "w_m": [2.0, 1.5, 2.5, 2.0, 2.0]})
    trav = make_traversal(t, np.ones(len(t)), records={"width": width})
    assert width_features(trav) == (1.5, 2.0, None)


def test_bump_fleet_localisation():
    network = load_network(layout_document(BUMPY_LAYOUT))
    planted = {"A": [12.0, 28.0], "B": [9.0, 30.0]}
    spec = scenario(
        BUMPY_LAYOUT,
        route=["A", "B", "C"],
        robot=RobotSpec(target_speed_mps=1.4, battery_jitter=0.2),
        surface={
            sid: SurfaceSpec(bumps=[BumpSpec(s_m=s, magnitude=0.8 + 0.2 * i) for i, s in enumerate(pos)])
            for sid, pos in planted.items()
        },
        noise=NoiseSpec(imu_sigma=0.1),
    )
    result = fleet([spec], 50, seed=9)
    extraction = extract_dataset(network, [sim.trip for sim in result.trips])

    for sid, positions in planted.items():
        clusters = extraction.clusters[sid]
        assert len(clusters) == 2
        for cluster, s in zip(clusters, positions):
            assert cluster.center_s_m == pytest.approx(s, abs=1.0)
    assert extraction.segment_values["C"]["irregularity_index"] == 0.0

    found = [e for e in extraction.events if e.segment_id in planted]
    hits = [e for e in found if min(abs(e.s_m - s) for s in planted[e.segment_id]) <= 1.0]
    precision = len(hits) / len(found)
    recall = len(hits) / (50 * 4)
    assert precision >= 0.9
    assert recall >= 0.9
    assert sum(len(sim.truth.bumps) for sim in result.trips) == 50 * 4
