import json

import numpy as np
import pytest

from conftest import CORRIDOR_LAYOUT, quiet_noise, scenario
from walkability.config import MatchingConfig
from walkability.model import (
    NetworkError,
    SegmentKind,
    load_network,
    match_position,
    split_traversals,
)
from walkability.simulator import RatesSpec, RobotSpec, generate, layout_document


def test_campus_network_shape(campus):
    assert len(campus) == 9
    assert campus.segment("S8").kind is SegmentKind.CROSSING
    assert campus.segment("S1").length_m == pytest.approx(60.0, rel=1e-3)
    assert ("S1", "S2") in campus.adjacency
    assert ("S1", "S9") in campus.adjacency
    assert ("S1", "S5") not in campus.adjacency


def test_network_round_trips_through_document(campus):
    again = load_network(json.dumps(campus.to_document()))
    assert again.ids == campus.ids
    assert again.adjacency == campus.adjacency
    for seg_id in campus.ids:
        assert again.segment(seg_id).length_m == pytest.approx(campus.segment(seg_id).length_m)


def _doc(**props):
    doc = layout_document([("A", "sidewalk", 2.0, [(0, 0), (30, 0)])])
    doc["features"][0]["properties"].update(props)
    return doc


@pytest.mark.parametrize(
    "props, message",
    [
        ({"width_m": 0.0}, "width_m"),
        ({"kind": "road"}, "unknown kind"),
        ({"length_m": 40.0}, "differs"),
        ({"id": None}, "no id"),
        ({"width_m": "wide"}, "Segment A: width_m must be a number"),
        ({"width_m": None}, "Segment A: width_m must be a number"),
        ({"width_m": float("nan")}, "Segment A: width_m must be positive"),
        ({"length_m": [30]}, "Segment A: length_m must be a number"),
    ],
)
def test_invalid_segments_rejected(props, message):
    with pytest.raises(NetworkError, match=message):
        load_network(_doc(**props))


def test_declared_length_within_tolerance_is_kept():
    network = load_network(_doc(length_m=30.2))
    assert network.segment("A").length_m == pytest.approx(30.2)


def test_duplicate_and_degenerate_segments_rejected():
    doc = layout_document([("A", "sidewalk", 2.0, [(0, 0), (30, 0)]), ("A", "sidewalk", 2.0, [(30, 0), (60, 0)])])
    with pytest.raises(NetworkError, match="Duplicate"):
        load_network(doc)
    flat = layout_document([("Z", "sidewalk", 2.0, [(5, 5), (5, 5)])])
    with pytest.raises(NetworkError, match="zero length"):
        load_network(flat)
    with pytest.raises(ValueError):
        load_network({"features": []})


@pytest.mark.parametrize(
    "feature, message",
    [
        ("A", "Feature #0 is not an object"),
        ({"properties": ["A"]}, "properties must be an object"),
        ({"properties": {"id": "A"}, "geometry": "LineString"}, "Segment A: geometry"),
        ({"properties": {"id": "A"}, "geometry": {"coordinates": 7}}, "Segment A: polyline"),
    ],
)
def test_malformed_features_name_the_offender(feature, message):
    with pytest.raises(NetworkError, match=message):
        load_network({"features": [feature]})


def test_project_signs_offsets_to_the_left(straight_network):
    seg = straight_network.segment("A")
    x, y = seg.point_at(20.0)
    s, d, dist = seg.project(x, y + 2.0)
    assert s[0] == pytest.approx(20.0, abs=1e-6)
    assert d[0] == pytest.approx(2.0, abs=1e-6)
    s, d, _ = seg.project(x, y - 1.5)
    assert d[0] == pytest.approx(-1.5, abs=1e-6)
    assert seg.heading_at(10.0, 1) == pytest.approx(90.0, abs=1e-6)
    assert seg.heading_at(10.0, -1) == pytest.approx(270.0, abs=1e-6)


def test_match_position_gate_and_hysteresis(corridor_network):
    net = corridor_network
    a = net.segment("A")
    x, y = a.point_at(10.0)
    lat, lon = net.frame.to_latlon(x, y + 3.0)
    hit = match_position(net, (float(lat), float(lon)))
    assert hit.segment_id == "A"
    assert hit.s_m == pytest.approx(10.0, abs=1e-3)
    assert hit.d_m == pytest.approx(3.0, abs=1e-3)

    lat, lon = net.frame.to_latlon(x, y + 8.0)
    assert match_position(net, (float(lat), float(lon))) is None

    # 0.5 m past the A/B junction: B is nearer, A is kept within the hysteresis
    x, y = net.segment("B").point_at(0.5)
    lat, lon = net.frame.to_latlon(x, y)
    assert match_position(net, {"lat": float(lat), "lon": float(lon)}).segment_id == "B"
    assert match_position(net, (float(lat), float(lon)), prev="A").segment_id == "A"


@pytest.mark.parametrize("prev", [None, "A", "B", "C"])
def test_match_position_is_idempotent(corridor_network, prev):
    net = corridor_network
    rng = np.random.default_rng(5)
    for sid in ("A", "B", "C"):
        seg = net.segment(sid)
        for s in rng.uniform(0.0, seg.length_m, 5):
            x, y = seg.point_at(float(s))
            lat, lon = net.frame.to_latlon(x + rng.normal(0, 1.0), y + rng.normal(0, 1.0))
            fix = (float(lat), float(lon))
            first = match_position(net, fix, prev=prev)
            assert match_position(net, fix, prev=prev) == first


def test_split_follows_route_with_sparse_fixes(campus):
    spec = scenario(
        route=["S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8", "S9"],
        robot=RobotSpec(target_speed_mps=1.0),
        rates=RatesSpec(gnss_hz=1),
        seed=3,
    )
    sim = generate(spec, campus)
    traversals = split_traversals(campus, sim.trip)
    assert [tr.segment_id for tr in traversals] == sim.truth.segment_sequence
    for tr, truth in zip(traversals, sim.truth.traversals):
        assert tr.t_enter == pytest.approx(truth["t_enter"], abs=2.0)
        assert tr.t_exit == pytest.approx(truth["t_exit"], abs=2.0)
        assert tr.direction == truth["direction"]


def test_traversal_records_stay_in_window(corridor_network):
    spec = scenario(CORRIDOR_LAYOUT, route=["A", "B", "C"], noise=quiet_noise(), seed=1)
    sim = generate(spec, corridor_network)
    traversals = split_traversals(corridor_network, sim.trip)
    assert [tr.segment_id for tr in traversals] == ["A", "B", "C"]
    for tr in traversals:
        assert tr.t_exit > tr.t_enter
        assert tr.path["s_m"].between(0.0, tr.length_m + 2.0).all()
        for frame in tr.records.values():
            t = frame["t"].to_numpy()
            assert np.all(np.diff(t) >= 0)
            assert np.all((t >= tr.t_enter) & (t <= tr.t_exit))


def test_reverse_traversal_direction(corridor_network):
    spec = scenario(CORRIDOR_LAYOUT, route=["C", "B", "A"], noise=quiet_noise(), seed=1)
    sim = generate(spec, corridor_network)
    traversals = split_traversals(corridor_network, sim.trip)
    assert [tr.direction for tr in traversals] == [-1, -1, -1]
    first = traversals[0]
    assert first.path["s_m"].iloc[0] < first.path["s_m"].iloc[-1]


def test_short_detour_is_dropped(corridor_network):
    cfg = MatchingConfig()
    spec = scenario(CORRIDOR_LAYOUT, route=["A", "B"], noise=quiet_noise(), seed=1)
    trip = generate(spec, corridor_network).trip
    gnss = trip.channels["gnss"]
    net = corridor_network
    x, y = net.segment("C").point_at(10.0)
    lat, lon = net.frame.to_latlon(x, y)
    # two fixes jump onto C for 0.1 s
    gnss.loc[gnss.index[50:52], "lat"] = float(lat)
    gnss.loc[gnss.index[50:52], "lon"] = float(lon)
    traversals = split_traversals(net, trip, cfg)
    assert [tr.segment_id for tr in traversals] == ["A", "B"]


def test_no_matching_fix_gives_no_traversals(corridor_network, caplog):
    spec = scenario(CORRIDOR_LAYOUT, route=["A"], noise=quiet_noise(), seed=1)
    trip = generate(spec, corridor_network).trip
    trip.channels["gnss"]["lat"] += 0.01
    assert split_traversals(corridor_network, trip) == []
    assert "no GNSS fix matched" in caplog.text
