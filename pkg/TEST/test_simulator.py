import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from conftest import CORRIDOR_LAYOUT, STRAIGHT_LAYOUT, quiet_noise, scenario
from walkability.functions import extract_dataset
from walkability.ingest import load_weather, parse_trip
from walkability.model import NetworkError, ScenarioError
from walkability.simulator import (
    HaltSpec,
    NoiseSpec,
    PedestrianSpec,
    PinchSpec,
    RatesSpec,
    RobotSpec,
    SurfaceSpec,
    builtin_network,
    fleet,
    generate,
    load_scenario,
    synthetic_weather,
    write_fleet,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "data" / "scenarios"


def test_generation_is_deterministic(corridor_network):
    spec = scenario(CORRIDOR_LAYOUT, route=["A", "B", "C"], pedestrians={"B": PedestrianSpec(density=0.1)}, seed=8)
    first = generate(spec, corridor_network)
    again = generate(spec, corridor_network)
    assert first.wire_lines() == again.wire_lines()
    assert first.truth.to_dict(include_paths=True) == again.truth.to_dict(include_paths=True)
    other = generate(spec.model_copy(update={"seed": 9}), corridor_network)
    assert other.wire_lines() != first.wire_lines()


def test_channels_draw_from_separate_streams(corridor_network):
    spec = scenario(CORRIDOR_LAYOUT, route=["A", "B"], seed=3)
    base = generate(spec, corridor_network).trip
    louder = generate(spec.model_copy(update={"noise": NoiseSpec(imu_sigma=0.5)}), corridor_network).trip
    pd.testing.assert_frame_equal(base.channel("gnss"), louder.channel("gnss"))
    pd.testing.assert_frame_equal(base.channel("vel"), louder.channel("vel"))
    assert not base.channel("imu").equals(louder.channel("imu"))


def test_channel_rates(straight_network):
    spec = scenario(STRAIGHT_LAYOUT, route=["A"], rates=RatesSpec(gnss_hz=5, ped_hz=10))
    trip = generate(spec, straight_network).trip
    dt = {name: float(np.median(np.diff(trip.channel(name)["t"]))) for name in ("imu", "gnss", "vel", "width")}
    assert dt == pytest.approx({"imu": 0.01, "gnss": 0.2, "vel": 0.1, "width": 1.0})
    assert trip.start_time.timestamp() == pytest.approx(spec.start_time.timestamp())


def test_invalid_rates_and_pinches():
    with pytest.raises(ValidationError, match="must divide"):
        RatesSpec(gnss_hz=30)
    with pytest.raises(ValidationError, match="must exceed"):
        PinchSpec(s_start_m=10.0, s_end_m=5.0, width_m=1.0)
    with pytest.raises(ValidationError):
        RobotSpec(target_speed_mps=2.0)


def test_route_errors(corridor_network):
    with pytest.raises(ScenarioError, match="not connected"):
        generate(scenario(CORRIDOR_LAYOUT, route=["A", "C"]), corridor_network)
    with pytest.raises(ScenarioError, match="unknown segment"):
        generate(scenario(CORRIDOR_LAYOUT, route=["A", "Q"]), corridor_network)
    with pytest.raises(ScenarioError, match="not on the route"):
        spec = scenario(CORRIDOR_LAYOUT, route=["A"], robot=RobotSpec(halts=[HaltSpec(segment_id="B", s_m=1, duration_s=2)]))
        generate(spec, corridor_network)
    with pytest.raises(ScenarioError, match="unknown segment"):
        generate(scenario(CORRIDOR_LAYOUT, route=["A"], surface={"Z": SurfaceSpec()}), corridor_network)
    with pytest.raises(NetworkError):
        builtin_network("harbour")


def test_load_scenario_sources(tmp_path):
    spec = load_scenario(SCENARIOS / "null.json")
    assert spec.trip_id == "null_trip"
    assert spec.noise.imu_sigma == 0.0
    assert load_scenario({"name": "x", "route": ["S1"]}).route == ["S1"]
    assert load_scenario('{"name": "y"}').name == "y"
    with pytest.raises(ScenarioError, match="Cannot read"):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rates": {"gnss_hz": 7}}))
    with pytest.raises(ScenarioError, match="Invalid scenario"):
        load_scenario(bad)


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_scenarios_are_valid(path):
    spec = load_scenario(path)
    assert spec.route


def test_null_scenario_has_flat_features(campus):
    sim = generate(load_scenario(SCENARIOS / "null.json"), campus)
    assert sim.truth.segment_sequence == ["S1", "S2", "S3"]
    assert sim.truth.peak_speed == pytest.approx(1.2)
    features = extract_dataset(campus, [sim.trip]).features
    assert features["segment_id"].tolist() == ["S1", "S2", "S3"]
    assert features["speed_drop_avg"].to_numpy() == pytest.approx(0.0, abs=1e-3)
    assert features["segment_avg_speed"].to_numpy() == pytest.approx(1.2, abs=1e-3)
    assert features["num_stops"].tolist() == [0, 0, 0]
    assert features["irregularity_index"].tolist() == [0.0, 0.0, 0.0]
    assert features["total_ped_count"].tolist() == [0, 0, 0]


def test_truth_traversals(corridor_network):
    spec = scenario(CORRIDOR_LAYOUT, route=["C", "B", "A"], noise=quiet_noise())
    truth = generate(spec, corridor_network).truth
    assert truth.segment_sequence == ["C", "B", "A"]
    assert [tr["direction"] for tr in truth.traversals] == [-1, -1, -1]
    for tr, length in zip(truth.traversals, (30.0, 40.0, 40.0)):
        assert tr["t_exit"] > tr["t_enter"]
        assert tr["odometry_m"] == pytest.approx(length, abs=0.05)
    for a, b in zip(truth.traversals, truth.traversals[1:]):
        assert b["t_enter"] == pytest.approx(a["t_exit"], abs=0.011)


def test_planted_halt_is_a_stop(corridor_network):
    spec = scenario(
        CORRIDOR_LAYOUT,
        route=["A", "B", "C"],
        robot=RobotSpec(halts=[HaltSpec(segment_id="B", s_m=25.0, duration_s=5.0)]),
        noise=quiet_noise(),
    )
    sim = generate(spec, corridor_network)
    assert len(sim.truth.halts) == 1
    assert sim.truth.halts[0]["duration"] == pytest.approx(5.0)
    features = extract_dataset(corridor_network, [sim.trip]).features.set_index("segment_id")
    assert features.loc["B", "num_stops"] == 1
    assert features.loc["B", "total_wait_time_s"] == pytest.approx(5.0, abs=0.2)
    assert features.loc["A", "num_stops"] == 0
    assert features.loc["B", "speed_drop_avg"] > features.loc["A", "speed_drop_avg"]


def test_battery_scales_the_peak_speed(straight_network):
    for seed in range(5):
        spec = scenario(STRAIGHT_LAYOUT, route=["A"], robot=RobotSpec(battery_jitter=0.3), seed=seed)
        truth = generate(spec, straight_network).truth
        assert 0.7 <= truth.battery_scale <= 1.0
        assert truth.peak_speed == pytest.approx(1.5 * truth.battery_scale)


def test_gnss_noise_level(straight_network):
    sigma = 0.5
    spec = scenario(STRAIGHT_LAYOUT, route=["A"], noise=quiet_noise(gnss_sigma_m=sigma), rates=RatesSpec(gnss_hz=50))
    gnss = generate(spec, straight_network).trip.channel("gnss")
    seg = straight_network.segment("A")
    x, y = straight_network.frame.to_xy(gnss["lat"], gnss["lon"])
    s, d, _ = seg.project(x, y)
    inner = (s > 1.0) & (s < seg.length_m - 1.0)
    assert np.std(d[inner]) == pytest.approx(sigma, rel=0.1)


def test_planted_width_and_light(straight_network):
    spec = scenario(
        STRAIGHT_LAYOUT,
        route=["A"],
        surface={
            "A": SurfaceSpec(
                effective_width_m=2.0,
                pinches=[PinchSpec(s_start_m=20.0, s_end_m=30.0, width_m=1.2)],
                brightness=0.8,
            )
        },
        noise=quiet_noise(),
    )
    features = extract_dataset(straight_network, [generate(spec, straight_network).trip]).features
    row = features.iloc[0]
    assert row["min_effective_width"] == pytest.approx(1.2)
    assert 1.2 < row["avg_effective_width"] < 2.0
    assert row["segment_width_m"] == pytest.approx(3.0)
    assert row["lighting_condition"] == pytest.approx(0.8)


def test_pedestrian_truth(corridor_network):
    spec = scenario(CORRIDOR_LAYOUT, route=["A", "B"], pedestrians={"A": PedestrianSpec(density=0.2)}, seed=6)
    sim = generate(spec, corridor_network)
    first, second = sim.truth.traversals
    assert first["n_peds"] > 0
    assert first["density"] == pytest.approx(first["n_peds"] / 120.0)
    assert second["n_peds"] == 0
    ped = sim.trip.channel("ped")
    assert set(ped["ped_id"].str.split(".").str[1]) == {"0"}
    assert ped["t"].between(first["t_enter"] - 1e-3, first["t_exit"] + 1e-3).all()
    assert all(pid in sim.truth.ped_paths for pid in ped["ped_id"].unique())


def test_pedestrian_count_is_poisson(straight_network):
    # 0.2 peds/m2 over 50 m x 3 m
    counts = np.array(
        [
            generate(
                scenario(STRAIGHT_LAYOUT, route=["A"], pedestrians={"A": PedestrianSpec(density=0.2)}, seed=seed),
                straight_network,
            ).truth.traversals[0]["n_peds"]
            for seed in range(40)
        ]
    )
    assert counts.mean() == pytest.approx(30.0, abs=3.0)
    assert counts.var(ddof=1) > 5.0


def test_fleet_varies_trips(straight_network):
    spec = scenario(STRAIGHT_LAYOUT, route=["A"], trips_per_day=2)
    result = fleet([spec], 5, seed=4)
    ids = [sim.truth.trip_id for sim in result.trips]
    assert ids == ["trip_000", "trip_001", "trip_002", "trip_003", "trip_004"]
    assert len({sim.truth.seed for sim in result.trips}) == 5
    starts = [pd.Timestamp(t["start_time"]) for t in result.manifest["trips"]]
    assert starts[1] - starts[0] == pd.Timedelta(hours=2)
    assert starts[2] - starts[0] == pd.Timedelta(days=1)
    assert [sim.trip.date for sim in result.trips][::2] == sorted({sim.trip.date for sim in result.trips})
    assert result.manifest["n_trips"] == 5

    again = fleet([spec], 5, seed=4, n_jobs=2)
    assert [s.wire_lines() for s in again.trips] == [s.wire_lines() for s in result.trips]
    with pytest.raises(ScenarioError):
        fleet([spec], 0)


def test_write_fleet(tmp_path, straight_network):
    spec = scenario(STRAIGHT_LAYOUT, route=["A"], pedestrians={"A": PedestrianSpec(density=0.05)})
    result = fleet([spec], 3, seed=1)
    manifest_path = write_fleet(result, tmp_path, include_paths=True)
    manifest = json.loads(manifest_path.read_text())
    assert manifest["n_trips"] == 3
    for entry, sim in zip(manifest["trips"], result.trips):
        parsed, report = parse_trip(tmp_path / entry["log"])
        assert report.dropped_count == 0
        assert parsed == sim.trip
        truth = json.loads((tmp_path / entry["truth"]).read_text())
        assert truth["trip_id"] == entry["trip_id"]
        assert "ped_paths" in truth
    weather = load_weather(tmp_path / "weather.csv")
    assert len(weather) == len({sim.trip.date for sim in result.trips})
    assert (tmp_path / "network.geojson").exists()


def test_synthetic_weather_is_seeded():
    dates = [pd.Timestamp("2024-09-18").date(), pd.Timestamp("2024-09-19").date()]
    first = synthetic_weather(dates + dates[:1], seed=2)
    assert len(first) == 2
    pd.testing.assert_frame_equal(first, synthetic_weather(dates, seed=2))
    assert (first["precipitation"] >= 0).all()
