from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


MODEL_PREDICTORS = [
    "avg_ped_density",
    "segment_avg_speed",
    "speed_drop_avg",
    "num_stops",
    "relative_duration",
    "min_effective_width",
    "avg_effective_width",
    "segment_slope",
    "unevenness_index",
    "irregularity_index",
    "lighting_condition",
    "avg_temperature",
    "avg_wind_speed",
    "pressure",
    "precipitation",
]

BEHAVIOR_FEATURES = ["ped_speed_variation", "ped_turns", "ped_path_deviation"]


class MatchingConfig(BaseModel):
    gate_m: float = Field(5.0, gt=0, le=50)
    hysteresis_m: float = Field(1.0, ge=0, le=10)
    min_traversal_s: float = Field(3.0, ge=0)
    min_traversal_m: float = Field(3.0, ge=0)
    max_gap_s: float = Field(3.0, gt=0)
    bbox_margin_m: float = Field(100.0, ge=0)

    @model_validator(mode="after")
    def _gate_covers_hysteresis(self):
        if self.hysteresis_m >= self.gate_m:
            raise ValueError("hysteresis_m must be smaller than gate_m")
        return self


class TripConfig(BaseModel):
    stop_speed_mps: float = Field(0.05, gt=0, le=0.5)
    stop_dwell_s: float = Field(1.0, ge=0)


class SurfaceConfig(BaseModel):
    highpass_hz: float = Field(1.0, gt=0)
    lowpass_hz: float = Field(3.0, gt=0)
    filter_order: int = Field(2, ge=1, le=8)
    rms_window_s: float = Field(1.0, gt=0)
    rms_step_s: float = Field(0.1, gt=0)
    event_threshold: float = Field(0.35, gt=0)
    velocity_floor: float = Field(0.1, gt=0)
    cluster_eps_m: float = Field(1.0, gt=0)
    min_cluster_extent_m: float = Field(0.5, ge=0)
    min_moving_fraction: float = Field(0.5, ge=0, le=1)

    @model_validator(mode="after")
    def _step_inside_window(self):
        if self.rms_step_s > self.rms_window_s:
            raise ValueError("rms_step_s must not exceed rms_window_s")
        return self


class PedestrianConfig(BaseModel):
    detection_range_m: float = Field(10.0, gt=0)
    corridor_margin_m: float = Field(0.5, ge=0)
    smooth_window_s: float = Field(1.0, gt=0)
    smooth_step_s: float = Field(0.5, gt=0)
    turn_threshold_deg: float = Field(30.0, gt=0, lt=180)
    bearing_floor_m: float = Field(0.1, ge=0)
    min_track_points: int = Field(4, ge=2)
    min_track_span_s: float = Field(2.0, ge=0)
    prism_depth_m: float = Field(10.0, gt=0)
    wait_flag_ratio: float = Field(0.3, ge=0, le=1)


class ExtractionConfig(BaseModel):
    matching: MatchingConfig = MatchingConfig()
    trip: TripConfig = TripConfig()
    surface: SurfaceConfig = SurfaceConfig()
    pedestrians: PedestrianConfig = PedestrianConfig()


class AnalysisConfig(BaseModel):
    linkage: str = "ward"
    n_clusters: int = Field(3, ge=1)
    equal_var: bool = False
    density_epsilon: float = Field(1e-4, gt=0)
    reduce_threshold: float = Field(0.1, gt=0, le=1)
    response: str = "avg_ped_speed"
    predictors: List[str] = Field(default_factory=lambda: list(MODEL_PREDICTORS))
    kind: str = "all"

    @field_validator("linkage")
    @classmethod
    def _known_linkage(cls, value):
        if value not in ("single", "complete", "average", "ward"):
            raise ValueError(f"Unknown linkage method: {value}")
        return value

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, value):
        if value not in ("all", "sidewalk", "crossing"):
            raise ValueError(f"Unknown segment kind filter: {value}")
        return value


class RunConfig(BaseModel):
    network: Optional[Path] = None
    inputs: List[str] = Field(default_factory=list)
    weather: Optional[Path] = None
    output_dir: Path = Path("out")
    features: Optional[Path] = None
    extraction: ExtractionConfig = ExtractionConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    seed: int = 0
    n_jobs: int = 1
    dump_debug: bool = False
