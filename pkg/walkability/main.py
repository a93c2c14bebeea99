"""Command-line entry point: ``python -m walkability.main <command>``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import analytics, simulator
from .config import MODEL_PREDICTORS, RunConfig
from .functions import (
    CATALOG_COLUMNS,
    WEATHER_COLUMNS,
    expand_inputs,
    extract_dataset,
    generate_clusters_csv,
    generate_events_csv,
    generate_features_csv,
    generate_summary_json,
    generate_tracks_csv,
    ingest_summary,
    load_trips,
    resolve_network,
    write_json,
)
from .ingest import load_weather, parse_trip
from .Metrics import calculate_fd_scatter, calculate_segment_boxes
from .model import WalkabilityError

logger = logging.getLogger("walkability")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

SURFACE_FLAGS = {
    "highpass_hz": ("--highpass-hz", float, "high-pass cutoff of the irregularity channel (Hz)"),
    "lowpass_hz": ("--lowpass-hz", float, "low-pass cutoff of the unevenness channel (Hz)"),
    "filter_order": ("--filter-order", int, "Butterworth order"),
    "rms_window_s": ("--rms-window", float, "sliding RMS window (s)"),
    "rms_step_s": ("--rms-step", float, "sliding RMS step (s)"),
    "event_threshold": ("--event-threshold", float, "RMS threshold of an irregularity event (m/s^2)"),
    "velocity_floor": ("--velocity-floor", float, "speed floor of the normalisation (m/s)"),
    "cluster_eps_m": ("--cluster-eps", float, "linkage distance of event clusters (m)"),
}


class UsageError(WalkabilityError):
    pass


def _deep_update(base, overrides):
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def build_config(args) -> RunConfig:
    """Defaults, then ``--config`` JSON, then explicit flags."""
    doc = RunConfig().model_dump(mode="json")
    if getattr(args, "config", None):
        try:
            _deep_update(doc, json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"Cannot read config {args.config}: {e}") from e

    flags = {}
    for key in ("network", "weather", "features", "seed", "n_jobs"):
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = str(value) if isinstance(value, Path) else value
    if getattr(args, "inputs", None):
        flags["inputs"] = list(args.inputs)
    if getattr(args, "out", None) is not None:
        flags["output_dir"] = str(args.out)
    surface = {k: getattr(args, k) for k in SURFACE_FLAGS if getattr(args, k, None) is not None}
    if surface:
        flags["extraction"] = {"surface": surface}
    analysis = {}
    for key in ("linkage", "n_clusters", "response", "kind"):
        if getattr(args, key, None) is not None:
            analysis[key] = getattr(args, key)
    if getattr(args, "student", False):
        analysis["equal_var"] = True
    if getattr(args, "predictors", None):
        analysis["predictors"] = args.predictors.split(",")
    if analysis:
        flags["analysis"] = analysis
    return RunConfig.model_validate(_deep_update(doc, flags))


def _emit(path):
    print(Path(path))


# --- commands --------------------------------------------------------------


def cmd_extract(config: RunConfig, args):
    paths = expand_inputs(config.inputs)
    if not paths:
        raise UsageError("no inputs")
    if config.network is None:
        raise UsageError("extract needs --network")
    network = resolve_network(config.network)
    weather = load_weather(config.weather) if config.weather else None
    loaded = load_trips(paths, weather, n_jobs=config.n_jobs)
    trips = [trip for trip, _ in loaded]
    reports = [report for _, report in loaded]

    extraction = extract_dataset(network, trips, config.extraction, n_jobs=config.n_jobs, keep_tracks=args.tracks)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _emit(generate_features_csv(extraction.features, out / "features.csv"))
    _emit(generate_summary_json(extraction, out / "summary.json", config.extraction))
    _emit(generate_events_csv(extraction.events, out / "events.csv"))
    _emit(generate_clusters_csv(extraction.clusters, out / "clusters.csv"))
    _emit(write_json(ingest_summary(reports), out / "ingest.json"))
    if args.tracks:
        _emit(generate_tracks_csv(extraction.track_rows, out / "tracks.csv"))
    return EXIT_OK


def _feature_matrix(config: RunConfig):
    path = config.features or config.output_dir / "features.csv"
    if not Path(path).exists():
        raise UsageError(f"Feature table not found: {path}")
    return analytics.FeatureMatrix.from_csv(path, kind=config.analysis.kind)


def cmd_analyze(config: RunConfig, args):
    m = _feature_matrix(config)
    acfg = config.analysis
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    method = analytics.get_analysis_function(args.mode)
    meta = {"kind": acfg.kind, **config.extraction.surface.model_dump()}

    if args.mode == "correlate":
        columns = [c for c in CATALOG_COLUMNS + WEATHER_COLUMNS if c in m.columns]
        if len(m) < 3:
            raise analytics.AnalysisError(f"Correlation needs at least 3 rows, got {len(m)}")
        r = method(m, columns)
        report = analytics.correlation_report(r, len(m), meta)
    elif args.mode == "cluster":
        result = method(m, acfg.n_clusters, acfg.linkage, acfg.equal_var)
        report = result.to_report()
        report["config"].update(meta)
        _emit(analytics.write_assignments(result, m, out / "assignments.csv"))
    else:
        full = method(m, acfg.response, acfg.predictors, acfg.density_epsilon)
        reduced = analytics.reduce_model(full, m, acfg.reduce_threshold)
        report = analytics.regression_report(full, reduced, {**meta, "reduce_threshold": acfg.reduce_threshold})
    _emit(write_json(report, out / f"{args.mode}.json"))
    return EXIT_OK


def cmd_simulate(config: RunConfig, args):
    specs = [simulator.load_scenario(s) for s in args.scenario]
    if args.fleet is not None:
        result = simulator.fleet(specs, args.fleet, seed=config.seed, n_jobs=config.n_jobs)
    else:
        spec = specs[0]
        if args.seed is not None:
            spec = spec.model_copy(update={"seed": args.seed})
        result = simulator.single(spec)
    include_paths = args.paths or any(s.record_paths for s in specs)
    _emit(simulator.write_fleet(result, config.output_dir, include_paths=include_paths))
    return EXIT_OK


def cmd_report(config: RunConfig, args):
    m = _feature_matrix(config)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    scatter, fit = calculate_fd_scatter(m.frame)
    scatter.to_csv(out / "fd_scatter.csv", index=False, float_format="%.10g", lineterminator="\n")
    _emit(out / "fd_scatter.csv")
    boxes = calculate_segment_boxes(m.frame) if len(m) else {}
    _emit(write_json({"segments": boxes, "fd_fit": fit, "kind": config.analysis.kind}, out / "segment_boxes.json"))
    return EXIT_OK


def cmd_validate(config: RunConfig, args):
    """Schema checks only; nothing is computed."""
    problems = 0
    if config.network is not None:
        network = resolve_network(config.network)
        print(f"network: {len(network.ids)} segments, {network.graph.number_of_edges()} junctions")
    if config.weather is not None:
        table = load_weather(config.weather)
        print(f"weather: {len(table)} days")
    for path in expand_inputs(config.inputs):
        try:
            _, report = parse_trip(path)
        except WalkabilityError as e:
            problems += 1
            print(f"{path}: INVALID ({e})")
            continue
        print(f"{path}: {report.kept} records, {report.dropped_count} dropped")
        for warning in report.warnings:
            print(f"  warning: {warning}")
    for path in args.scenario or []:
        spec = simulator.load_scenario(path)
        simulator.scenario_network(spec)
        print(f"scenario {spec.name}: ok")
    return EXIT_USAGE if problems else EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "validate": cmd_validate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="walkability", description="Sidewalk-robot walkability pipeline")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for detail")
    parser.add_argument("--config", help="JSON run configuration; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="per-traversal feature table from trip logs")
    p.add_argument("inputs", nargs="*", help="trip logs, directories or globs")
    p.add_argument("--network", help="GeoJSON network or builtin:campus")
    p.add_argument("--weather", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--tracks", action="store_true", help="also write raw and smoothed pedestrian tracks")
    for key, (flag, kind, text) in SURFACE_FLAGS.items():
        p.add_argument(flag, dest=key, type=kind, help=text)

    p = sub.add_parser("analyze", help="correlation, behaviour clustering or regression")
    p.add_argument("--mode", required=True, choices=["correlate", "cluster", "regress"])
    p.add_argument("--features", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--kind", choices=["all", "sidewalk", "crossing"])
    p.add_argument("--linkage", choices=["single", "complete", "average", "ward"])
    p.add_argument("--clusters", dest="n_clusters", type=int)
    p.add_argument("--student", action="store_true", help="pooled-variance t-test instead of Welch")
    p.add_argument("--response")
    p.add_argument("--predictors", help=f"comma-separated, default {','.join(MODEL_PREDICTORS)}")

    p = sub.add_parser("simulate", help="synthetic trips with ground truth")
    p.add_argument("--scenario", action="append", required=True, help="scenario JSON (repeatable)")
    p.add_argument("--fleet", type=int, help="number of seeded trips")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--paths", action="store_true", help="write true pedestrian paths into truth files")

    p = sub.add_parser("report", help="box-plot and density-speed plot data")
    p.add_argument("--features", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--kind", choices=["all", "sidewalk", "crossing"])

    p = sub.add_parser("validate", help="schema checks of inputs")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--network")
    p.add_argument("--weather", type=Path)
    p.add_argument("--scenario", action="append")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        config = build_config(args)
        return COMMANDS[args.command](config, args)
    except (WalkabilityError, ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.debug("Internal error", exc_info=True)
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
