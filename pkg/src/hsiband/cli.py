"""``cube`` command line: one subcommand per pipeline stage plus ``run`` for all of them.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

from hsiband._seeds import derive_seed
from hsiband.cube import CalibrationFrames, HyperCube, calibrate, default_wavelengths, load_cube, save_cube
from hsiband.nn.checkpoint import save_checkpoint
from hsiband.nn.cnn import architecture_of
from hsiband.pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    read_labels,
    run_pipeline,
    stage_seeds,
    train_and_profile,
)
from hsiband.scan import (
    SplitSpec,
    expand_bands,
    pearson_corr,
    per_band_accuracy,
    profile_stats,
    select_dense_interval,
    split_dataset,
    train_scan_cnn,
    write_profile_csv,
)
from hsiband.screen import BandInterval, RemovalRule, partition_bands, screen_intervals
from hsiband.segmentation import load_rois, save_rois, segment_cube
from hsiband.synth import SynthSpec, generate_raw_cube, generate_synthetic_dataset

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _write_json(path: str | Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _parse_intervals(text: str) -> list[BandInterval]:
    return [BandInterval.parse(part) for part in text.split(",") if part.strip()]


def _base_config(args) -> dict:
    if not args.config:
        return {}
    try:
        return json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc


def _pipeline_config(args, input_section: dict | None = None) -> PipelineConfig:
    data = _base_config(args)
    if input_section is not None:
        data["input"] = input_section
    data.setdefault("input", {"synth": {}})
    if args.seed is not None:
        data["seed"] = args.seed
    return PipelineConfig.from_dict(data)


def _out(args, name: str | None) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name if name else out


def cmd_calibrate(args) -> None:
    raw = load_cube(args.raw, args.format)
    frames = CalibrationFrames.from_cubes(load_cube(args.dark, args.format), load_cube(args.white, args.format))
    save_cube(calibrate(raw, frames), args.out or _out(args, "calibrated.cube"))


def cmd_segment(args) -> None:
    cube = load_cube(args.cube, args.format)
    labels = read_labels(args.labels)
    rois, _, boxes = segment_cube(cube, labels, args.band, args.margin, args.percentile, args.min_area, args.size)
    dest = Path(args.rois or _out(args, "rois"))
    save_rois(rois, cube.wavelengths, dest)
    _write_json(dest / "boxes.json", [b.as_list() for b in boxes])


def cmd_synth(args) -> None:
    data = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if args.seed is not None:
        data["rng_seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth spec: {exc}") from exc
    out = _out(args, None)
    rois, truth = generate_synthetic_dataset(spec)
    save_rois(rois, default_wavelengths(spec.band_count), out / "rois")
    _write_json(out / "spec.json", spec.to_dict())
    _write_json(out / "ground_truth.json", truth.to_dict())
    if args.raw:
        scene = generate_raw_cube(spec)
        save_cube(scene.raw, out / "raw.cube")
        wl = scene.raw.wavelengths
        save_cube(HyperCube(scene.frames.dark[None], wl), out / "dark.cube")
        save_cube(HyperCube(scene.frames.white[None], wl), out / "white.cube")
        _write_json(out / "labels.json", scene.labels)
        _write_json(out / "boxes.json", [b.as_list() for b in scene.boxes])


def cmd_screen(args) -> None:
    config = _pipeline_config(args)
    rois, _ = load_rois(args.rois)
    if args.bands:
        intervals = _parse_intervals(args.bands)
    else:
        intervals = partition_bands(rois[0].band_count, args.intervals or config.n_intervals)
    train = config.screen.replace(rng_seed=stage_seeds(config.seed)["screen"])
    if args.iterations:
        train = train.replace(iterations=args.iterations)
    rep = screen_intervals(
        rois,
        intervals,
        train,
        config.criterion,
        args.repeats or config.screen_repeats,
        RemovalRule.parse(args.rule or config.screen_rule),
        config.lstm,
        args.threads,
    )
    _write_json(args.report or _out(args, "screen.json"), rep.to_dict())
    rep.write_curves_csv(args.curves or _out(args, "screen_curves.csv"))


def cmd_scan(args) -> None:
    config = _pipeline_config(args)
    rois, wavelengths = load_rois(args.rois)
    intervals = _parse_intervals(args.bands) if args.bands else partition_bands(rois[0].band_count, config.n_intervals)
    split_seed = config.seed if args.split_seed is None else args.split_seed
    train_ids, test_ids = split_dataset(rois, SplitSpec(config.train_per_class, split_seed))
    train = config.scan.replace(rng_seed=stage_seeds(config.seed)["scan"])
    if args.iterations:
        train = train.replace(iterations=args.iterations)
    result = train_scan_cnn(rois, intervals, train_ids, train)
    bands = expand_bands(intervals)
    profile = per_band_accuracy(result.params, rois, test_ids, bands, "+".join(iv.label for iv in intervals))
    stats = {iv: profile_stats(profile.restrict(iv), config.threshold) for iv in intervals}
    write_profile_csv(profile, wavelengths, args.profile or _out(args, "scan_profile.csv"))
    _write_json(
        args.stats or _out(args, "scan_stats.json"),
        {
            "intervals": {iv.label: s.to_dict() for iv, s in stats.items()},
            "selected_interval": select_dense_interval(stats).label,
            "split_seed": split_seed,
            "train_ids": train_ids,
            "test_ids": test_ids,
        },
    )
    if args.model:
        save_checkpoint(args.model, result.params, {"kind": "cnn", **architecture_of(result.params)})


def _train_interval(args, config, seed_tag: str, top_tag: str, split_seed: int):
    rois, wavelengths = load_rois(args.rois)
    intervals = _parse_intervals(args.bands)
    if len(intervals) != 1:
        raise ConfigError("--bands must name exactly one interval")
    train_ids, test_ids = split_dataset(rois, SplitSpec(config.train_per_class, split_seed))
    seeds = stage_seeds(config.seed)
    train = config.final.replace(rng_seed=seeds[seed_tag])
    if args.iterations:
        train = train.replace(iterations=args.iterations)
    res = train_and_profile(rois, intervals[0], train_ids, test_ids, train, config.threshold, seeds[top_tag])
    return res, wavelengths


def _result_dict(res) -> dict:
    return {
        "profile": {"bands": res["profile"].bands, "accuracy": res["profile"].accuracy},
        "stats": res["stats"].to_dict(),
        "top_bands": res["top_bands"],
        "interval_accuracy": res["interval_accuracy"],
        "top_band_accuracy": res["top_band_accuracy"],
    }


def cmd_train(args) -> None:
    config = _pipeline_config(args)
    split_seed = config.seed if args.split_seed is None else args.split_seed
    res, wavelengths = _train_interval(args, config, "final", "top", split_seed)
    write_profile_csv(res["profile"], wavelengths, args.profile or _out(args, "final_profile.csv"))
    _write_json(args.report or _out(args, "final.json"), _result_dict(res))
    if args.model:
        save_checkpoint(args.model, res["params"], {"kind": "cnn", **architecture_of(res["params"])})


def cmd_verify(args) -> None:
    config = _pipeline_config(args)
    split_seed = derive_seed(config.seed, "verify_split") if args.split_seed is None else args.split_seed
    res, wavelengths = _train_interval(args, config, "verify", "verify_top", split_seed)
    out = _result_dict(res)
    if args.reference_profile:
        with open(args.reference_profile, newline="") as fh:
            ref = {int(r["band"]): float(r["accuracy"]) for r in csv.DictReader(fh)}
        try:
            common = [b for b in res["profile"].bands if b in ref]
            acc = dict(zip(res["profile"].bands, res["profile"].accuracy))
            out["pearson_with_reference"] = pearson_corr([ref[b] for b in common], [acc[b] for b in common])
        except ValueError:
            out["pearson_with_reference"] = None
    write_profile_csv(res["profile"], wavelengths, args.profile or _out(args, "verify_profile.csv"))
    _write_json(args.report or _out(args, "verify.json"), out)


def cmd_run(args) -> None:
    config = _pipeline_config(args)
    result = run_pipeline(config, args.out_dir, args.threads)
    rep = result.report
    print(f"selected interval {rep.get('selected_interval')}; final accuracy {rep['final']['final_accuracy']:.3f}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags without defaults so they never mask values given before the subcommand
    def default(value):
        return argparse.SUPPRESS if suppress else value

    flags = _Parser(add_help=False)
    flags.add_argument("--config", default=default(None), help="pipeline config JSON")
    flags.add_argument("--seed", type=int, default=default(None), help="base seed, overrides the config")
    flags.add_argument("--out-dir", default=default("out"), help="output directory (default: out)")
    flags.add_argument("--threads", type=int, default=default(1), help="worker processes for the noise screen")
    return flags


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = _Parser(prog="cube", description="Hyperspectral band screening and selection", parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", parents=[common], help="raw counts to reflectance")
    p.add_argument("--raw", required=True)
    p.add_argument("--dark", required=True)
    p.add_argument("--white", required=True)
    p.add_argument("--out", help="output cube (default: OUT_DIR/calibrated.cube)")
    p.add_argument("--format", default="native", choices=["native", "flat_csv"])
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("segment", parents=[common], help="cut seed ROIs out of a reflectance cube")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True, help="JSON list or one label per line, in scan order")
    p.add_argument("--band", type=int, default=60)
    p.add_argument("--margin", type=int, default=8)
    p.add_argument("--percentile", type=float, default=1.0)
    p.add_argument("--min-area", type=int, default=25)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--rois", help="ROI directory (default: OUT_DIR/rois)")
    p.add_argument("--format", default="native", choices=["native", "flat_csv"])
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--spec", help="synthetic spec JSON (default spec when omitted)")
    p.add_argument("--raw", action="store_true", help="also write a raw scene with dark/white frames")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("screen", parents=[common], help="LSTM noise screen over band intervals")
    p.add_argument("--rois", required=True)
    p.add_argument("--intervals", type=int, help="number of equal intervals")
    p.add_argument("--bands", help="explicit intervals, e.g. 1-10,11-20")
    p.add_argument("--repeats", type=int)
    p.add_argument("--rule", help="above-mean, top-k:K or factor:C")
    p.add_argument("--iterations", type=int)
    p.add_argument("--report")
    p.add_argument("--curves")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("scan", parents=[common], help="CNN band-by-band accuracy scan")
    p.add_argument("--rois", required=True)
    p.add_argument("--bands", help="intervals to scan, e.g. 51-100,101-150,151-200")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--profile")
    p.add_argument("--stats")
    p.add_argument("--model")
    p.set_defaults(func=cmd_scan)

    for name, func, text in (
        ("train", cmd_train, "retrain a fresh CNN on one interval"),
        ("verify", cmd_verify, "retrain and profile on a second cultivar"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--rois", required=True)
        p.add_argument("--bands", required=True, help="one interval, e.g. 151-200")
        p.add_argument("--split-seed", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--profile")
        p.add_argument("--report")
        if name == "train":
            p.add_argument("--model")
        else:
            p.add_argument("--reference-profile", help="profile CSV to correlate with")
        p.set_defaults(func=func)

    p = sub.add_parser("run", parents=[common], help="full pipeline from one config")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        args.func(args)
    except ConfigError as exc:
        print(f"cube: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"cube: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:
        print(f"cube: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
