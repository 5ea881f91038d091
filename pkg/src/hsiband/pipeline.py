"""End-to-end run: inputs -> ROIs -> noise screen -> band scan -> final model -> verification.

Each stage writes its output under ``out_dir`` before the next starts.
``report.json`` holds only values that are pure functions of the inputs and
config; wall-clock timings go to ``timings.json``.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from hsiband._seeds import derive_seed
from hsiband.cube import CalibrationFrames, calibrate, default_wavelengths, load_cube, save_cube
from hsiband.nn.checkpoint import save_checkpoint
from hsiband.nn.cnn import architecture_of
from hsiband.nn.train import TrainConfig
from hsiband.scan import (
    DEFAULT_THRESHOLD,
    BandAccuracyProfile,
    ProfileStats,
    SplitSpec,
    expand_bands,
    pearson_corr,
    per_band_accuracy,
    pooled_accuracy,
    profile_stats,
    select_dense_interval,
    select_top_bands,
    split_dataset,
    train_scan_cnn,
    write_profile_csv,
)
from hsiband.screen import (
    BandInterval,
    ConvergenceCriterion,
    LstmSpec,
    RemovalRule,
    partition_bands,
    screen_intervals,
)
from hsiband.segmentation import SeedROI, load_rois, save_rois, segment_cube
from hsiband.synth import SynthSpec, generate_synthetic_dataset

REPORT_VERSION = 1


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RawInput:
    """Raw cube plus dark/white reference cubes and seed labels in scan order."""

    cube: str
    dark: str
    white: str
    labels: str
    format: str = "native"
    band: int = 60
    margin: int = 8
    percentile: float = 1.0
    min_area: int = 25
    target_size: int = 64


@dataclass(frozen=True)
class RoiSource:
    """Exactly one of a synthetic spec, a directory of ROI cubes or a raw acquisition."""

    synth: SynthSpec | None = None
    rois_dir: str | None = None
    raw: RawInput | None = None

    def __post_init__(self):
        given = [x for x in (self.synth, self.rois_dir, self.raw) if x is not None]
        if len(given) != 1:
            raise ConfigError("exactly one of 'synth', 'rois_dir' or 'raw' must be given")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RoiSource:
        unknown = set(data) - {"synth", "rois_dir", "raw"}
        if unknown:
            raise ConfigError(f"unknown input keys {sorted(unknown)}")
        synth = SynthSpec.from_dict(data["synth"]) if data.get("synth") is not None else None
        raw = RawInput(**data["raw"]) if data.get("raw") is not None else None
        return cls(synth, data.get("rois_dir"), raw)

    def to_dict(self) -> dict[str, Any]:
        if self.synth is not None:
            return {"synth": self.synth.to_dict()}
        if self.rois_dir is not None:
            return {"rois_dir": self.rois_dir}
        return {"raw": asdict(self.raw)}

    def check_paths(self) -> None:
        paths = [self.rois_dir] if self.rois_dir else []
        if self.raw is not None:
            paths += [self.raw.cube, self.raw.dark, self.raw.white, self.raw.labels]
        for p in paths:
            if not Path(p).exists():
                raise ConfigError(f"input path does not exist: {p}")


def _screen_default() -> TrainConfig:
    return TrainConfig(batch_size=32, learning_rate=1e-3, iterations=1000, loss_record_stride=5)


def _cnn_default() -> TrainConfig:
    return TrainConfig(batch_size=32, learning_rate=1e-3, iterations=300, loss_record_stride=5)


@dataclass(frozen=True)
class PipelineConfig:
    input: RoiSource
    verification: RoiSource | None = None
    seed: int = 0
    n_intervals: int = 5
    # explicit "start-end" labels override n_intervals
    intervals: tuple[str, ...] = ()
    screen_enabled: bool = True
    scan_enabled: bool = True
    screen: TrainConfig = field(default_factory=_screen_default)
    screen_repeats: int = 3
    screen_rule: str = "above_mean"
    criterion: ConvergenceCriterion = ConvergenceCriterion()
    lstm: LstmSpec = LstmSpec()
    scan: TrainConfig = field(default_factory=_cnn_default)
    final: TrainConfig = field(default_factory=_cnn_default)
    train_per_class: int = 12
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        RemovalRule.parse(self.screen_rule)
        if self.n_intervals < 1 or self.screen_repeats < 1 or self.train_per_class < 1:
            raise ConfigError("n_intervals, screen_repeats and train_per_class must be >= 1")
        if not 0 <= self.threshold <= 1:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        for text in self.intervals:
            BandInterval.parse(text)
        count = len(self.intervals) or self.n_intervals
        if not self.scan_enabled and count > 1:
            raise ConfigError("disabling the scan needs a single interval to train on")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PipelineConfig:
        try:
            data = dict(data)
            known = {f.name for f in fields(cls)}
            unknown = set(data) - known
            if unknown:
                raise ConfigError(f"unknown config keys {sorted(unknown)}")
            if "input" not in data:
                raise ConfigError("config needs an 'input' section")
            data["input"] = RoiSource.from_dict(data["input"])
            if data.get("verification") is not None:
                data["verification"] = RoiSource.from_dict(data["verification"])
            for key in ("screen", "scan", "final"):
                if key in data:
                    data[key] = TrainConfig(**data[key])
            if "criterion" in data:
                data["criterion"] = ConvergenceCriterion(**data["criterion"])
            if "lstm" in data:
                data["lstm"] = LstmSpec(**data["lstm"])
            if "intervals" in data:
                data["intervals"] = tuple(data["intervals"])
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["input"] = self.input.to_dict()
        out["verification"] = self.verification.to_dict() if self.verification else None
        out["intervals"] = list(self.intervals)
        return out

    def replace(self, **changes: Any) -> PipelineConfig:
        return PipelineConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **changes})


@dataclass
class PipelineResult:
    report: dict[str, Any]
    timings: dict[str, float]
    complete: bool


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_labels(path: str | Path) -> list[str]:
    """Seed labels from a JSON list or a one-label-per-line text file."""
    text = Path(path).read_text()
    if text.lstrip().startswith("["):
        return [str(v) for v in json.loads(text)]
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_roi_source(source: RoiSource, out: Path | None) -> tuple[list[SeedROI], np.ndarray, dict[str, Any]]:
    """ROIs, wavelength table and provenance for one input source, persisting ROIs under ``out``."""
    info: dict[str, Any] = {}
    if source.synth is not None:
        rois, truth = generate_synthetic_dataset(source.synth)
        wavelengths = default_wavelengths(source.synth.band_count)
        info["ground_truth"] = truth.to_dict()
    elif source.rois_dir is not None:
        rois, wavelengths = load_rois(source.rois_dir)
    else:
        raw = source.raw
        cube = load_cube(raw.cube, raw.format)
        frames = CalibrationFrames.from_cubes(load_cube(raw.dark, raw.format), load_cube(raw.white, raw.format))
        reflectance = calibrate(cube, frames)
        if out is not None:
            save_cube(reflectance, out / "calibrated.cube")
        labels = read_labels(raw.labels)
        rois, _, boxes = segment_cube(
            reflectance, labels, raw.band, raw.margin, raw.percentile, raw.min_area, raw.target_size
        )
        wavelengths = reflectance.wavelengths
        info["boxes"] = [b.as_list() for b in boxes]
    if out is not None:
        save_rois(rois, wavelengths, out / "rois")
    info["seed_count"] = len(rois)
    return rois, wavelengths, info


def _profile_dict(profile: BandAccuracyProfile, wavelengths: np.ndarray) -> dict[str, Any]:
    return {
        "interval": profile.interval_label,
        "bands": profile.bands,
        "wavelength_nm": [float(wavelengths[b - 1]) for b in profile.bands],
        "accuracy": profile.accuracy,
    }


def train_and_profile(
    rois: Sequence[SeedROI],
    interval: BandInterval,
    train_ids: Sequence[int],
    test_ids: Sequence[int],
    config: TrainConfig,
    threshold: float,
    top_seed: int,
) -> dict[str, Any]:
    """Fresh CNN on one interval: per-band profile, stats, top bands and pooled accuracies."""
    result = train_scan_cnn(rois, interval, train_ids, config)
    profile = per_band_accuracy(result.params, rois, test_ids, interval.bands, interval.label)
    stats = profile_stats(profile, threshold)
    top = select_top_bands(profile, threshold)
    top_acc = None
    if top:
        top_model = train_scan_cnn(rois, top, train_ids, config.replace(rng_seed=top_seed))
        top_acc = pooled_accuracy(top_model.params, rois, test_ids, top)
    return {
        "params": result.params,
        "profile": profile,
        "stats": stats,
        "top_bands": top,
        "interval_accuracy": pooled_accuracy(result.params, rois, test_ids, interval.bands),
        "top_band_accuracy": top_acc,
        "train_accuracy": result.train_accuracy,
    }


def verify_transfer(
    interval: BandInterval,
    rois: Sequence[SeedROI],
    split: SplitSpec,
    config: TrainConfig,
    threshold: float = DEFAULT_THRESHOLD,
    top_seed: int = 1,
) -> tuple[BandAccuracyProfile, ProfileStats, float | None]:
    """Retrain on a second cultivar over ``interval``; profile, stats and pooled top-band accuracy."""
    if interval.end > rois[0].band_count:
        raise ValueError(f"interval {interval.label} exceeds the verification set's {rois[0].band_count} bands")
    train_ids, test_ids = split_dataset(rois, split)
    out = train_and_profile(rois, interval, train_ids, test_ids, config, threshold, top_seed)
    return out["profile"], out["stats"], out["top_band_accuracy"]


def stage_seeds(seed: int) -> dict[str, int]:
    return {tag: derive_seed(seed, tag) for tag in ("screen", "scan", "final", "top", "verify", "verify_top")}


def _intervals(config: PipelineConfig, band_count: int) -> list[BandInterval]:
    if config.intervals:
        ivs = sorted(BandInterval.parse(t) for t in config.intervals)
    else:
        ivs = partition_bands(band_count, config.n_intervals)
    if ivs[-1].end > band_count:
        raise ValueError(f"interval {ivs[-1].label} exceeds {band_count} bands")
    return ivs


def run_pipeline(config: PipelineConfig, out_dir: str | Path, threads: int = 1) -> PipelineResult:
    """Run every stage, persisting outputs; on failure the report is written with ``complete: false``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = stage_seeds(config.seed)
    report: dict[str, Any] = {
        "version": REPORT_VERSION,
        "config": config.to_dict(),
        "derived_seeds": seeds,
        "stages": {},
        "notes": [
            "the band scan and the final model share one per-class seed split",
            "top bands are pooled into a single training set for the combined accuracy",
        ],
    }
    timings: dict[str, float] = {}
    state: dict[str, Any] = {}

    def stage(name: str, fn) -> None:
        start = time.perf_counter()
        try:
            status = fn()
        except Exception as exc:
            report["stages"][name] = "failed"
            raise StageError(name, exc) from exc
        finally:
            timings[name] = time.perf_counter() - start
        report["stages"][name] = status or "done"

    def inputs():
        config.input.check_paths()
        rois, wavelengths, info = load_roi_source(config.input, out)
        state.update(rois=rois, wavelengths=wavelengths)
        report["input"] = info
        split = SplitSpec(config.train_per_class, config.seed)
        state["train_ids"], state["test_ids"] = split_dataset(rois, split)
        report["split"] = {"train_ids": state["train_ids"], "test_ids": state["test_ids"]}
        state["intervals"] = _intervals(config, rois[0].band_count)

    def screen():
        intervals = state["intervals"]
        if not config.screen_enabled or len(intervals) == 1:
            state["kept"] = intervals
            report["screen"] = {"kept": [iv.label for iv in intervals], "removed": []}
            return "skipped"
        rep = screen_intervals(
            state["rois"],
            intervals,
            config.screen.replace(rng_seed=seeds["screen"]),
            config.criterion,
            config.screen_repeats,
            RemovalRule.parse(config.screen_rule),
            config.lstm,
            threads,
        )
        rep.write_curves_csv(out / "screen_curves.csv")
        _write_json(out / "screen.json", rep.to_dict())
        state["kept"] = rep.kept
        report["screen"] = {**rep.to_dict(), "kept": [iv.label for iv in rep.kept], "removed": [iv.label for iv in rep.removed]}
        if not rep.kept:
            raise ValueError("the screen removed every interval")
        return None

    def scan():
        kept = state["kept"]
        if not config.scan_enabled or len(kept) == 1:
            state["selected"] = kept[0]
            report["scan"] = None
            report["selected_interval"] = kept[0].label
            return "skipped"
        rois = state["rois"]
        result = train_scan_cnn(rois, kept, state["train_ids"], config.scan.replace(rng_seed=seeds["scan"]))
        bands = expand_bands(kept)
        profile = per_band_accuracy(result.params, rois, state["test_ids"], bands, "+".join(iv.label for iv in kept))
        stats = {iv: profile_stats(profile.restrict(iv), config.threshold) for iv in kept}
        selected = select_dense_interval(stats)
        save_checkpoint(out / "scan_model.ckpt", result.params, {"kind": "cnn", **architecture_of(result.params)})
        write_profile_csv(profile, state["wavelengths"], out / "scan_profile.csv")
        scan_report = {
            "profile": _profile_dict(profile, state["wavelengths"]),
            "interval_stats": {iv.label: s.to_dict() for iv, s in stats.items()},
            "baseline_accuracy": float(np.mean(profile.accuracy)),
            "train_accuracy": result.train_accuracy,
            "selected_interval": selected.label,
        }
        _write_json(out / "scan_stats.json", scan_report["interval_stats"])
        state["selected"] = selected
        report["scan"] = scan_report
        report["selected_interval"] = selected.label
        return None

    def final():
        rois, selected = state["rois"], state["selected"]
        res = train_and_profile(
            rois,
            selected,
            state["train_ids"],
            state["test_ids"],
            config.final.replace(rng_seed=seeds["final"]),
            config.threshold,
            seeds["top"],
        )
        save_checkpoint(out / "final_model.ckpt", res["params"], {"kind": "cnn", **architecture_of(res["params"])})
        write_profile_csv(res["profile"], state["wavelengths"], out / "final_profile.csv")
        state["final_profile"] = res["profile"]
        report["final"] = {
            "interval": selected.label,
            "profile": _profile_dict(res["profile"], state["wavelengths"]),
            "stats": res["stats"].to_dict(),
            "top_bands": res["top_bands"],
            "top_band_wavelength_nm": [float(state["wavelengths"][b - 1]) for b in res["top_bands"]],
            "final_accuracy": res["interval_accuracy"],
            "top_band_accuracy": res["top_band_accuracy"],
            "train_accuracy": res["train_accuracy"],
        }

    def verify():
        if config.verification is None:
            report["verification"] = None
            return "skipped"
        vdir = out / "verification"
        vdir.mkdir(exist_ok=True)
        config.verification.check_paths()
        rois, wavelengths, info = load_roi_source(config.verification, vdir)
        profile, stats, combined = verify_transfer(
            state["selected"],
            rois,
            SplitSpec(config.train_per_class, derive_seed(config.seed, "verify_split")),
            config.final.replace(rng_seed=seeds["verify"]),
            config.threshold,
            seeds["verify_top"],
        )
        write_profile_csv(profile, wavelengths, vdir / "profile.csv")
        try:
            corr = pearson_corr(state["final_profile"].accuracy, profile.accuracy)
        except ValueError:
            corr = None
        report["verification"] = {
            "input": info,
            "profile": _profile_dict(profile, wavelengths),
            "mean": stats.mean,
            "max": stats.max,
            "std": stats.std,
            "count_ge_threshold": stats.count_ge_threshold,
            "combined_accuracy": combined,
            "pearson_with_final_profile": corr,
        }
        return None

    complete = False
    try:
        for name, fn in (("inputs", inputs), ("screen", screen), ("scan", scan), ("final", final), ("verify", verify)):
            stage(name, fn)
        complete = True
    except StageError as exc:
        report["error"] = str(exc)
        raise
    finally:
        report["complete"] = complete
        _write_json(out / "report.json", report)
        _write_json(out / "timings.json", {k: round(v, 3) for k, v in timings.items()})
    return PipelineResult(report, timings, complete)
