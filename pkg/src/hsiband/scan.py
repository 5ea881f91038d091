"""CNN band scan: per-band test accuracy, interval statistics and band selection.

One CNN is trained on every single-band image of the training seeds over a
band set, then tested band by band. Intervals are compared by how densely
their per-band accuracies reach a threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from hsiband._seeds import derive_seed
from hsiband.nn.cnn import CnnClassifier, architecture_of
from hsiband.nn.train import TrainConfig, TrainResult, predict, train_classifier
from hsiband.screen import BandInterval
from hsiband.segmentation import LABELS, SeedROI, resize_bilinear

DEFAULT_THRESHOLD = 0.90


@dataclass(frozen=True)
class BandAccuracyProfile:
    bands: list[int]
    accuracy: list[float]
    interval_label: str = ""

    def __post_init__(self):
        if len(self.bands) != len(self.accuracy):
            raise ValueError(f"{len(self.bands)} bands but {len(self.accuracy)} accuracies")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracy):
            raise ValueError("accuracies must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.bands)

    def restrict(self, interval: BandInterval) -> BandAccuracyProfile:
        keep = [(b, a) for b, a in zip(self.bands, self.accuracy) if b in interval]
        return BandAccuracyProfile([b for b, _ in keep], [a for _, a in keep], interval.label)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProfileStats:
    mean: float
    max: float
    std: float
    count_ge_threshold: int
    threshold: float = DEFAULT_THRESHOLD

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitSpec:
    train_per_class: int = 12
    rng_seed: int = 0

    def __post_init__(self):
        if self.train_per_class < 1:
            raise ValueError(f"train_per_class must be >= 1, got {self.train_per_class}")


def split_dataset(rois: Sequence[SeedROI], spec: SplitSpec) -> tuple[list[int], list[int]]:
    """Per-class sampling without replacement, by seed id; both lists are sorted."""
    rng = np.random.default_rng(derive_seed(spec.rng_seed, "split"))
    train: list[int] = []
    test: list[int] = []
    for label in LABELS:
        ids = sorted(r.seed_id for r in rois if r.label == label)
        if len(ids) <= spec.train_per_class:
            raise ValueError(
                f"{len(ids)} {label} seeds cannot give {spec.train_per_class} training seeds and a non-empty test set"
            )
        picked = set(rng.choice(len(ids), size=spec.train_per_class, replace=False).tolist())
        train += [sid for k, sid in enumerate(ids) if k in picked]
        test += [sid for k, sid in enumerate(ids) if k not in picked]
    if len(set(train) | set(test)) != len(train) + len(test):
        raise ValueError("seed ids are not unique")
    return sorted(train), sorted(test)


def expand_bands(band_set: BandInterval | Iterable[BandInterval | int]) -> list[int]:
    """Sorted distinct band indices of an interval, a union of intervals or plain indices."""
    if isinstance(band_set, BandInterval):
        band_set = [band_set]
    out: set[int] = set()
    for item in band_set:
        out.update(item.bands if isinstance(item, BandInterval) else [int(item)])
    return sorted(out)


def band_images(
    rois: Sequence[SeedROI], seed_ids: Iterable[int], bands: Sequence[int], image_size: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """``(seed, band)`` images ordered seed-major, with seed-class labels."""
    by_id = {r.seed_id: r for r in rois}
    xs, ys = [], []
    for sid in seed_ids:
        roi = by_id[sid]
        if bands and max(bands) > roi.band_count:
            raise ValueError(f"band {max(bands)} outside 1..{roi.band_count}")
        stack = roi.stack[:, :, [b - 1 for b in bands]].astype(np.float64)
        if image_size is not None and stack.shape[0] != image_size:
            stack = resize_bilinear(stack, image_size)
        xs.append(np.moveaxis(stack, 2, 0))
        ys.extend([roi.target] * len(bands))
    return np.concatenate(xs), np.asarray(ys, dtype=np.int64)


def scan_model(rois: Sequence[SeedROI], image_size: int | None = None) -> CnnClassifier:
    return CnnClassifier(image_size=image_size or rois[0].stack.shape[0])


def train_scan_cnn(
    rois: Sequence[SeedROI],
    band_set: BandInterval | Iterable[BandInterval | int],
    train_ids: Sequence[int],
    config: TrainConfig,
    image_size: int | None = None,
) -> TrainResult:
    """Fresh CNN trained on every single-band image of the training seeds."""
    bands = expand_bands(band_set)
    if not bands:
        raise ValueError("empty band set")
    model = scan_model(rois, image_size)
    x, y = band_images(rois, train_ids, bands, model.image_size)
    return train_classifier(model, x, y, config)


def per_band_accuracy(
    params: dict[str, np.ndarray],
    rois: Sequence[SeedROI],
    test_ids: Sequence[int],
    bands: Sequence[int],
    interval_label: str = "",
    image_size: int | None = None,
) -> BandAccuracyProfile:
    """Fraction of test seeds whose band-``b`` image is classified correctly, per band."""
    bands = list(bands)
    if not bands:
        raise ValueError("no bands to evaluate")
    if not test_ids:
        raise ValueError("empty test set")
    model = CnnClassifier(image_size=image_size or rois[0].stack.shape[0], **architecture_of(params))
    x, y = band_images(rois, test_ids, bands, model.image_size)
    hits = (predict(model, params, x) == y).reshape(len(test_ids), len(bands))
    acc = hits.sum(axis=0) / len(test_ids)
    return BandAccuracyProfile(bands, [float(a) for a in acc], interval_label)


def pooled_accuracy(
    params: dict[str, np.ndarray],
    rois: Sequence[SeedROI],
    test_ids: Sequence[int],
    bands: Sequence[int],
    image_size: int | None = None,
) -> float:
    """Accuracy over all ``(test seed, band)`` images together."""
    model = CnnClassifier(image_size=image_size or rois[0].stack.shape[0], **architecture_of(params))
    x, y = band_images(rois, test_ids, list(bands), model.image_size)
    return float(np.mean(predict(model, params, x) == y))


def profile_stats(profile: BandAccuracyProfile, threshold: float = DEFAULT_THRESHOLD) -> ProfileStats:
    """Mean, max, sample standard deviation and count at or above ``threshold``."""
    acc = np.asarray(profile.accuracy, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("empty profile")
    std = float(acc.std(ddof=1)) if acc.size > 1 else 0.0
    return ProfileStats(
        mean=float(acc.mean()),
        max=float(acc.max()),
        std=std,
        count_ge_threshold=int(np.sum(acc >= threshold)),
        threshold=float(threshold),
    )


def select_dense_interval(stats: Mapping[BandInterval, ProfileStats]) -> BandInterval:
    """Interval with the most bands at threshold; ties go to higher mean, then higher max.

    A full tie resolves to the lowest interval so the result does not depend
    on mapping order.
    """
    if not stats:
        raise ValueError("no intervals to select from")
    return max(
        sorted(stats),
        key=lambda iv: (stats[iv].count_ge_threshold, stats[iv].mean, stats[iv].max, -iv.start),
    )


def select_top_bands(profile: BandAccuracyProfile, threshold: float = DEFAULT_THRESHOLD) -> list[int]:
    return sorted(b for b, a in zip(profile.bands, profile.accuracy) if a >= threshold)


def pearson_corr(v1: Sequence[float], v2: Sequence[float]) -> float:
    a = np.asarray(v1, dtype=np.float64)
    b = np.asarray(v2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("pearson_corr needs two equal-length vectors of at least 2 values")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0 or sb == 0:
        raise ValueError("pearson_corr is undefined for a zero-variance input")
    r = float(da @ db) / (sa * sb)
    return max(-1.0, min(1.0, r))


def write_profile_csv(profile: BandAccuracyProfile, wavelengths: Sequence[float], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "wavelength_nm", "accuracy"])
        for b, a in zip(profile.bands, profile.accuracy):
            writer.writerow([b, repr(float(wavelengths[b - 1])), repr(a)])
