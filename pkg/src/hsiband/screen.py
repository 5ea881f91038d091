"""Noise screen: per-interval LSTM training, convergence detection, removal verdicts.

Intervals whose cost curves take longest to flatten are treated as noisy
and removed before the band scan.
"""

from __future__ import annotations

import csv
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from hsiband._seeds import derive_seed
from hsiband.nn.lstm import LstmClassifier
from hsiband.nn.train import LossCurve, TrainConfig, train_classifier
from hsiband.segmentation import resize_bilinear


@dataclass(frozen=True, order=True)
class BandInterval:
    """1-based inclusive band range."""

    start: int
    end: int

    def __post_init__(self):
        if not 1 <= self.start <= self.end:
            raise ValueError(f"invalid band interval {self.start}-{self.end}")

    @property
    def label(self) -> str:
        return f"{self.start}-{self.end}"

    @property
    def bands(self) -> list[int]:
        return list(range(self.start, self.end + 1))

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, band: object) -> bool:
        return isinstance(band, (int, np.integer)) and self.start <= band <= self.end

    @classmethod
    def parse(cls, text: str) -> BandInterval:
        try:
            lo, _, hi = text.strip().partition("-")
            return cls(int(lo), int(hi) if hi else int(lo))
        except ValueError:
            raise ValueError(f"cannot parse band interval {text!r}; expected 'start-end'") from None


def partition_bands(band_count: int, n_intervals: int) -> list[BandInterval]:
    """Contiguous equal-width intervals; the last absorbs the remainder.

    The width is ``band_count // n`` rounded down to a multiple of ten when it
    is at least ten, so 256 bands in five groups give 1-50, ..., 201-256.
    """
    if not 1 <= n_intervals <= band_count:
        raise ValueError(f"cannot split {band_count} bands into {n_intervals} intervals")
    width = band_count // n_intervals
    if width >= 10:
        width -= width % 10
    out = [BandInterval(k * width + 1, (k + 1) * width) for k in range(n_intervals - 1)]
    out.append(BandInterval((n_intervals - 1) * width + 1, band_count))
    return out


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Windowed relative-decrease test over recorded loss points.

    ``window`` counts recorded points, not training iterations.
    """

    window: int = 20
    rel_eps: float = 1e-3
    patience: int = 2

    def __post_init__(self):
        if self.window < 1 or self.patience < 1 or not self.rel_eps > 0:
            raise ValueError(f"invalid convergence criterion {self}")


def convergence_iteration(curve: LossCurve, crit: ConvergenceCriterion) -> int:
    """First recorded iteration ending ``patience`` consecutive flat windows.

    Windows tile backwards from the candidate point: window ``j`` covers the
    ``crit.window`` points ending ``j * window`` points earlier. Each of the
    ``patience`` newest windows must have a mean less than ``rel_eps`` below
    (relative) the window before it. Returns the last recorded iteration when
    no point qualifies.
    """
    losses = np.asarray(curve.losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("empty loss curve")
    w, p = crit.window, crit.patience
    csum = np.concatenate([[0.0], np.cumsum(losses)])

    def window_mean(k: int) -> float:
        return (csum[k + 1] - csum[k + 1 - w]) / w

    def flat(k: int) -> bool:
        prev, cur = window_mean(k - w), window_mean(k)
        if prev == 0:
            return True
        return (prev - cur) / abs(prev) < crit.rel_eps

    for k in range((p + 1) * w - 1, losses.size):
        if all(flat(k - j * w) for j in range(p)):
            return int(curve.iterations[k])
    return int(curve.iterations[-1])


@dataclass(frozen=True)
class RemovalRule:
    kind: str = "above_mean"
    param: float | None = None
    # above_mean slack, in iterations
    tol: float = 1.0

    def __post_init__(self):
        if self.kind not in ("above_mean", "top_k", "factor"):
            raise ValueError(f"unknown removal rule {self.kind!r}")
        if self.kind == "top_k" and (self.param is None or self.param < 0 or self.param != int(self.param)):
            raise ValueError("top_k needs a non-negative integer k")
        if self.kind == "factor" and (self.param is None or self.param <= 0):
            raise ValueError("factor needs a positive multiplier")

    @classmethod
    def parse(cls, text: str) -> RemovalRule:
        """``above-mean``, ``top-k:2`` or ``factor:1.2`` (underscores also accepted)."""
        kind, _, param = text.replace("-", "_").partition(":")
        return cls(kind, float(param) if param else None)

    def describe(self) -> str:
        if self.kind == "above_mean":
            return "above_mean"
        value = int(self.param) if self.kind == "top_k" else self.param
        return f"{self.kind}({value})"


def removal_verdicts(iterations: Sequence[float], rule: RemovalRule = RemovalRule()) -> list[str]:
    """``"remove"`` or ``"keep"`` per interval from its mean convergence iteration."""
    values = [float(v) for v in iterations]
    if not values:
        return []
    if rule.kind == "above_mean":
        mean = sum(values) / len(values)
        removed = {i for i, v in enumerate(values) if v > mean + rule.tol}
    elif rule.kind == "top_k":
        order = sorted(range(len(values)), key=lambda i: (-values[i], i))
        removed = set(order[: int(rule.param)])
    else:
        cut = rule.param * statistics.median(values)
        removed = {i for i, v in enumerate(values) if v > cut}
    return ["remove" if i in removed else "keep" for i in range(len(values))]


@dataclass(frozen=True)
class LstmSpec:
    """Screen model: ROIs are resized to ``image_size`` and fed row by row."""

    hidden_size: int = 8
    image_size: int = 16
    candidate: str = "sigmoid"


@dataclass
class ConvergenceReport:
    intervals: list[BandInterval]
    iterations: list[int]
    repeat_iterations: list[list[int]]
    curves: list[list[LossCurve]]
    verdicts: list[str]
    rule: str
    repeats: int
    budget: int
    seeds: list[list[int]] = field(default_factory=list)

    @property
    def kept(self) -> list[BandInterval]:
        return [iv for iv, v in zip(self.intervals, self.verdicts) if v == "keep"]

    @property
    def removed(self) -> list[BandInterval]:
        return [iv for iv, v in zip(self.intervals, self.verdicts) if v == "remove"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule": self.rule,
            "repeats": self.repeats,
            "iteration_budget": self.budget,
            "mean_of_iterations": sum(self.iterations) / len(self.iterations),
            "intervals": [
                {
                    "index": k,
                    "label": iv.label,
                    "start": iv.start,
                    "end": iv.end,
                    "convergence_iteration": it,
                    "repeat_iterations": reps,
                    "verdict": verdict,
                    "seeds": seeds,
                }
                for k, (iv, it, reps, verdict, seeds) in enumerate(
                    zip(
                        self.intervals,
                        self.iterations,
                        self.repeat_iterations,
                        self.verdicts,
                        self.seeds or [[] for _ in self.intervals],
                    ),
                    start=1,
                )
            ],
        }

    def write_curves_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["interval", "repeat", "iteration", "loss"])
            for iv, reps in zip(self.intervals, self.curves):
                for r, curve in enumerate(reps, start=1):
                    for it, loss in zip(curve.iterations, curve.losses):
                        writer.writerow([iv.label, r, it, repr(loss)])


def lstm_samples(rois, bands: Sequence[int], image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Every ``(seed, band)`` image resized to ``image_size``, labelled by seed class."""
    xs, ys = [], []
    for roi in rois:
        stack = roi.stack[:, :, [b - 1 for b in bands]]
        if stack.shape[0] != image_size:
            stack = resize_bilinear(stack, image_size)
        xs.append(np.moveaxis(stack, 2, 0))
        ys.extend([roi.target] * len(bands))
    return np.concatenate(xs).astype(np.float64), np.asarray(ys, dtype=np.int64)


def _train_curve(args) -> LossCurve:
    model, x, y, config = args
    return train_classifier(model, x, y, config).curve


def screen_intervals(
    rois,
    intervals: Sequence[BandInterval],
    config: TrainConfig,
    crit: ConvergenceCriterion = ConvergenceCriterion(),
    repeats: int = 3,
    rule: RemovalRule = RemovalRule(),
    lstm: LstmSpec = LstmSpec(),
    threads: int = 1,
) -> ConvergenceReport:
    """Train ``repeats`` fresh LSTMs per interval and flag slow-converging intervals.

    Repeat ``r`` uses the same derived seed for every interval, so intervals
    are compared under common initialisations and batch draws.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    band_count = rois[0].band_count
    for iv in intervals:
        if iv.end > band_count:
            raise ValueError(f"interval {iv.label} exceeds {band_count} bands")
    model = LstmClassifier(input_size=lstm.image_size, hidden_size=lstm.hidden_size, candidate=lstm.candidate)
    seeds = [derive_seed(config.rng_seed, "screen", r) for r in range(repeats)]
    jobs = []
    for iv in intervals:
        x, y = lstm_samples(rois, iv.bands, lstm.image_size)
        if len(x) < config.batch_size:
            raise ValueError(f"interval {iv.label} has {len(x)} samples, fewer than batch size {config.batch_size}")
        for r in range(repeats):
            jobs.append((model, x, y, config.replace(rng_seed=seeds[r])))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(_train_curve, jobs))
    else:
        flat = [_train_curve(job) for job in jobs]

    curves = [flat[k * repeats : (k + 1) * repeats] for k in range(len(intervals))]
    per_repeat = [[convergence_iteration(c, crit) for c in reps] for reps in curves]
    means = [int(math.floor(sum(reps) / len(reps) + 0.5)) for reps in per_repeat]
    return ConvergenceReport(
        intervals=list(intervals),
        iterations=means,
        repeat_iterations=per_repeat,
        curves=curves,
        verdicts=removal_verdicts(means, rule),
        rule=rule.describe(),
        repeats=repeats,
        budget=config.iterations,
        seeds=[seeds for _ in intervals],
    )
