"""Synthetic seed cubes with planted per-interval noise and one discriminative interval.

Every seed is a rotated ellipse with spatially flat reflectance on a zero
background; by default all seeds share one shape. Reflectance follows one smooth spectrum per cultivar; haploid
(class 1) seeds get ``signal_strength`` added inside the signal interval.
Gaussian noise with the interval's standard deviation is added to blob
pixels of every band. Seed ids alternate diploid/haploid.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple

import numpy as np

from hsiband.cube import CalibrationFrames, HyperCube, default_wavelengths
from hsiband.screen import BandInterval, partition_bands
from hsiband.segmentation import LABELS, BoundingBox, SeedROI


@dataclass(frozen=True)
class SynthSpec:
    band_count: int = 50
    seeds_per_class: int = 20
    image_size: int = 32
    # 1-based inclusive (start, end) pairs; empty means five equal partitions
    intervals: tuple[tuple[int, int], ...] = ()
    noise_std: tuple[float, ...] = (0.5, 0.05, 0.05, 0.05, 0.5)
    # 1-based index into ``intervals``
    signal_interval: int = 4
    signal_strength: float = 0.3
    # ellipse semi-axes and centre jitter as fractions of image_size; angles in radians.
    # Any jitter gives each seed its own shape, which every band of that seed shares.
    semi_axes: tuple[float, float] = (0.38, 0.28)
    axis_jitter: float = 0.0
    centre_jitter: float = 0.0
    angle: float = 0.3
    angle_jitter: float = 0.0
    base_level: float = 0.5
    base_amplitude: float = 0.15
    base_phase: float = 0.0
    noisy_factor: float = 2.0
    cultivar: str = "synthetic-A"
    rng_seed: int = 0

    def __post_init__(self):
        if not self.intervals:
            parts = partition_bands(self.band_count, len(self.noise_std))
            object.__setattr__(self, "intervals", tuple((p.start, p.end) for p in parts))
        object.__setattr__(self, "intervals", tuple(tuple(int(v) for v in iv) for iv in self.intervals))
        object.__setattr__(self, "noise_std", tuple(float(v) for v in self.noise_std))
        if len(self.noise_std) != len(self.intervals):
            raise ValueError(f"{len(self.noise_std)} noise levels for {len(self.intervals)} intervals")
        if any(s < 0 for s in self.noise_std):
            raise ValueError("noise_std entries must be >= 0")
        if not 1 <= self.signal_interval <= len(self.intervals):
            raise ValueError(f"signal_interval {self.signal_interval} outside 1..{len(self.intervals)}")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")
        if self.seeds_per_class < 1 or self.image_size < 8 or self.band_count < 1:
            raise ValueError("seeds_per_class >= 1, image_size >= 8 and band_count >= 1 are required")
        covered = sorted(b for s, e in self.intervals for b in range(s, e + 1))
        if covered != list(range(1, self.band_count + 1)):
            raise ValueError("intervals must be a disjoint cover of 1..band_count")
        a, b = self.semi_axes
        if not (0 < a and 0 < b) or min(self.axis_jitter, self.centre_jitter, self.angle_jitter) < 0:
            raise ValueError("semi_axes must be positive and jitters non-negative")
        if max(a, b) + self.axis_jitter + self.centre_jitter > 0.5:
            raise ValueError("ellipse must fit inside the image")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SynthSpec:
        data = dict(data)
        for key in ("intervals", "noise_std", "semi_axes"):
            if key in data:
                data[key] = tuple(tuple(v) if isinstance(v, list) else v for v in data[key])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["intervals"] = [list(iv) for iv in self.intervals]
        d["noise_std"] = list(self.noise_std)
        d["semi_axes"] = list(self.semi_axes)
        return d

    def band_intervals(self) -> list[BandInterval]:
        return [BandInterval(s, e) for s, e in self.intervals]

    def band_noise(self) -> np.ndarray:
        out = np.empty(self.band_count)
        for (s, e), std in zip(self.intervals, self.noise_std):
            out[s - 1 : e] = std
        return out

    def base_spectrum(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.band_count)
        return self.base_level + self.base_amplitude * np.sin(np.pi * t + self.base_phase)


@dataclass(frozen=True)
class GroundTruth:
    noisy_intervals: list[int]
    discriminative_interval: int
    labels: dict[int, str] = field(default_factory=dict)
    reference_band: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "noisy_intervals": self.noisy_intervals,
            "discriminative_interval": self.discriminative_interval,
            "reference_band": self.reference_band,
            "labels": {str(k): v for k, v in self.labels.items()},
        }


def ground_truth(spec: SynthSpec) -> GroundTruth:
    floor = min(spec.noise_std)
    if floor > 0:
        noisy = [i for i, s in enumerate(spec.noise_std, start=1) if s > spec.noisy_factor * floor]
    else:
        noisy = [i for i, s in enumerate(spec.noise_std, start=1) if s > 0]
    quiet = int(np.argmin(spec.noise_std))
    start, end = spec.intervals[quiet]
    labels = {sid: LABELS[sid % 2] for sid in range(2 * spec.seeds_per_class)}
    return GroundTruth(noisy, spec.signal_interval, labels, (start + end) // 2)


def ellipse_mask(size: int, centre: tuple[float, float], axes: tuple[float, float], angle: float) -> np.ndarray:
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = rr - centre[0], cc - centre[1]
    cos, sin = math.cos(angle), math.sin(angle)
    u = dx * cos + dy * sin
    v = -dx * sin + dy * cos
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _seed_geometry(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    mid = (size - 1) / 2.0
    cj, aj = spec.centre_jitter, spec.axis_jitter
    centre = (mid + rng.uniform(-cj, cj) * size, mid + rng.uniform(-cj, cj) * size)
    axes = tuple((a + rng.uniform(-aj, aj)) * size for a in spec.semi_axes)
    angle = spec.angle + rng.uniform(-spec.angle_jitter, spec.angle_jitter)
    return ellipse_mask(size, centre, axes, angle)


def _seed_stack(spec: SynthSpec, seed_id: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([spec.rng_seed, seed_id])
    mask = _seed_geometry(spec, rng)
    spectrum = spec.base_spectrum()
    if seed_id % 2 == 1:
        s, e = spec.intervals[spec.signal_interval - 1]
        spectrum = spectrum.copy()
        spectrum[s - 1 : e] += spec.signal_strength
    n_pix = int(mask.sum())
    noise = rng.standard_normal((n_pix, spec.band_count)) * spec.band_noise()
    stack = np.zeros((spec.image_size, spec.image_size, spec.band_count))
    stack[mask] = spectrum + noise
    return stack, mask


def generate_synthetic_dataset(spec: SynthSpec) -> tuple[list[SeedROI], GroundTruth]:
    """ROI stacks for ``2 * seeds_per_class`` seeds, deterministic in ``spec.rng_seed``."""
    size = spec.image_size
    full = BoundingBox(0, size - 1, 0, size - 1)
    rois = []
    for sid in range(2 * spec.seeds_per_class):
        stack, _ = _seed_stack(spec, sid)
        rois.append(SeedROI(stack.astype(np.float32), LABELS[sid % 2], sid, full, spec.cultivar))
    return rois, ground_truth(spec)


class RawScene(NamedTuple):
    raw: HyperCube
    frames: CalibrationFrames
    mask: np.ndarray
    boxes: list[BoundingBox]
    labels: list[str]
    reflectance: np.ndarray


def generate_raw_cube(spec: SynthSpec, border: int = 12, gap: int = 4) -> RawScene:
    """Tile all seeds onto one scene in raw sensor counts with line dark/white frames.

    Background counts are at or below dark level, so a border maximum
    threshold on any low-noise band separates seeds from background.
    ``boxes`` and ``labels`` are in scan order, as segmentation returns them.
    """
    n = 2 * spec.seeds_per_class
    size = spec.image_size
    grid = math.ceil(math.sqrt(n))
    grid_rows = math.ceil(n / grid)
    rows = 2 * border + grid_rows * size + (grid_rows - 1) * gap
    cols = 2 * border + grid * size + (grid - 1) * gap
    bands = spec.band_count

    rng = np.random.default_rng([spec.rng_seed, n, 1])
    dark = np.round(rng.uniform(100.0, 120.0, size=(cols, bands)))
    white = dark + np.round(rng.uniform(3000.0, 3500.0, size=(cols, bands)))
    span = white - dark
    # background sits 0..2 counts below dark
    raw = dark[None] - rng.integers(0, 3, size=(rows, cols, bands))
    mask = np.zeros((rows, cols), dtype=bool)
    found = []
    for sid in range(n):
        stack, blob = _seed_stack(spec, sid)
        r0 = border + (sid // grid) * (size + gap)
        c0 = border + (sid % grid) * (size + gap)
        tile = raw[r0 : r0 + size, c0 : c0 + size]
        tile_dark = np.broadcast_to(dark[c0 : c0 + size], (size, size, bands))
        tile_span = np.broadcast_to(span[c0 : c0 + size], (size, size, bands))
        tile[blob] = tile_dark[blob] + stack[blob] * tile_span[blob]
        mask[r0 : r0 + size, c0 : c0 + size] |= blob
        rr, cc = np.nonzero(blob)
        box = BoundingBox(int(r0 + rr.min()), int(r0 + rr.max()), int(c0 + cc.min()), int(c0 + cc.max()))
        found.append((box, LABELS[sid % 2]))
    found.sort(key=lambda item: (item[0].row_min, item[0].col_min))
    raw32 = raw.astype(np.float32)
    reflectance = (raw32.astype(np.float64) - dark[None]) / span[None]
    wavelengths = default_wavelengths(bands)
    cube = HyperCube(raw32, wavelengths, {"cultivar": spec.cultivar, "acquisition_id": f"synth-{spec.rng_seed}"})
    frames = CalibrationFrames(dark, white)
    return RawScene(cube, frames, mask, [b for b, _ in found], [lab for _, lab in found], reflectance)
