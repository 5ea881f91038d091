"""Background thresholding, seed bounding boxes and masked per-seed ROI stacks.

Segmentation runs on a single reference band; every band of a seed's ROI
shares that one geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from hsiband.cube import HyperCube, load_cube, save_cube

LABELS = ("diploid", "haploid")


def label_index(label: str) -> int:
    """Class index used by the classifiers: diploid -> 0, haploid -> 1."""
    try:
        return LABELS.index(label)
    except ValueError:
        raise ValueError(f"unknown seed label {label!r}, expected one of {LABELS}") from None


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Inclusive pixel bounds."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ValueError(f"degenerate box {self}")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    def slices(self) -> tuple[slice, slice]:
        return slice(self.row_min, self.row_max + 1), slice(self.col_min, self.col_max + 1)

    def as_list(self) -> list[int]:
        return [self.row_min, self.row_max, self.col_min, self.col_max]


@dataclass(frozen=True)
class SeedROI:
    """One seed's masked, size-normalised image stack ``[H, W, bands]``."""

    stack: np.ndarray
    label: str
    seed_id: int
    source_box: BoundingBox
    cultivar: str = ""

    def __post_init__(self):
        label_index(self.label)
        if self.stack.ndim != 3 or self.stack.shape[0] != self.stack.shape[1]:
            raise ValueError(f"ROI stack must be (size, size, bands), got {self.stack.shape}")

    @property
    def target(self) -> int:
        return label_index(self.label)

    @property
    def band_count(self) -> int:
        return self.stack.shape[2]

    def band_image(self, band_index: int) -> np.ndarray:
        return self.stack[:, :, band_index - 1]


def estimate_background_threshold(band_image: np.ndarray, margin: int = 8, percentile: float = 1.0) -> float:
    """Percentile of the border frame of width ``margin``, taken as background.

    ``percentile=1.0`` is the border maximum. Otherwise the value at sorted
    position ``ceil(percentile * n)`` (1-based) is returned.
    """
    image = np.asarray(band_image, dtype=np.float64)
    rows, cols = image.shape
    if margin < 1 or 2 * margin >= rows or 2 * margin >= cols:
        raise ValueError(f"margin {margin} leaves no interior in a {rows}x{cols} image")
    if not 0 < percentile <= 1:
        raise ValueError(f"percentile must be in (0, 1], got {percentile}")
    border = np.ones(image.shape, dtype=bool)
    border[margin:-margin, margin:-margin] = False
    values = np.sort(image[border])
    rank = max(1, math.ceil(percentile * values.size))
    return float(values[rank - 1])


def binarize(band_image: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(band_image) > threshold


_EIGHT = np.ones((3, 3), dtype=bool)


def extract_bounding_boxes(mask: np.ndarray, min_area: int = 25) -> list[BoundingBox]:
    """One box per 8-connected component of at least ``min_area`` pixels, in scan order."""
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    boxes = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or areas[idx] < min_area:
            continue
        boxes.append(BoundingBox(sl[0].start, sl[0].stop - 1, sl[1].start, sl[1].stop - 1))
    return sorted(boxes, key=lambda b: (b.row_min, b.col_min))


def _source_coords(out_size: int, in_size: int) -> np.ndarray:
    # pixel-centre alignment: output centre i maps to (i + 0.5) * in/out - 0.5
    return (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Resize ``(H, W[, C])`` to ``(size, size[, C])`` with edge-clamped bilinear weights."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    ys = np.clip(_source_coords(size, h), 0, h - 1)
    xs = np.clip(_source_coords(size, w), 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    if image.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    image = np.asarray(image)
    h, w = image.shape[:2]
    ys = np.clip(np.floor((np.arange(size) + 0.5) * h / size).astype(int), 0, h - 1)
    xs = np.clip(np.floor((np.arange(size) + 0.5) * w / size).astype(int), 0, w - 1)
    return image[ys][:, xs]


def extract_rois(
    cube: HyperCube,
    boxes: Sequence[BoundingBox],
    mask: np.ndarray,
    labels: Sequence[str],
    target_size: int = 64,
    first_seed_id: int = 0,
) -> list[SeedROI]:
    """Crop every band of each box, zero the background and resize to ``target_size``.

    The resized stack is re-masked with the nearest-neighbour resized mask,
    so background pixels are exactly zero after interpolation.
    """
    if len(labels) != len(boxes):
        raise ValueError(f"{len(labels)} labels for {len(boxes)} boxes")
    mask = np.asarray(mask, dtype=bool)
    rows, cols, _ = cube.shape
    if mask.shape != (rows, cols):
        raise ValueError(f"mask shape {mask.shape} does not match cube {rows}x{cols}")
    rois = []
    for offset, (box, label) in enumerate(zip(boxes, labels)):
        if box.row_min < 0 or box.col_min < 0 or box.row_max >= rows or box.col_max >= cols:
            raise ValueError(f"box {box} outside {rows}x{cols} cube")
        rs, cs = box.slices()
        crop_mask = mask[rs, cs]
        crop = cube.data[rs, cs, :].astype(np.float64) * crop_mask[:, :, None]
        small_mask = resize_nearest(crop_mask, target_size)
        stack = resize_bilinear(crop, target_size) * small_mask[:, :, None]
        rois.append(
            SeedROI(
                stack=stack.astype(np.float32),
                label=label,
                seed_id=first_seed_id + offset,
                source_box=box,
                cultivar=str(cube.meta.get("cultivar", "")),
            )
        )
    return rois


def segment_cube(
    cube: HyperCube,
    labels: Sequence[str],
    band: int = 60,
    margin: int = 8,
    percentile: float = 1.0,
    min_area: int = 25,
    target_size: int = 64,
) -> tuple[list[SeedROI], np.ndarray, list[BoundingBox]]:
    """Threshold one reference band and cut every seed out of the cube."""
    image = cube.band(band)
    threshold = estimate_background_threshold(image, margin, percentile)
    mask = binarize(image, threshold)
    boxes = extract_bounding_boxes(mask, min_area)
    if len(boxes) != len(labels):
        raise ValueError(f"found {len(boxes)} seeds but {len(labels)} labels were supplied")
    return extract_rois(cube, boxes, mask, labels, target_size), mask, boxes


# --- ROI persistence (native cube files, one per seed) --------------------------------


def roi_to_cube(roi: SeedROI, wavelengths: np.ndarray) -> HyperCube:
    meta = {
        "cultivar": roi.cultivar,
        "acquisition_id": f"seed-{roi.seed_id}",
        "calibrated": True,
        "label": roi.label,
        "seed_id": roi.seed_id,
        "source_box": roi.source_box.as_list(),
    }
    return HyperCube(roi.stack, wavelengths, meta)


def roi_from_cube(cube: HyperCube) -> SeedROI:
    try:
        box = BoundingBox(*cube.meta["source_box"])
        return SeedROI(
            stack=cube.data,
            label=cube.meta["label"],
            seed_id=int(cube.meta["seed_id"]),
            source_box=box,
            cultivar=cube.meta.get("cultivar", ""),
        )
    except KeyError as exc:
        raise ValueError(f"cube is not a seed ROI: missing meta key {exc}") from None


def save_rois(rois: Sequence[SeedROI], wavelengths: np.ndarray, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for roi in rois:
        save_cube(roi_to_cube(roi, wavelengths), out / f"seed_{roi.seed_id:05d}.cube")


def load_rois(directory: str | Path) -> tuple[list[SeedROI], np.ndarray]:
    files = sorted(Path(directory).glob("seed_*.cube"))
    if not files:
        raise FileNotFoundError(f"no seed_*.cube files in {directory}")
    cubes = [load_cube(f) for f in files]
    wavelengths = cubes[0].wavelengths
    for c, f in zip(cubes, files):
        if not np.array_equal(c.wavelengths, wavelengths):
            raise ValueError(f"{f}: wavelength table differs from {files[0]}")
    return [roi_from_cube(c) for c in cubes], wavelengths
