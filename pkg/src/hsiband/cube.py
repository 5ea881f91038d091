"""Hyperspectral cube container, file formats and radiometric calibration.

Native file layout (all integers little-endian)::

    b"HSICUBE1" | uint32 header length | UTF-8 JSON header | float32 payload

The header carries ``rows``, ``cols``, ``bands``, ``wavelengths`` (nm),
``interleave`` (always ``"bsq"``), ``dtype`` (always ``"<f4"``) and a
``meta`` mapping. The payload is band-sequential: all pixels of band 1 in
row-major order, then band 2, and so on.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"HSICUBE1"
DEFAULT_RANGE_NM = (862.9, 1704.2)
DEFAULT_BAND_COUNT = 256


class CubeFormatError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


def default_wavelengths(band_count: int = DEFAULT_BAND_COUNT) -> np.ndarray:
    """Linear wavelength table over the sensor's 862.9-1704.2 nm range."""
    return np.linspace(DEFAULT_RANGE_NM[0], DEFAULT_RANGE_NM[1], band_count)


@dataclass(frozen=True)
class HyperCube:
    """Reflectance (or raw counts) indexed ``[row, col, band]``.

    Data are held as float32, the storage precision of the native format.
    ``meta`` keeps ``cultivar``, ``acquisition_id`` and ``calibrated`` plus any
    extra JSON-serialisable keys.
    """

    data: np.ndarray
    wavelengths: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise CubeFormatError(f"cube data must be 3-D with every axis >= 1, got shape {data.shape}")
        if wl.shape != (data.shape[2],):
            raise CubeFormatError(f"{wl.size} wavelengths for {data.shape[2]} bands")
        if np.any(np.diff(wl) <= 0):
            raise CubeFormatError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(data)):
            raise CubeFormatError("cube contains non-finite values")
        data.flags.writeable = False
        meta = {"cultivar": "", "acquisition_id": "", "calibrated": False, **self.meta}
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "meta", meta)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def band_count(self) -> int:
        return self.data.shape[2]

    @property
    def calibrated(self) -> bool:
        return bool(self.meta.get("calibrated", False))

    def band(self, band_index: int) -> np.ndarray:
        """2-D image of a 1-based band."""
        if not 1 <= band_index <= self.band_count:
            raise IndexError(f"band {band_index} outside 1..{self.band_count}")
        return self.data[:, :, band_index - 1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HyperCube):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.wavelengths, other.wavelengths)
            and self.meta == other.meta
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class CalibrationFrames:
    """Dark and white references, either full ``(rows, cols, bands)`` cubes or
    push-broom lines of shape ``(cols, bands)`` that apply to every row."""

    dark: np.ndarray
    white: np.ndarray

    def __post_init__(self):
        dark = np.asarray(self.dark, dtype=np.float64)
        white = np.asarray(self.white, dtype=np.float64)
        if dark.shape != white.shape:
            raise CalibrationError(f"dark shape {dark.shape} != white shape {white.shape}")
        if dark.ndim not in (2, 3):
            raise CalibrationError(f"reference frames must be 2-D or 3-D, got {dark.ndim}-D")
        object.__setattr__(self, "dark", dark)
        object.__setattr__(self, "white", white)

    @classmethod
    def from_cubes(cls, dark: HyperCube, white: HyperCube) -> CalibrationFrames:
        d, w = dark.data, white.data
        if d.shape[0] == 1 and w.shape[0] == 1:
            return cls(d[0], w[0])
        return cls(d, w)


def calibrate(raw: HyperCube, frames: CalibrationFrames) -> HyperCube:
    """Reflectance ``(raw - dark) / (white - dark)``, evaluated in float64."""
    rows, cols, bands = raw.shape
    dark, white = frames.dark, frames.white
    if dark.ndim == 2:
        if dark.shape != (cols, bands):
            raise CalibrationError(f"line frames of shape {dark.shape} do not match (cols, bands) = {(cols, bands)}")
        dark, white = dark[None], white[None]
    elif dark.shape != raw.shape:
        raise CalibrationError(f"frames of shape {dark.shape} do not match cube shape {raw.shape}")
    span = white - dark
    bad = np.argwhere(~(span > 0))
    if bad.size:
        where = tuple(int(i) for i in bad[0])
        raise CalibrationError(f"white does not exceed dark at (row, col, band) index {where}")
    out = (raw.data.astype(np.float64) - dark) / span
    return replace(raw, data=out, meta={**raw.meta, "calibrated": True})


def wavelength_of(band_index: int, table: np.ndarray | list[float] | None = None) -> float:
    """Wavelength in nm of a 1-based band index."""
    table = default_wavelengths() if table is None else np.asarray(table, dtype=np.float64)
    if not 1 <= band_index <= len(table):
        raise IndexError(f"band {band_index} outside 1..{len(table)}")
    return float(table[band_index - 1])


def grayscale_histogram(image: np.ndarray, bins: int, value_range: tuple[float, float]) -> np.ndarray:
    """Counts over ``bins`` uniform bins on ``[lo, hi]``; out-of-range pixels are ignored.

    The last bin is closed on the right, as in :func:`numpy.histogram`.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("empty image")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    lo, hi = value_range
    if not lo < hi:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    counts, _ = np.histogram(image, bins=bins, range=(lo, hi))
    return counts


# --- file formats -------------------------------------------------------------------


def cube_bytes(cube: HyperCube) -> bytes:
    rows, cols, bands = cube.shape
    header = {
        "rows": rows,
        "cols": cols,
        "bands": bands,
        "wavelengths": [float(w) for w in cube.wavelengths],
        "interleave": "bsq",
        "dtype": "<f4",
        "meta": cube.meta,
    }
    head = json.dumps(header, sort_keys=True).encode()
    payload = np.ascontiguousarray(cube.data.transpose(2, 0, 1), dtype="<f4").tobytes()
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def save_cube(cube: HyperCube, path: str | Path, format: str = "native") -> None:
    path = Path(path)
    if format == "native":
        path.write_bytes(cube_bytes(cube))
    elif format == "flat_csv":
        _save_flat_csv(cube, path)
    else:
        raise ValueError(f"unknown cube format {format!r}")


def load_cube(path: str | Path, format: str = "native") -> HyperCube:
    path = Path(path)
    if format == "native":
        return _parse_native(path.read_bytes(), str(path))
    if format == "flat_csv":
        return _load_flat_csv(path)
    raise ValueError(f"unknown cube format {format!r}")


def _parse_native(raw: bytes, name: str) -> HyperCube:
    if raw[:8] != MAGIC:
        raise CubeFormatError(f"{name}: missing {MAGIC!r} magic")
    if len(raw) < 12:
        raise CubeFormatError(f"{name}: truncated header")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen])
        rows, cols, bands = (int(header[k]) for k in ("rows", "cols", "bands"))
        wavelengths = header["wavelengths"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CubeFormatError(f"{name}: malformed header ({exc})") from exc
    if header.get("interleave", "bsq") != "bsq" or header.get("dtype", "<f4") != "<f4":
        raise CubeFormatError(f"{name}: only band-sequential float32 payloads are supported")
    payload = raw[12 + hlen :]
    expected = rows * cols * bands * 4
    if len(payload) != expected:
        raise CubeFormatError(
            f"{name}: header declares {rows}x{cols}x{bands} ({expected} bytes), payload has {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(bands, rows, cols).transpose(1, 2, 0)
    return HyperCube(data, np.asarray(wavelengths), header.get("meta", {}))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".wavelengths.csv")


def _save_flat_csv(cube: HyperCube, path: Path) -> None:
    rows, cols, bands = cube.shape
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col"] + [f"b{b + 1}" for b in range(bands)])
        for r in range(rows):
            for c in range(cols):
                writer.writerow([r, c] + [f"{v:.9g}" for v in cube.data[r, c].tolist()])
    with _sidecar(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "wavelength_nm"])
        for b, w in enumerate(cube.wavelengths, start=1):
            writer.writerow([b, repr(float(w))])


def _load_flat_csv(path: Path) -> HyperCube:
    with _sidecar(path).open(newline="") as fh:
        wavelengths = [float(row["wavelength_nm"]) for row in csv.DictReader(fh)]
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["row", "col"]:
            raise CubeFormatError(f"{path}: expected a 'row,col,...' header")
        bands = len(header) - 2
        if bands != len(wavelengths):
            raise CubeFormatError(f"{path}: {bands} band columns but {len(wavelengths)} wavelengths")
        pixels = {}
        for line in reader:
            if len(line) != bands + 2:
                raise CubeFormatError(f"{path}: row with {len(line) - 2} band values, expected {bands}")
            pixels[int(line[0]), int(line[1])] = [float(v) for v in line[2:]]
    if not pixels:
        raise CubeFormatError(f"{path}: no pixel rows")
    rows = max(r for r, _ in pixels) + 1
    cols = max(c for _, c in pixels) + 1
    if len(pixels) != rows * cols:
        raise CubeFormatError(f"{path}: {len(pixels)} pixels do not fill a {rows}x{cols} grid")
    data = np.empty((rows, cols, bands), dtype=np.float32)
    for (r, c), values in pixels.items():
        data[r, c] = values
    return HyperCube(data, np.asarray(wavelengths))
