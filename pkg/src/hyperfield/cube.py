"""Hyperspectral cube container, file format, and spectral preprocessing.

A cube on disk is a pair of files sharing a stem: ``<stem>.hdr`` holds
UTF-8 ``key = value`` metadata lines and ``<stem>.raw`` holds the
little-endian sample payload in one of three interleaves (bip, bil,
bsq). Wavelengths are recorded in nanometres at 0.1 nm precision.

In memory the payload always sits in a (rows, cols, bands) array, so
the interleave is purely a storage concern.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    CubeParseError,
    CubeSizeError,
    DataError,
    DegeneratePanelError,
    EmptyBandMaskError,
    ShapeMismatchError,
    UnsupportedFormatError,
)

HEADER_SUFFIX = ".hdr"
RAW_SUFFIX = ".raw"

INTERLEAVES = ("bip", "bil", "bsq")
UNITS = ("raw", "radiance", "reflectance", "abundance")

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint16": np.dtype("<u2"),
}

# Canonical synthetic instrument grid: 240 channels, ~2.2 nm sampling.
# With the default band mask below it keeps exactly 190 bands, and the
# red/blue index windows used for segmentation each contain 5 bands.
BAND_COUNT = 240
WAVELENGTH_START_NM = 400.0
WAVELENGTH_STEP_NM = 2.195

# Default spectral mask: keep the well-behaved 430-870 nm range and
# drop two atmospheric absorption windows (oxygen near 760 nm, water
# vapour near 820 nm). Window widths are total widths in nm.
KEEP_RANGE_NM = (430.0, 870.0)
ABSORPTION_WINDOWS_NM = ((760.0, 10.0), (820.0, 14.0))


def default_wavelengths() -> np.ndarray:
    """Wavelength grid of the canonical synthetic instrument, in nm."""
    return WAVELENGTH_START_NM + WAVELENGTH_STEP_NM * np.arange(BAND_COUNT)


@dataclass
class HyperCube:
    """Dense hyperspectral image.

    Attributes
    ----------
    data:
        (rows, cols, bands) array, float32/float64/uint16.
    wavelengths:
        (bands,) strictly increasing band centres in nm.
    units:
        One of ``raw``, ``radiance``, ``reflectance``, ``abundance``.
    band_labels:
        Optional per-band names. Used when a cube carries abundance
        planes rather than spectral bands.
    """

    data: np.ndarray
    wavelengths: np.ndarray
    units: str
    band_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeMismatchError(
                f"cube data must be 3-d (rows, cols, bands), got {self.data.ndim}-d"
            )
        if self.wavelengths.ndim != 1 or self.wavelengths.size != self.data.shape[2]:
            raise ShapeMismatchError(
                f"wavelength count {self.wavelengths.size} does not match "
                f"band count {self.data.shape[2]}"
            )
        if self.wavelengths.size >= 2 and not np.all(np.diff(self.wavelengths) > 0):
            raise ShapeMismatchError("wavelengths must be strictly increasing")
        if self.units not in UNITS:
            raise UnsupportedFormatError(f"unsupported units tag {self.units!r}")
        if self.data.dtype.kind == "f" and not np.all(np.isfinite(self.data)):
            raise ShapeMismatchError("cube data contains non-finite samples")
        if self.band_labels is not None:
            self.band_labels = tuple(self.band_labels)
            if len(self.band_labels) != self.data.shape[2]:
                raise ShapeMismatchError(
                    f"{len(self.band_labels)} band labels for "
                    f"{self.data.shape[2]} bands"
                )

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """Payload as a (bands, rows*cols) matrix, row-major pixel order."""
        return self.data.reshape(-1, self.bands).T

    def crop(self, top: int, left: int, height: int, width: int) -> "HyperCube":
        if height <= 0 or width <= 0:
            raise ShapeMismatchError("crop window must be non-empty")
        if top < 0 or left < 0 or top + height > self.rows or left + width > self.cols:
            raise ShapeMismatchError(
                f"crop ({top},{left},{height},{width}) exceeds cube "
                f"{self.rows}x{self.cols}"
            )
        return replace(self, data=self.data[top : top + height, left : left + width])


def _paths(path: str | os.PathLike) -> tuple[str, str]:
    stem = str(path)
    if stem.endswith(HEADER_SUFFIX):
        stem = stem[: -len(HEADER_SUFFIX)]
    elif stem.endswith(RAW_SUFFIX):
        stem = stem[: -len(RAW_SUFFIX)]
    return stem + HEADER_SUFFIX, stem + RAW_SUFFIX


def write_cube(cube: HyperCube, path: str | os.PathLike, interleave: str = "bsq") -> str:
    """Write header and raw payload; returns the header path.

    ``path`` may be the stem or either member of the pair. The payload
    dtype is taken from the cube and must be one of the supported
    sample types.
    """
    if interleave not in INTERLEAVES:
        raise UnsupportedFormatError(f"unsupported interleave {interleave!r}")
    dtype_name = cube.data.dtype.name
    if dtype_name not in _DTYPES:
        raise UnsupportedFormatError(f"unsupported sample type {dtype_name!r}")

    hdr_path, raw_path = _paths(path)
    lines = [
        f"samples = {cube.cols}",
        f"lines = {cube.rows}",
        f"bands = {cube.bands}",
        f"data type = {dtype_name}",
        f"interleave = {interleave}",
        f"units = {cube.units}",
        "wavelength = " + ", ".join(f"{w:.1f}" for w in cube.wavelengths),
    ]
    if cube.band_labels is not None:
        lines.append("band labels = " + ", ".join(cube.band_labels))
    with open(hdr_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    if interleave == "bip":
        payload = cube.data
    elif interleave == "bil":
        payload = cube.data.transpose(0, 2, 1)
    else:
        payload = cube.data.transpose(2, 0, 1)
    np.ascontiguousarray(payload, dtype=_DTYPES[dtype_name]).tofile(raw_path)
    return hdr_path


def _parse_header(hdr_path: str) -> dict:
    fields: dict[str, tuple[str, int]] = {}
    with open(hdr_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CubeParseError(f"expected 'key = value', got {line!r}", lineno)
            key, _, value = line.partition("=")
            fields[key.strip().lower()] = (value.strip(), lineno)
    return fields


def read_cube(path: str | os.PathLike) -> HyperCube:
    """Read a cube pair back into memory.

    Raises a parse error (with line number) for malformed headers, an
    unsupported-format error for unknown interleave/sample type/units,
    and a size error when the raw payload does not match the geometry.
    """
    hdr_path, raw_path = _paths(path)
    fields = _parse_header(hdr_path)

    def need(key: str) -> tuple[str, int]:
        if key not in fields:
            raise CubeParseError(f"missing required header key {key!r}")
        return fields[key]

    dims = {}
    for key in ("samples", "lines", "bands"):
        value, lineno = need(key)
        try:
            dims[key] = int(value)
        except ValueError:
            raise CubeParseError(f"{key} must be an integer, got {value!r}", lineno)
        if dims[key] <= 0:
            raise CubeParseError(f"{key} must be positive, got {dims[key]}", lineno)

    dtype_name, lineno = need("data type")
    if dtype_name not in _DTYPES:
        raise UnsupportedFormatError(f"unsupported sample type {dtype_name!r}")
    interleave, lineno = need("interleave")
    if interleave not in INTERLEAVES:
        raise UnsupportedFormatError(f"unsupported interleave {interleave!r}")
    units, lineno = need("units")

    wl_text, lineno = need("wavelength")
    try:
        wavelengths = np.array(
            [float(tok) for tok in wl_text.split(",") if tok.strip()], dtype=np.float64
        )
    except ValueError:
        raise CubeParseError("wavelength list contains a non-numeric entry", lineno)
    if wavelengths.size != dims["bands"]:
        raise CubeParseError(
            f"{wavelengths.size} wavelengths for {dims['bands']} bands", lineno
        )

    band_labels = None
    if "band labels" in fields:
        band_labels = tuple(
            tok.strip() for tok in fields["band labels"][0].split(",") if tok.strip()
        )

    dtype = _DTYPES[dtype_name]
    expected = dims["lines"] * dims["samples"] * dims["bands"]
    actual_bytes = os.path.getsize(raw_path)
    if actual_bytes != expected * dtype.itemsize:
        raise CubeSizeError(
            f"{raw_path}: expected {expected * dtype.itemsize} bytes "
            f"({dims['lines']}x{dims['samples']}x{dims['bands']} {dtype_name}), "
            f"found {actual_bytes}"
        )
    flat = np.fromfile(raw_path, dtype=dtype)

    if interleave == "bip":
        data = flat.reshape(dims["lines"], dims["samples"], dims["bands"])
    elif interleave == "bil":
        data = flat.reshape(dims["lines"], dims["bands"], dims["samples"]).transpose(0, 2, 1)
    else:
        data = flat.reshape(dims["bands"], dims["lines"], dims["samples"]).transpose(1, 2, 0)
    return HyperCube(
        data=np.ascontiguousarray(data),
        wavelengths=wavelengths,
        units=units,
        band_labels=band_labels,
    )


def to_reflectance(
    cube: HyperCube,
    panel_region: tuple[int, int, int, int],
    panel_reflectance: np.ndarray,
) -> HyperCube:
    """Single-panel empirical line correction.

    ``panel_region`` is (top, left, height, width) of pixels covering
    the reference panel; ``panel_reflectance`` gives the panel's known
    reflectance per band. Each pixel is divided by the panel mean and
    rescaled by the known reflectance. Output is clamped below at zero;
    values above one are preserved (specular pixels stay visible).
    """
    top, left, height, width = panel_region
    if height <= 0 or width <= 0:
        raise ShapeMismatchError("panel region must be non-empty")
    if top < 0 or left < 0 or top + height > cube.rows or left + width > cube.cols:
        raise ShapeMismatchError(
            f"panel region ({top},{left},{height},{width}) exceeds cube "
            f"{cube.rows}x{cube.cols}"
        )
    panel_reflectance = np.asarray(panel_reflectance, dtype=np.float64)
    if panel_reflectance.shape != (cube.bands,):
        raise ShapeMismatchError(
            f"panel reflectance has {panel_reflectance.size} entries for "
            f"{cube.bands} bands"
        )
    if np.any(panel_reflectance <= 0):
        raise DegeneratePanelError("panel reflectance must be positive in every band")

    panel = cube.data[top : top + height, left : left + width].astype(np.float64)
    mean_panel = panel.mean(axis=(0, 1))
    if np.any(mean_panel <= 0):
        bad = int(np.argmax(mean_panel <= 0))
        raise DegeneratePanelError(
            f"panel mean is nonpositive in band {bad} "
            f"({cube.wavelengths[bad]:.1f} nm)"
        )

    out = cube.data.astype(np.float64) * (panel_reflectance / mean_panel)
    np.maximum(out, 0.0, out=out)
    return HyperCube(
        data=out,
        wavelengths=cube.wavelengths,
        units="reflectance",
        band_labels=cube.band_labels,
    )


def write_panel_reflectance_csv(
    path: str | os.PathLike, wavelengths: np.ndarray, reflectance: np.ndarray
) -> None:
    """Known panel reflectance per band: ``wavelength,reflectance`` rows."""
    wavelengths = np.asarray(wavelengths, dtype=np.float64)
    reflectance = np.asarray(reflectance, dtype=np.float64)
    if wavelengths.shape != reflectance.shape or wavelengths.ndim != 1:
        raise ShapeMismatchError(
            f"wavelengths {wavelengths.shape} and reflectance "
            f"{reflectance.shape} do not align"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength", "reflectance"])
        for wl, r in zip(wavelengths, reflectance):
            writer.writerow([f"{wl:.1f}", repr(float(r))])


def read_panel_reflectance_csv(
    path: str | os.PathLike,
) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["wavelength", "reflectance"]:
            raise DataError(f"{path}: expected header wavelength,reflectance")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise DataError(f"{path}: no panel samples")
    wavelengths = np.array([r[0] for r in rows])
    if not np.all(np.diff(wavelengths) > 0):
        raise DataError(f"{path}: wavelengths must be strictly increasing")
    return wavelengths, np.array([r[1] for r in rows])


@dataclass
class BandMask:
    """Boolean keep-flags per band."""

    keep: np.ndarray

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 1:
            raise ShapeMismatchError("band mask must be 1-d")

    @property
    def kept(self) -> int:
        return int(self.keep.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.keep)


def band_mask_from_windows(
    wavelengths: np.ndarray,
    keep_range: tuple[float, float] = KEEP_RANGE_NM,
    drop_windows: tuple[tuple[float, float], ...] = ABSORPTION_WINDOWS_NM,
) -> BandMask:
    """Build the spectral mask: keep a closed range, cut absorption windows.

    ``drop_windows`` entries are (centre, total width) in nm; bands whose
    centre falls inside a window (edges inclusive) are dropped.
    """
    wavelengths = np.asarray(wavelengths, dtype=np.float64)
    lo, hi = keep_range
    keep = (wavelengths >= lo) & (wavelengths <= hi)
    for centre, width in drop_windows:
        keep &= np.abs(wavelengths - centre) > width / 2.0
    return BandMask(keep=keep)


def apply_band_mask(cube: HyperCube, mask: BandMask) -> HyperCube:
    """Drop masked bands from the cube. At least two bands must survive."""
    if mask.keep.size != cube.bands:
        raise ShapeMismatchError(
            f"mask length {mask.keep.size} does not match band count {cube.bands}"
        )
    if mask.kept < 2:
        raise EmptyBandMaskError(
            f"band mask keeps {mask.kept} band(s); at least 2 are required"
        )
    labels = None
    if cube.band_labels is not None:
        labels = tuple(l for l, k in zip(cube.band_labels, mask.keep) if k)
    return HyperCube(
        data=np.ascontiguousarray(cube.data[:, :, mask.keep]),
        wavelengths=cube.wavelengths[mask.keep],
        units=cube.units,
        band_labels=labels,
    )
