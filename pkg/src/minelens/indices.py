"""Spectral index computation (NDVI, NDBI, FMI) and palette rendering.

NDVI = (B08 - B04) / (B08 + B04) and NDBI = (B11 - B08) / (B11 + B08) are the
standard normalized differences. FMI is implemented as the ferrous-minerals
ratio B11 / B08 (short-wave infrared over near infrared); the index name alone
does not pin a formula, so the ratio definition is isolated here behind
``fmi()`` and one line to swap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image

from .errors import EmptyScene, ShapeError
from .raster import RenderImage, SceneCube


class IndexKind(str, Enum):
    NDVI = "NDVI"
    NDBI = "NDBI"
    FMI = "FMI"


@dataclass
class IndexRaster:
    kind: IndexKind
    values: np.ndarray  # float64; NaN at invalid pixels
    valid: np.ndarray  # bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def normalized_difference(
    a: np.ndarray, b: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(a - b) / (a + b) where the denominator is nonzero and the pixel unmasked."""
    if a.shape != b.shape or a.shape != mask.shape:
        raise ShapeError(f"grids disagree: {a.shape}, {b.shape}, mask {mask.shape}")
    denom = a + b
    valid = (~mask) & (denom != 0)
    values = np.full(a.shape, np.nan, dtype=np.float64)
    np.divide(a - b, denom, out=values, where=valid)
    return values, valid


def ndvi(cube: SceneCube) -> IndexRaster:
    values, valid = normalized_difference(cube.band("B08"), cube.band("B04"), cube.nodata_mask)
    return IndexRaster(kind=IndexKind.NDVI, values=values, valid=valid)


def ndbi(cube: SceneCube) -> IndexRaster:
    values, valid = normalized_difference(cube.band("B11"), cube.band("B08"), cube.nodata_mask)
    return IndexRaster(kind=IndexKind.NDBI, values=values, valid=valid)


def fmi(cube: SceneCube) -> IndexRaster:
    """Ferrous-minerals ratio B11 / B08, valid where B08 is nonzero and unmasked."""
    b11 = cube.band("B11")
    b08 = cube.band("B08")
    if b11.shape != b08.shape:
        raise ShapeError(f"grids disagree: {b11.shape}, {b08.shape}")
    valid = (~cube.nodata_mask) & (b08 != 0)
    values = np.full(b11.shape, np.nan, dtype=np.float64)
    np.divide(b11, b08, out=values, where=valid)
    return IndexRaster(kind=IndexKind.FMI, values=values, valid=valid)


# ------------------------------------------------------------------ palettes


@dataclass(frozen=True)
class Palette:
    """Piecewise-linear color map over a fixed value range."""

    name: str
    anchors: tuple[tuple[float, tuple[int, int, int]], ...]
    version: str

    @property
    def vmin(self) -> float:
        return self.anchors[0][0]

    @property
    def vmax(self) -> float:
        return self.anchors[-1][0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Map values (clamped to [vmin, vmax]) to (..., 3) uint8 colors."""
        v = np.clip(values, self.vmin, self.vmax)
        positions = np.array([a[0] for a in self.anchors], dtype=np.float64)
        colors = np.array([a[1] for a in self.anchors], dtype=np.float64)
        out = np.empty(v.shape + (3,), dtype=np.float64)
        for c in range(3):
            out[..., c] = np.interp(v, positions, colors[:, c])
        return np.rint(out).astype(np.uint8)


def load_palettes(path: str | Path | None = None) -> dict[str, Palette]:
    """Palette specs ship as versioned data so renders are bit-reproducible."""
    if path is None:
        raw = resources.files("minelens.data").joinpath("palettes.json").read_text()
    else:
        raw = Path(path).read_text()
    spec = json.loads(raw)
    palettes = {}
    for name, entry in spec["palettes"].items():
        anchors = tuple(
            (float(a[0]), (int(a[1][0]), int(a[1][1]), int(a[1][2]))) for a in entry["anchors"]
        )
        palettes[name] = Palette(name=name, anchors=anchors, version=spec["version"])
    return palettes


def render_index(raster: IndexRaster, palette: Palette | None = None) -> RenderImage:
    """Color render of an index; invalid pixels black."""
    if raster.values.size == 0:
        raise EmptyScene("empty index raster")
    if palette is None:
        palette = load_palettes()[raster.kind.value]
    filled = np.where(raster.valid, raster.values, palette.vmin)
    pixels = palette.apply(filled)
    pixels[~raster.valid] = 0
    return RenderImage(
        pixels=pixels, provenance=f"index:{raster.kind.value} palette={palette.version}"
    )


# ---------------------------------------------------------------- persistence


def save_index(raster: IndexRaster, path: str | Path) -> Path:
    """Single-band float32 TIFF; NaN marks invalid pixels."""
    path = Path(path)
    description = json.dumps({"kind": raster.kind.value})
    tifffile.imwrite(
        path,
        raster.values.astype(np.float32),
        photometric="minisblack",
        description=description,
    )
    return path


def load_index(path: str | Path) -> IndexRaster:
    path = Path(path)
    with tifffile.TiffFile(path) as tif:
        values = tif.pages[0].asarray().astype(np.float64)
        meta = json.loads(tif.pages[0].description or "{}")
    valid = np.isfinite(values)
    return IndexRaster(kind=IndexKind(meta.get("kind", "NDVI")), values=values, valid=valid)


def save_index_png(raster: IndexRaster, path: str | Path) -> Path:
    render_index(raster).save_png(path)
    return Path(path)


def save_label_png(labels: np.ndarray, path: str | Path) -> Path:
    """Paletted PNG for a label grid (0=background, 1=urban, 2=mining)."""
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette([0, 0, 0, 230, 159, 0, 213, 94, 0] + [0] * (256 * 3 - 9))
    img.save(path, format="PNG")
    return Path(path)
