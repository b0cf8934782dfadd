"""Multi-band scene handling: load, validity masking, quality metrics, RGB rendering.

Scenes are stored as multi-page TIFFs (one page per band) with a JSON description
tag carrying band names, georeference, capture date and scaling; a sidecar
``<file>.manifest.json`` is honored when the tag is absent. Integer digital
numbers are scaled to reflectance by ``1/10000`` at load time.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image
from scipy import ndimage
from scipy.stats import rankdata

from .errors import DecodeError, EmptyScene, GeoreferenceMissing, MissingBand, NoViableScene
from .geo import METERS_PER_DEGREE, GeoTransform

logger = logging.getLogger(__name__)

REQUIRED_BANDS = ("B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B11", "B12")

DN_SCALE = 10_000.0

# Rec.601 luma weights, the single grayscale definition used package-wide.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

LAPLACIAN_3X3 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass
class SceneCube:
    """Georeferenced reflectance stack for one capture.

    ``nodata_mask`` is True where any band carried the declared nodata value or
    where all bands are zero (zero-filled swath edges). Band grids all share one
    shape; values at masked pixels are ignored by every consumer.
    """

    scene_id: str
    bands: dict[str, np.ndarray]
    geo: GeoTransform
    nodata_mask: np.ndarray
    capture_date: dt.date
    crs_code: str = "EPSG:4326"

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.bands.values())).shape

    def band(self, name: str) -> np.ndarray:
        try:
            return self.bands[name]
        except KeyError:
            raise MissingBand(name) from None

    def validate(self) -> None:
        shape = self.shape
        for name, grid in self.bands.items():
            if grid.shape != shape:
                raise DecodeError(f"band {name} shape {grid.shape} != {shape}")
            valid = grid[~self.nodata_mask]
            if valid.size and not np.all(np.isfinite(valid)):
                raise DecodeError(f"band {name} has non-finite reflectance at valid pixels")
        if self.nodata_mask.shape != shape:
            raise DecodeError("nodata_mask shape mismatch")


@dataclass
class QualityReport:
    scene_id: str
    contrast: float
    sharpness: float
    entropy_bits: float
    nodata_fraction: float
    swath_gap: bool
    composite_score: float = 0.0
    # Needed by the ranking tie rule; filled from the owning SceneCube.
    capture_date: dt.date | None = None

    def to_dict(self) -> dict:
        d = {
            "scene_id": self.scene_id,
            "contrast": self.contrast,
            "sharpness": self.sharpness,
            "entropy_bits": self.entropy_bits,
            "nodata_fraction": self.nodata_fraction,
            "swath_gap": self.swath_gap,
            "composite_score": self.composite_score,
        }
        d["capture_date"] = self.capture_date.isoformat() if self.capture_date else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QualityReport":
        date = dt.date.fromisoformat(d["capture_date"]) if d.get("capture_date") else None
        return cls(
            scene_id=d["scene_id"],
            contrast=float(d["contrast"]),
            sharpness=float(d["sharpness"]),
            entropy_bits=float(d["entropy_bits"]),
            nodata_fraction=float(d["nodata_fraction"]),
            swath_gap=bool(d["swath_gap"]),
            composite_score=float(d.get("composite_score", 0.0)),
            capture_date=date,
        )


@dataclass
class RenderImage:
    """8-bit 3-channel raster ready for PNG export or model ingestion."""

    pixels: np.ndarray  # (H, W, 3) uint8
    provenance: str

    def save_png(self, path: str | Path) -> None:
        Image.fromarray(self.pixels, mode="RGB").save(path, format="PNG")

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()


# --------------------------------------------------------------------- scene I/O


def save_scene(
    cube: SceneCube,
    path: str | Path,
    *,
    as_digital_numbers: bool = True,
    nodata_value: float | None = 0,
) -> Path:
    """Reference writer for scene fixtures; one TIFF page per band.

    With ``as_digital_numbers`` the reflectance grids are stored as uint16
    DN = reflectance * 10000, mirroring the source distribution format.
    """
    path = Path(path)
    description = {
        "scene_id": cube.scene_id,
        "bands": list(cube.bands.keys()),
        "capture_date": cube.capture_date.isoformat(),
        "crs_code": cube.crs_code,
        "geo": cube.geo.to_dict(),
        "nodata": nodata_value,
        "scale": DN_SCALE if as_digital_numbers else 1.0,
    }
    with tifffile.TiffWriter(path) as tif:
        for i, (name, grid) in enumerate(cube.bands.items()):
            if as_digital_numbers:
                data = np.rint(np.clip(grid, 0.0, 6.5) * DN_SCALE).astype(np.uint16)
                data[cube.nodata_mask] = 0
            else:
                data = grid.astype(np.float32)
            tif.write(
                data,
                photometric="minisblack",
                description=json.dumps(description) if i == 0 else None,
            )
    return path


def _read_manifest(path: Path, first_page_description: str | None) -> dict:
    if first_page_description:
        try:
            meta = json.loads(first_page_description)
            if isinstance(meta, dict) and "bands" in meta:
                return meta
        except json.JSONDecodeError:
            pass
    sidecar = path.with_suffix(path.suffix + ".manifest.json")
    if sidecar.exists():
        return json.loads(sidecar.read_text())
    return {}


def load_scene(path: str | Path) -> SceneCube:
    """Load a multi-band scene; raises MissingBand/DecodeError/GeoreferenceMissing."""
    path = Path(path)
    try:
        with tifffile.TiffFile(path) as tif:
            pages = [p.asarray() for p in tif.pages]
            description = tif.pages[0].description or None
    except (tifffile.TiffFileError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot read raster {path}: {exc}") from exc

    meta = _read_manifest(path, description)
    band_names = meta.get("bands")
    if not band_names:
        raise DecodeError(f"no band names in TIFF description or sidecar manifest for {path}")

    if "geo" not in meta:
        raise GeoreferenceMissing(f"no georeference recorded for {path}")
    geo = GeoTransform.from_dict(meta["geo"])

    available = dict(zip(band_names, pages))
    for name in REQUIRED_BANDS:
        if name not in available:
            raise MissingBand(name)

    scale = float(meta.get("scale", DN_SCALE))
    nodata_value = meta.get("nodata")
    bands: dict[str, np.ndarray] = {}
    for name in band_names:
        grid = available[name]
        if np.issubdtype(grid.dtype, np.integer):
            bands[name] = grid.astype(np.float64) / scale
        else:
            bands[name] = grid.astype(np.float64)

    mask = compute_nodata_mask(
        {n: available[n] for n in REQUIRED_BANDS}, nodata_value=nodata_value
    )
    capture = meta.get("capture_date")
    cube = SceneCube(
        scene_id=str(meta.get("scene_id", path.stem)),
        bands=bands,
        geo=geo,
        nodata_mask=mask,
        capture_date=dt.date.fromisoformat(capture) if capture else dt.date(1970, 1, 1),
        crs_code=str(meta.get("crs_code", "EPSG:4326")),
    )
    cube.validate()
    return cube


def compute_nodata_mask(
    raw_bands: dict[str, np.ndarray], nodata_value: float | None = 0
) -> np.ndarray:
    """Nodata = any band at the declared nodata value, or all bands zero."""
    grids = list(raw_bands.values())
    all_zero = np.ones(grids[0].shape, dtype=bool)
    for g in grids:
        all_zero &= g == 0
    mask = all_zero.copy()
    if nodata_value is not None and nodata_value != 0:
        # zero is ambiguous with real low reflectance, so the any-band rule only
        # applies to an explicit non-zero sentinel
        for g in grids:
            mask |= g == nodata_value
    return mask


# ----------------------------------------------------------------- quality metrics


def grayscale(pixels: np.ndarray) -> np.ndarray:
    """Rec.601 luma on a (H, W, 3) image, as float64 in [0, 255]."""
    r, g, b = LUMA_WEIGHTS
    return (
        r * pixels[..., 0].astype(np.float64)
        + g * pixels[..., 1].astype(np.float64)
        + b * pixels[..., 2].astype(np.float64)
    )


def quality_metrics(
    render: RenderImage,
    mask: np.ndarray,
    gap_threshold: float = 0.05,
    *,
    scene_id: str = "",
    capture_date: dt.date | None = None,
) -> QualityReport:
    """Contrast, sharpness and Shannon entropy of a rendered composite.

    contrast = grayscale std over valid pixels; sharpness = variance of the 3x3
    Laplacian response over valid pixels; entropy over a 256-bin grayscale
    histogram, in bits. ``mask`` is True at nodata pixels.
    """
    if not 0 < gap_threshold < 1:
        raise ValueError("gap_threshold must be in (0, 1)")
    if render.pixels.shape[:2] != mask.shape:
        raise EmptyScene("render and mask dimensions differ")
    valid = ~mask
    if not valid.any():
        raise EmptyScene(scene_id or render.provenance)

    gray = grayscale(render.pixels)
    contrast = float(np.std(gray[valid]))

    lap = ndimage.convolve(gray, LAPLACIAN_3X3, mode="reflect")
    sharpness = float(np.var(lap[valid]))

    levels = np.rint(gray[valid]).astype(np.int64).clip(0, 255)
    counts = np.bincount(levels, minlength=256).astype(np.float64)
    p = counts / counts.sum()
    nonzero = p > 0
    entropy = float(-(p[nonzero] * np.log2(p[nonzero])).sum())

    nodata_fraction = float(mask.sum() / mask.size)
    return QualityReport(
        scene_id=scene_id,
        contrast=contrast,
        sharpness=sharpness,
        entropy_bits=entropy,
        nodata_fraction=nodata_fraction,
        swath_gap=nodata_fraction > gap_threshold,
        capture_date=capture_date,
    )


# ----------------------------------------------------------------- candidate ranking

_METRICS = ("contrast", "sharpness", "entropy_bits")


def _low_outliers(reports: list[QualityReport], z_cutoff: float = 2.0) -> set[str]:
    """Scenes more than ``z_cutoff`` sample stds below the other candidates' mean.

    The comparison set for each candidate excludes the candidate itself: with the
    candidate included, no member of a small set can ever sit 2 stds below the
    set mean, which would make the exclusion rule vacuous.
    """
    out: set[str] = set()
    if len(reports) < 3:
        return out
    for metric in _METRICS:
        values = np.array([getattr(r, metric) for r in reports], dtype=np.float64)
        for i, r in enumerate(reports):
            others = np.delete(values, i)
            std = float(np.std(others, ddof=1))
            mean = float(np.mean(others))
            if std == 0.0:
                if values[i] < mean:
                    out.add(r.scene_id)
            elif (values[i] - mean) / std < -z_cutoff:
                out.add(r.scene_id)
    return out


def rank_details(reports: list[QualityReport]) -> list[QualityReport]:
    """Gap-filter, rank-normalize, composite-score and outlier-filter candidates.

    Returns surviving reports (copies with composite_score filled), sorted by
    composite descending with earlier capture_date breaking ties.
    """
    if not reports:
        raise NoViableScene("no quality reports supplied")
    candidates = [r for r in reports if not r.swath_gap]
    if not candidates:
        raise NoViableScene("all candidate scenes have swath gaps")

    n = len(candidates)
    normalized = np.zeros((n, len(_METRICS)), dtype=np.float64)
    for j, metric in enumerate(_METRICS):
        values = np.array([getattr(r, metric) for r in candidates], dtype=np.float64)
        if n == 1:
            normalized[:, j] = 1.0
        else:
            ranks = rankdata(values, method="average")
            normalized[:, j] = (ranks - 1.0) / (n - 1.0)
    composites = normalized.mean(axis=1)

    excluded = _low_outliers(candidates)
    survivors = []
    for r, score in zip(candidates, composites):
        if r.scene_id in excluded:
            logger.info("scene %s excluded as metric outlier", r.scene_id)
            continue
        survivors.append(
            QualityReport.from_dict({**r.to_dict(), "composite_score": float(score)})
        )
    if not survivors:
        raise NoViableScene("all candidates excluded as outliers")

    far_future = dt.date.max
    survivors.sort(
        key=lambda r: (-r.composite_score, r.capture_date or far_future, r.scene_id)
    )
    return survivors


def rank_candidates(reports: list[QualityReport]) -> list[str]:
    """Ordered scene ids, best first; raises NoViableScene when all are excluded."""
    return [r.scene_id for r in rank_details(reports)]


# --------------------------------------------------------------------- rendering


def _stretch_channel(
    values: np.ndarray, valid: np.ndarray, low_pct: float, high_pct: float
) -> np.ndarray:
    lo = float(np.percentile(values[valid], low_pct))
    hi = float(np.percentile(values[valid], high_pct))
    span = hi - lo
    if span <= 0:
        return np.zeros_like(values, dtype=np.float64)
    return np.clip((values - lo) / span * 255.0, 0.0, 255.0)


def render_rgb(
    cube: SceneCube,
    low_pct: float = 2.0,
    high_pct: float = 98.0,
    sat_gain: float = 1.2,
) -> RenderImage:
    """Percentile-stretched (B04, B03, B02) composite with saturation gain.

    Each channel stretches linearly between its low/high percentile over valid
    pixels. Saturation scales by interpolating away from the luma, which keeps
    hue fixed and leaves gray pixels gray. Masked pixels render black.
    """
    if not 0 <= low_pct < high_pct <= 100:
        raise ValueError("require 0 <= low_pct < high_pct <= 100")
    valid = ~cube.nodata_mask
    if not valid.any():
        raise EmptyScene(cube.scene_id)

    channels = [
        _stretch_channel(cube.band(name), valid, low_pct, high_pct)
        for name in ("B04", "B03", "B02")
    ]
    rgb = np.stack(channels, axis=-1)

    r, g, b = LUMA_WEIGHTS
    luma = r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
    saturated = luma[..., None] + sat_gain * (rgb - luma[..., None])
    out = np.rint(np.clip(saturated, 0.0, 255.0)).astype(np.uint8)
    out[cube.nodata_mask] = 0
    return RenderImage(pixels=out, provenance=f"rgb:B04,B03,B02 scene={cube.scene_id}")
