"""Urban Dwelling and Mining index: scribble-supervised centroid classification.

Humans mark urban, mining and negative regions with informal strokes; per-class
centroids are fit over standardized spectral-texture features (10 band
reflectances plus a local-brightness-variation channel). Negative samples act
as a veto: a pixel is labeled only when its best positive centroid beats the
negative centroid by the configured margin. NDVI gating, binary opening and
component-area filtering suppress vegetation, thin roads and off-scale blobs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import draw

from .errors import InsufficientSamples, MissingBand, ModelMismatch, OutOfExtent
from .indices import IndexRaster
from .raster import REQUIRED_BANDS, SceneCube

logger = logging.getLogger(__name__)

CLASSES = ("urban", "mining", "negative")
POSITIVE_CLASSES = ("urban", "mining")
LABEL_CODES = {"background": 0, "urban": 1, "mining": 2}
FEATURE_NAMES = REQUIRED_BANDS + ("texture",)


@dataclass
class Stroke:
    class_name: str  # urban | mining | negative
    points: list[tuple[float, float]]  # (row, col) or (lon, lat) per coord_space
    width_px: int = 1
    kind: str = "line"  # line | polygon
    coord_space: str = "pixel"  # pixel | geo


@dataclass
class ScribbleSet:
    scene_id: str
    strokes: list[Stroke]

    def to_geojson(self) -> dict:
        features = []
        for s in self.strokes:
            if s.coord_space == "pixel":
                # GeoJSON positions are (x, y): column then row
                coords = [[float(c), float(r)] for r, c in s.points]
            else:
                coords = [[float(lon), float(lat)] for lon, lat in s.points]
            geometry = {
                "type": "Polygon" if s.kind == "polygon" else "LineString",
                "coordinates": [coords] if s.kind == "polygon" else coords,
            }
            features.append(
                {
                    "type": "Feature",
                    "geometry": geometry,
                    "properties": {
                        "class": s.class_name,
                        "width_px": s.width_px,
                        "coord_space": s.coord_space,
                    },
                }
            )
        return {
            "type": "FeatureCollection",
            "features": features,
            "properties": {"scene_id": self.scene_id},
        }

    @classmethod
    def from_geojson(cls, doc: dict, scene_id: str | None = None) -> "ScribbleSet":
        strokes = []
        for feature in doc.get("features", []):
            props = feature.get("properties", {})
            geom = feature.get("geometry", {})
            kind = "polygon" if geom.get("type") == "Polygon" else "line"
            raw = geom.get("coordinates", [])
            coords = raw[0] if kind == "polygon" else raw
            space = props.get("coord_space", "pixel")
            if space == "pixel":
                points = [(float(y), float(x)) for x, y in coords]
            else:
                points = [(float(lon), float(lat)) for lon, lat in coords]
            strokes.append(
                Stroke(
                    class_name=props["class"],
                    points=points,
                    width_px=int(props.get("width_px", 1)),
                    kind=kind,
                    coord_space=space,
                )
            )
        sid = scene_id or doc.get("properties", {}).get("scene_id", "")
        return cls(scene_id=sid, strokes=strokes)


@dataclass
class FeatureStack:
    """Per-pixel 11-vector: 10 band reflectances plus local brightness std."""

    features: np.ndarray  # (H, W, 11) float64
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass
class Standardization:
    mean: np.ndarray  # (11,)
    std: np.ndarray  # (11,); zero-variance features forced to 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class CentroidModel:
    centroids: dict[str, np.ndarray]  # class -> (11,) standardized vector
    stats: Standardization
    trained_on: list[str]
    version: str = "1"

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "feature_names": list(FEATURE_NAMES),
                "trained_on": self.trained_on,
                "stats": {"mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()},
                "centroids": {k: v.tolist() for k, v in self.centroids.items()},
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CentroidModel":
        doc = json.loads(text)
        if doc.get("feature_names") != list(FEATURE_NAMES):
            raise ModelMismatch("model feature ordering differs from this build")
        return cls(
            centroids={k: np.asarray(v, dtype=np.float64) for k, v in doc["centroids"].items()},
            stats=Standardization(
                mean=np.asarray(doc["stats"]["mean"], dtype=np.float64),
                std=np.asarray(doc["stats"]["std"], dtype=np.float64),
            ),
            trained_on=list(doc.get("trained_on", [])),
            version=str(doc.get("version", "1")),
        )


@dataclass
class UdmParams:
    ndvi_gate: float = 0.4
    min_area_px: int = 9
    max_area_px: int = 1_000_000
    distance_margin: float = 0.0
    morphology_radius: int = 1

    def __post_init__(self):
        if self.min_area_px > self.max_area_px:
            raise ValueError("min_area_px must be <= max_area_px")


@dataclass
class Component:
    label: str
    area_px: int
    bbox: tuple[int, int, int, int]  # (row_min, col_min, row_max, col_max) inclusive

    def to_dict(self) -> dict:
        return {"label": self.label, "area_px": self.area_px, "bbox": list(self.bbox)}


@dataclass
class LabelRaster:
    labels: np.ndarray  # (H, W) uint8 per LABEL_CODES
    components: list[Component] = field(default_factory=list)

    def summary(self) -> dict:
        per_class = {c: 0 for c in POSITIVE_CLASSES}
        for comp in self.components:
            per_class[comp.label] += 1
        return {
            "components": [c.to_dict() for c in self.components],
            "counts": per_class,
            "labeled_px": int((self.labels > 0).sum()),
        }


# ------------------------------------------------------------------ features


def extract_features(cube: SceneCube, texture_window: int = 5) -> FeatureStack:
    """Band reflectances plus windowed std of the (B04, B03, B02) brightness mean.

    Window statistics count only in-bounds, unmasked pixels, so borders use the
    truncated neighborhood. Masked pixels and pixels with a fully masked
    neighborhood have invalid features.
    """
    if texture_window < 3 or texture_window % 2 == 0:
        raise ValueError("texture_window must be an odd integer >= 3")
    for name in REQUIRED_BANDS:
        if name not in cube.bands:
            raise MissingBand(name)

    h, w = cube.shape
    valid = ~cube.nodata_mask
    brightness = (cube.band("B04") + cube.band("B03") + cube.band("B02")) / 3.0
    bz = np.where(valid, brightness, 0.0)

    kernel = np.ones((texture_window, texture_window))
    count = ndimage.convolve(valid.astype(np.float64), kernel, mode="constant", cval=0.0)
    total = ndimage.convolve(bz, kernel, mode="constant", cval=0.0)
    total_sq = ndimage.convolve(bz * bz, kernel, mode="constant", cval=0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / count
        mean_sq = total_sq / count
        var = mean_sq - mean * mean
        # cancellation noise on locally constant input must not masquerade
        # as texture; anything below float precision of the magnitudes is 0
        var[var < 16 * np.finfo(np.float64).eps * np.abs(mean_sq)] = 0.0
    texture = np.sqrt(np.clip(var, 0.0, None))
    texture[count == 0] = np.nan

    features = np.empty((h, w, len(FEATURE_NAMES)), dtype=np.float64)
    for i, name in enumerate(REQUIRED_BANDS):
        features[..., i] = cube.band(name)
    features[..., -1] = texture

    feature_valid = valid & (count > 0)
    features[~feature_valid] = np.nan
    return FeatureStack(features=features, valid=feature_valid)


# ----------------------------------------------------------------- scribbles


@dataclass
class RasterizeResult:
    samples: list[tuple[tuple[int, int], str]]
    conflict_px: int
    masked_px: int


def _stroke_mask(stroke: Stroke, cube: SceneCube) -> np.ndarray:
    h, w = cube.shape
    if stroke.coord_space == "geo":
        points = [cube.geo.lonlat_to_pixel(lon, lat) for lon, lat in stroke.points]
    else:
        points = [(float(r), float(c)) for r, c in stroke.points]

    mask = np.zeros((h, w), dtype=bool)
    rounded = [(int(round(r)), int(round(c))) for r, c in points]
    if stroke.kind == "polygon":
        rr, cc = draw.polygon([p[0] for p in rounded], [p[1] for p in rounded], shape=(h, w))
        mask[rr, cc] = True
        # polygon() excludes most of the outline; stamp the boundary too
        for (r0, c0), (r1, c1) in zip(rounded, rounded[1:] + rounded[:1]):
            rr, cc = draw.line(r0, c0, r1, c1)
            keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            mask[rr[keep], cc[keep]] = True
    elif len(rounded) == 1:
        r0, c0 = rounded[0]
        if 0 <= r0 < h and 0 <= c0 < w:
            mask[r0, c0] = True
    else:
        for (r0, c0), (r1, c1) in zip(rounded, rounded[1:]):
            rr, cc = draw.line(r0, c0, r1, c1)
            keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            mask[rr[keep], cc[keep]] = True

    radius = max(stroke.width_px, 1) // 2
    if radius > 0 and mask.any():
        mask = ndimage.binary_dilation(mask, structure=np.ones((2 * radius + 1, 2 * radius + 1)))
    return mask


def rasterize_scribbles(scribbles: ScribbleSet, cube: SceneCube) -> RasterizeResult:
    """Burn strokes to pixel samples; cross-class overlaps and masked pixels drop.

    Raises OutOfExtent when a stroke covers no in-bounds pixel at all.
    """
    h, w = cube.shape
    claim: dict[str, np.ndarray] = {c: np.zeros((h, w), dtype=bool) for c in CLASSES}
    for stroke in scribbles.strokes:
        if stroke.class_name not in CLASSES:
            raise ValueError(f"unknown scribble class {stroke.class_name!r}")
        mask = _stroke_mask(stroke, cube)
        if not mask.any():
            raise OutOfExtent(f"{stroke.class_name} stroke lies outside the scene extent")
        claim[stroke.class_name] |= mask

    claimed = np.stack([claim[c] for c in CLASSES])
    conflict = claimed.sum(axis=0) > 1
    n_conflict = int(conflict.sum())
    if n_conflict:
        logger.warning("dropping %d pixels claimed by conflicting classes", n_conflict)

    usable = ~conflict & ~cube.nodata_mask
    n_masked = int((claimed.any(axis=0) & ~conflict & cube.nodata_mask).sum())

    samples: list[tuple[tuple[int, int], str]] = []
    for class_name in CLASSES:
        rows, cols = np.nonzero(claim[class_name] & usable)
        samples.extend(((int(r), int(c)), class_name) for r, c in zip(rows, cols))
    return RasterizeResult(samples=samples, conflict_px=n_conflict, masked_px=n_masked)


# ------------------------------------------------------------------ training


def train(
    features: FeatureStack,
    samples: list[tuple[tuple[int, int], str]],
    *,
    scene_ids: list[str] | None = None,
) -> CentroidModel:
    """Fit per-class centroids in feature space standardized over all samples."""
    by_class: dict[str, list[np.ndarray]] = {c: [] for c in CLASSES}
    pooled = []
    for (r, c), class_name in samples:
        if not features.valid[r, c]:
            continue
        vec = features.features[r, c]
        by_class[class_name].append(vec)
        pooled.append(vec)
    for class_name in POSITIVE_CLASSES:
        if not by_class[class_name]:
            raise InsufficientSamples(class_name)
    if not by_class["negative"]:
        logger.info("training without negative samples; veto disabled")

    pooled_arr = np.asarray(pooled, dtype=np.float64)
    mean = pooled_arr.mean(axis=0)
    std = pooled_arr.std(axis=0, ddof=0)
    std[std == 0] = 1.0  # degenerate feature: leave it centered but unscaled
    stats = Standardization(mean=mean, std=std)

    centroids = {}
    for class_name, vecs in by_class.items():
        if vecs:
            centroids[class_name] = stats.apply(np.asarray(vecs, dtype=np.float64)).mean(axis=0)
    return CentroidModel(centroids=centroids, stats=stats, trained_on=scene_ids or [])


# -------------------------------------------------------------- classification


def classify(
    features: FeatureStack,
    model: CentroidModel,
    ndvi: IndexRaster,
    params: UdmParams,
) -> LabelRaster:
    """Nearest-centroid labels with negative veto and NDVI gating.

    A pixel is vetoed to background unless its best positive centroid beats the
    negative centroid by more than ``distance_margin`` (ties go to background).
    Valid NDVI above the gate forces background, as do invalid features.
    """
    h, w = features.shape
    n_features = features.features.shape[-1]
    if model.stats.mean.shape[0] != n_features:
        raise ModelMismatch(
            f"model expects {model.stats.mean.shape[0]} features, stack has {n_features}"
        )
    if ndvi.shape != (h, w):
        raise ModelMismatch("NDVI raster shape differs from the feature stack")

    flat = features.features.reshape(-1, n_features)
    ok = features.valid.reshape(-1)
    z = np.zeros_like(flat)
    z[ok] = model.stats.apply(flat[ok])

    dist = {}
    for class_name, centroid in model.centroids.items():
        delta = z - centroid[None, :]
        dist[class_name] = np.sqrt((delta * delta).sum(axis=1))

    d_urban = dist.get("urban", np.full(h * w, np.inf))
    d_mining = dist.get("mining", np.full(h * w, np.inf))
    best_pos = np.minimum(d_urban, d_mining)

    labels = np.where(d_urban <= d_mining, LABEL_CODES["urban"], LABEL_CODES["mining"])
    if "negative" in model.centroids:
        vetoed = best_pos >= dist["negative"] - params.distance_margin
        labels[vetoed] = LABEL_CODES["background"]
    labels[~ok] = LABEL_CODES["background"]

    labels = labels.reshape(h, w).astype(np.uint8)
    gated = ndvi.valid & (ndvi.values > params.ndvi_gate)
    labels[gated] = LABEL_CODES["background"]
    return LabelRaster(labels=labels)


def postprocess(label_raster: LabelRaster, params: UdmParams) -> LabelRaster:
    """Binary opening per class, then 8-connected component area filtering.

    Never adds a labeled pixel; every surviving component's area lies in
    [min_area_px, max_area_px].
    """
    labels = label_raster.labels
    out = np.zeros_like(labels)
    components: list[Component] = []
    eight = np.ones((3, 3), dtype=int)
    for class_name in POSITIVE_CLASSES:
        mask = labels == LABEL_CODES[class_name]
        if params.morphology_radius > 0:
            side = 2 * params.morphology_radius + 1
            mask = ndimage.binary_opening(mask, structure=np.ones((side, side)))
        labeled, n = ndimage.label(mask, structure=eight)
        for idx in range(1, n + 1):
            blob = labeled == idx
            area = int(blob.sum())
            if area < params.min_area_px or area > params.max_area_px:
                continue
            rows, cols = np.nonzero(blob)
            out[blob] = LABEL_CODES[class_name]
            components.append(
                Component(
                    label=class_name,
                    area_px=area,
                    bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
                )
            )
    components.sort(key=lambda c: (-c.area_px, c.label))
    return LabelRaster(labels=out, components=components)
