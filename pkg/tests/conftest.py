"""Shared synthetic scenes and fixture worlds for the test suite.

Scene builders produce small Sentinel-2 style cubes with controlled band
spectra so index values, cluster separations, and nodata geometry are known
by construction. build_world() lays out a complete offline data root
(sites, catalogs, scene files, dossiers, documents) for pipeline, service,
and end-to-end tests.
"""

from __future__ import annotations

import json
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from minelens.geo import GeoTransform
from minelens.raster import REQUIRED_BANDS, SceneCube, save_scene
from minelens.sites import Dossier, Registry, SiteRecord
from minelens.udm import ScribbleSet, Stroke

# Plausible mid-range surface reflectances, one value per band. All values
# are multiples of 1e-4 so the uint16 digital-number round trip is exact.
BASE_SPECTRUM = {
    "B02": 0.06, "B03": 0.08, "B04": 0.10, "B05": 0.14, "B06": 0.18,
    "B07": 0.20, "B08": 0.24, "B8A": 0.25, "B11": 0.20, "B12": 0.16,
}
# Dense canopy: strong NIR, weak red. NDVI = 0.40/0.50 = 0.8, well over the gate.
VEGETATION = {
    **BASE_SPECTRUM, "B02": 0.03, "B03": 0.05, "B04": 0.05,
    "B08": 0.45, "B8A": 0.46, "B11": 0.12, "B12": 0.08,
}
# Bright bare pit floor: red == NIR (NDVI 0), strong SWIR (high FMI).
MINING = {
    **BASE_SPECTRUM, "B02": 0.22, "B03": 0.26, "B04": 0.30,
    "B08": 0.30, "B8A": 0.31, "B11": 0.45, "B12": 0.40,
}
# Built fabric: moderate visible, NIR == red, SWIR above NIR.
URBAN = {
    **BASE_SPECTRUM, "B02": 0.18, "B03": 0.20, "B04": 0.22,
    "B08": 0.22, "B8A": 0.23, "B11": 0.30, "B12": 0.26,
}
# Bare weathered ground: low NDVI, spectrally between urban and mining.
BARREN = {
    **BASE_SPECTRUM, "B02": 0.06, "B03": 0.08, "B04": 0.18,
    "B08": 0.22, "B8A": 0.23, "B11": 0.34, "B12": 0.30,
}


def spectrum_cube(
    scene_id: str = "scene-a",
    h: int = 48,
    w: int = 48,
    *,
    spectrum: dict[str, float] | None = None,
    noise: float = 0.0,
    seed: int = 42,
    zero_cols: tuple[int, ...] = (),
    capture: date = date(2024, 6, 1),
    origin: tuple[float, float] = (132.91, -12.66),
) -> SceneCube:
    """Uniform-spectrum cube with optional per-band noise and nodata columns."""
    rng = np.random.default_rng(seed)
    spectrum = spectrum or BASE_SPECTRUM
    bands = {}
    for name in REQUIRED_BANDS:
        grid = np.full((h, w), spectrum[name], dtype=np.float64)
        if noise:
            # keep strictly positive so no valid pixel aliases the nodata sentinel
            grid = (grid + rng.normal(0.0, noise, (h, w))).clip(0.0005, 1.0)
        for c in zero_cols:
            grid[:, c] = 0.0
        bands[name] = grid
    mask = np.zeros((h, w), dtype=bool)
    for c in zero_cols:
        mask[:, c] = True
    return SceneCube(
        scene_id=scene_id,
        bands=bands,
        geo=GeoTransform(origin[0], origin[1], 10.0),
        nodata_mask=mask,
        capture_date=capture,
    )


# Region layout of the clustered scene (row/col slices on a 96x96 grid).
MINING_BLOCK = (slice(20, 60), slice(10, 50))
URBAN_BLOCK = (slice(70, 89), slice(58, 86))
SETTLEMENT_BLOCK = (slice(6, 11), slice(68, 73))  # 5x5, small but above min_area
ROAD_ROW = 64
ROAD_COLS = slice(0, 90)


def clustered_scene(
    scene_id: str = "scene-a",
    *,
    noise: float = 0.003,
    seed: int = 7,
    swath_cols: int = 0,
    capture: date = date(2024, 11, 20),
) -> tuple[SceneCube, np.ndarray]:
    """96x96 scene: vegetation background, one mining block, two urban blocks
    (one small settlement), a one-pixel urban-spectrum road, optional zero
    swath on the right edge. Returns the cube and the per-pixel truth labels
    (0 background, 1 urban, 2 mining); masked pixels are 0 in the truth grid.

    Cluster noise is tiny relative to the band offsets between spectra, so
    inter-centroid distances sit far above 10 cluster standard deviations.
    """
    h = w = 96
    rng = np.random.default_rng(seed)
    truth = np.zeros((h, w), dtype=np.uint8)
    truth[MINING_BLOCK] = 2
    truth[URBAN_BLOCK] = 1
    truth[SETTLEMENT_BLOCK] = 1
    truth[ROAD_ROW, ROAD_COLS] = 1

    # built and mined surfaces carry fine-grained brightness variation in the
    # visible bands (street grids, benches), so their local texture is high;
    # vegetation stays smooth
    speckle = rng.normal(0.0, 0.04, (h, w))
    bands = {}
    for name in REQUIRED_BANDS:
        grid = np.full((h, w), VEGETATION[name], dtype=np.float64)
        grid[truth == 2] = MINING[name]
        grid[truth == 1] = URBAN[name]
        if name in ("B02", "B03", "B04"):
            grid = grid + np.where(truth > 0, speckle, 0.0)
        if noise:
            grid = grid + rng.normal(0.0, noise, (h, w))
        grid = grid.clip(0.0005, 1.0)
        if swath_cols:
            grid[:, w - swath_cols:] = 0.0
        bands[name] = grid
    mask = np.zeros((h, w), dtype=bool)
    if swath_cols:
        mask[:, w - swath_cols:] = True
        truth[mask] = 0
    cube = SceneCube(
        scene_id=scene_id,
        bands=bands,
        geo=GeoTransform(132.91, -12.66, 10.0),
        nodata_mask=mask,
        capture_date=capture,
    )
    return cube, truth


def training_scribbles(scene_id: str = "scene-a") -> ScribbleSet:
    """One stroke per class, each drawn well inside its region interior."""
    return ScribbleSet(
        scene_id=scene_id,
        strokes=[
            Stroke(class_name="mining", points=[(40, 15), (40, 45)]),
            Stroke(class_name="urban", points=[(78, 62), (78, 82)]),
            Stroke(class_name="negative", points=[(2, 2), (2, 40)]),
        ],
    )


def three_block_scene(
    seed: int = 11, noise: float = 0.003
) -> tuple[SceneCube, np.ndarray, ScribbleSet]:
    """Three well-separated Gaussian spectral clusters on a masked canvas.

    Each cluster fills one block; everything else is nodata, so no valid
    window mixes clusters and the per-band offsets between cluster means
    (>= 0.04) dwarf the cluster noise by far more than 10x. Returns the cube,
    the truth grid (0 background/barren, 1 urban, 2 mining), and one training
    stroke per class.
    """
    h = w = 90
    rng = np.random.default_rng(seed)
    blocks = {
        "mining": (slice(5, 35), slice(5, 35)),
        "urban": (slice(5, 35), slice(55, 85)),
        "barren": (slice(55, 85), slice(5, 35)),
    }
    spectra = {"mining": MINING, "urban": URBAN, "barren": BARREN}
    truth = np.zeros((h, w), dtype=np.uint8)
    truth[blocks["mining"]] = 2
    truth[blocks["urban"]] = 1

    inside = np.zeros((h, w), dtype=bool)
    for sl in blocks.values():
        inside[sl] = True
    bands = {}
    for name in REQUIRED_BANDS:
        grid = np.zeros((h, w), dtype=np.float64)
        for cls, sl in blocks.items():
            block = np.full((30, 30), spectra[cls][name])
            grid[sl] = (block + rng.normal(0.0, noise, (30, 30))).clip(0.0005, 1.0)
        bands[name] = grid
    cube = SceneCube(
        scene_id="clusters",
        bands=bands,
        geo=GeoTransform(132.91, -12.66, 10.0),
        nodata_mask=~inside,
        capture_date=date(2024, 11, 20),
    )
    scribbles = ScribbleSet(
        scene_id="clusters",
        strokes=[
            Stroke(class_name="mining", points=[(20, 8), (20, 30)]),
            Stroke(class_name="urban", points=[(20, 58), (20, 80)]),
            Stroke(class_name="negative", points=[(70, 8), (70, 30)]),
        ],
    )
    return cube, truth, scribbles


def write_scene(cube: SceneCube, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{cube.scene_id}.tif"
    save_scene(cube, path)
    return path


def dossier_for(site_id: str, *, sparse: bool = False) -> Dossier:
    history = (
        "Open cut operations began in the late 1960s after exploration drilling "
        "confirmed the orebody, and production expanded through two decades of "
        "staged pit cutbacks before rehabilitation planning started."
    )
    geology = (
        "The deposit sits in unconformity-related host rocks where sandstone "
        "cover overlies altered schist; ore grades concentrate along the "
        "contact and weathering extends tens of metres below surface."
    )
    controversies = (
        "" if sparse else
        "Traditional owners disputed royalty distribution under the original "
        "agreement, and monitoring bodies reported elevated sulfate in "
        "downstream billabongs after wet season discharge from the tailings dam."
    )
    return Dossier(
        site_id=site_id,
        history=history,
        geology=geology,
        controversies=controversies,
        sources=["site-archive"],
        sparse_flag=sparse,
    )


# A small multi-section review document with page sentinels, used to exercise
# the hierarchical document path end to end. The agreement section is long
# enough to split into more than one chunk.
WORLD_DOC = (
    "[[page:1]]# Northern Mining Review\n"
    "This review surveys water impacts and agreement making across mining "
    "provinces in northern Australia, drawing on monitoring reports and "
    "published agreements.\n"
    "[[page:3]]# Water and Tailings\n"
    "Acid drainage from legacy tailings storage reaches floodplain billabongs "
    "during intense wet season flow. Sulfate and magnesium plumes move with "
    "groundwater, and uranium mobility increases where acid neutralising "
    "capacity is exhausted. Revegetated waste rock reduces infiltration but "
    "monitoring bores still record seasonal spikes downstream of the oldest "
    "cells.\n"
    "[[page:178]]# Agreement Making\n"
    + (
        "Royalty distribution under the ranger style agreements channels "
        "payments through regional trusts toward outstations, education, and "
        "vehicle purchases, while mining companies report the spend as "
        "community benefit. Negotiated employment clauses promise training "
        "positions yet quarterly reviews show placement rates lagging the "
        "agreed schedule. " * 4
    )
    + "\n"
)


AUSTRALIA_SITES = (
    ("ElliotsNo1OpenCut", "Elliots No 1 Open Cut", -12.66, 132.91, ["uranium"]),
    ("Endeavour22", "Endeavour 22", -31.92, 141.45, ["silver", "zinc"]),
    ("CentralNorthOpenPit", "Central North Open Pit", -20.73, 139.49, ["copper"]),
)


def build_world(root: Path, *, sites=AUSTRALIA_SITES) -> dict:
    """Offline data root: registry sites, catalog fixtures, scene rasters,
    dossiers, and one hierarchical document. Catalog dates fall inside the
    default horizon window for every site latitude used here."""
    root.mkdir(parents=True, exist_ok=True)
    registry = Registry(root)
    scenes_dir = root / "scenes"
    catalog_dir = root / "catalog"
    catalog_dir.mkdir(exist_ok=True)

    scene_ids: dict[str, list[str]] = {}
    for i, (site_id, name, lat, lon, commodity) in enumerate(sites):
        registry.save_site(
            SiteRecord(site_id=site_id, name=name, country="Australia",
                       lat=lat, lon=lon, commodity=commodity)
        )
        # scene a: structured clusters (sharp, high contrast, ranks first)
        # scene b: smooth gradient, almost no high-frequency detail; the
        #   percentile stretch gives it entropy but a keeps contrast+sharpness
        # scene c: over the cloud cap, filtered before ranking
        a, b, c = (f"{site_id}-{suffix}" for suffix in ("a", "b", "c"))
        cube_a, _ = clustered_scene(a, seed=7 + i, capture=date(2024, 11, 20))
        cube_b = spectrum_cube(b, 96, 96, noise=0.0005, seed=30 + i,
                               capture=date(2024, 12, 5))
        ramp = np.linspace(0.0, 0.25, 96)[None, :]
        for band in list(cube_b.bands):
            cube_b.bands[band] = np.clip(cube_b.bands[band] + ramp, 0.0005, 1.0)
        write_scene(cube_a, scenes_dir)
        write_scene(cube_b, scenes_dir)
        catalog = [
            {"scene_id": a, "capture_date": "2024-11-20", "cloud_pct": 3.0,
             "download_ref": f"fixture://{a}"},
            {"scene_id": b, "capture_date": "2024-12-05", "cloud_pct": 8.0,
             "download_ref": f"fixture://{b}"},
            {"scene_id": c, "capture_date": "2024-12-10", "cloud_pct": 45.0,
             "download_ref": f"fixture://{c}"},
        ]
        (catalog_dir / f"{site_id}.json").write_text(json.dumps(catalog, indent=2))
        registry.save_dossier(dossier_for(site_id, sparse=(site_id == "CentralNorthOpenPit")))
        scene_ids[site_id] = [a, b, c]

    docs_dir = root / "docs"
    docs_dir.mkdir(exist_ok=True)
    (docs_dir / "northern_mining_review.txt").write_text(WORLD_DOC)

    return {
        "root": root,
        "registry": registry,
        "site_ids": [s[0] for s in sites],
        "scene_ids": scene_ids,
        "doc_names": ["northern_mining_review.txt"],
    }


@pytest.fixture
def world(tmp_path):
    return build_world(tmp_path / "data")
