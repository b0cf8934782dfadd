"""Choosing the sharpest capture out of three imperfect candidates.

Three synthetic captures of the same site: a crisp one with real surface
structure, a hazy one where everything smears into a gradient, and one with
a zero-filled swath gap down the right edge. The ranking should keep the
crisp scene on top and throw the gap-ridden one out before scoring.

Run:  python3 demos/01_scene_quality.py
"""

from datetime import date

import numpy as np

from minelens.geo import GeoTransform
from minelens.raster import (
    REQUIRED_BANDS,
    SceneCube,
    quality_metrics,
    rank_details,
    render_rgb,
)

# nominal surface reflectances per band family
GROUND = {b: 0.06 for b in REQUIRED_BANDS}
PIT = {b: 0.25 for b in REQUIRED_BANDS}


def cube_from(grids: dict[str, np.ndarray], scene_id: str, captured: date) -> SceneCube:
    mask = np.all(np.stack([g == 0 for g in grids.values()]), axis=0)
    return SceneCube(
        scene_id=scene_id,
        bands=grids,
        geo=GeoTransform(132.91, -12.66, 10.0),
        nodata_mask=mask,
        capture_date=captured,
    )


def crisp_scene() -> SceneCube:
    rng = np.random.default_rng(1)
    grids = {}
    for band in REQUIRED_BANDS:
        g = np.full((96, 96), GROUND[band])
        g[20:60, 15:55] = PIT[band]  # a bright excavation block
        g += rng.normal(0.0, 0.01, g.shape)  # fine texture
        grids[band] = g.clip(0.001, 1.0)
    return cube_from(grids, "capture-crisp", date(2024, 11, 20))


def hazy_scene() -> SceneCube:
    ramp = np.linspace(0.05, 0.20, 96)[None, :].repeat(96, axis=0)
    grids = {band: ramp.copy() for band in REQUIRED_BANDS}
    return cube_from(grids, "capture-hazy", date(2024, 12, 5))


def gappy_scene() -> SceneCube:
    base = crisp_scene()
    grids = {}
    for band, g in base.bands.items():
        g = g.copy()
        g[:, 80:] = 0.0  # orbital swath edge: all bands zero
        grids[band] = g
    return cube_from(grids, "capture-gapped", date(2024, 12, 10))


def main() -> None:
    reports = []
    for cube in (crisp_scene(), hazy_scene(), gappy_scene()):
        render = render_rgb(cube)
        rep = quality_metrics(
            render, cube.nodata_mask, scene_id=cube.scene_id, capture_date=cube.capture_date
        )
        reports.append(rep)
        print(
            f"{rep.scene_id:16s} contrast={rep.contrast:7.2f} "
            f"sharpness={rep.sharpness:9.1f} entropy={rep.entropy_bits:5.2f} bits "
            f"nodata={rep.nodata_fraction:4.0%} gap={rep.swath_gap}"
        )

    ranked = rank_details(reports)
    print("\nranking (gap-flagged scenes never reach scoring):")
    for ordinal, rep in enumerate(ranked, start=1):
        print(f"  {ordinal}. {rep.scene_id}  composite={rep.composite_score:.3f}")
    print(f"\nchosen capture: {ranked[0].scene_id}")


if __name__ == "__main__":
    main()
