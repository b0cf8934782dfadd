"""Band math over a half-vegetated, half-excavated scene.

NDVI should light up the vegetated west half, NDBI and the ferrous ratio the
disturbed east half. The script prints per-region index means and writes the
color renders plus float32 GeoTIFFs under demo_output/.

Run:  python3 demos/02_spectral_indices.py
"""

from datetime import date
from pathlib import Path

import numpy as np

from minelens.geo import GeoTransform
from minelens.indices import fmi, ndbi, ndvi, save_index, save_index_png
from minelens.raster import REQUIRED_BANDS, SceneCube, render_rgb

# vegetation is NIR-bright; the worked pit face is SWIR-bright
VEGETATION = {
    "B02": 0.04, "B03": 0.06, "B04": 0.04, "B05": 0.10, "B06": 0.25,
    "B07": 0.32, "B08": 0.38, "B8A": 0.40, "B11": 0.16, "B12": 0.08,
}
PIT_FACE = {
    "B02": 0.18, "B03": 0.20, "B04": 0.24, "B05": 0.26, "B06": 0.27,
    "B07": 0.28, "B08": 0.28, "B8A": 0.29, "B11": 0.42, "B12": 0.38,
}


def demo_scene() -> SceneCube:
    rng = np.random.default_rng(2)
    h = w = 80
    grids = {}
    for band in REQUIRED_BANDS:
        g = np.full((h, w), VEGETATION[band])
        g[:, w // 2 :] = PIT_FACE[band]
        g += rng.normal(0.0, 0.004, (h, w))
        grids[band] = g.clip(0.001, 1.0)
    return SceneCube(
        scene_id="index-demo",
        bands=grids,
        geo=GeoTransform(132.91, -12.66, 10.0),
        nodata_mask=np.zeros((h, w), dtype=bool),
        capture_date=date(2024, 11, 20),
    )


def main() -> None:
    cube = demo_scene()
    west = np.s_[:, :40]
    east = np.s_[:, 40:]

    out = Path("demo_output")
    out.mkdir(exist_ok=True)
    render_rgb(cube).save_png(out / "scene_rgb.png")

    for raster in (ndvi(cube), ndbi(cube), fmi(cube)):
        name = raster.kind.value
        print(
            f"{name}: vegetated half mean={raster.values[west].mean():+.3f}  "
            f"excavated half mean={raster.values[east].mean():+.3f}"
        )
        save_index(raster, out / f"{name.lower()}.tif")
        save_index_png(raster, out / f"{name.lower()}.png")

    print(f"\nwrote renders and GeoTIFFs to {out}/")
    print("expected shape: NDVI high west; NDBI and the ferrous ratio high east")


if __name__ == "__main__":
    main()
