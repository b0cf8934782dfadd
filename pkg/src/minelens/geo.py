"""Georeferencing helpers: pixel/degree conversions on an equirectangular model.

The whole package works at the ~10 km scale of a single mining site, where an
equirectangular approximation (METERS_PER_DEGREE at the equator, scaled by
cos(latitude) in longitude) stays well under 0.5% error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

METERS_PER_DEGREE = 111_320.0


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine georeference: top-left corner in degrees, square pixels in meters."""

    origin_lon: float
    origin_lat: float
    pixel_size_m: float

    def pixel_to_lonlat(self, row: float, col: float) -> tuple[float, float]:
        lat = self.origin_lat - row * self.pixel_size_m / METERS_PER_DEGREE
        lon = self.origin_lon + col * self.pixel_size_m / (
            METERS_PER_DEGREE * math.cos(math.radians(self.origin_lat))
        )
        return lon, lat

    def lonlat_to_pixel(self, lon: float, lat: float) -> tuple[float, float]:
        row = (self.origin_lat - lat) * METERS_PER_DEGREE / self.pixel_size_m
        col = (
            (lon - self.origin_lon)
            * METERS_PER_DEGREE
            * math.cos(math.radians(self.origin_lat))
            / self.pixel_size_m
        )
        return row, col

    def to_dict(self) -> dict:
        return {
            "origin_lon": self.origin_lon,
            "origin_lat": self.origin_lat,
            "pixel_size_m": self.pixel_size_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeoTransform":
        return cls(
            origin_lon=float(d["origin_lon"]),
            origin_lat=float(d["origin_lat"]),
            pixel_size_m=float(d["pixel_size_m"]),
        )
