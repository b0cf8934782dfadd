"""Mining-site registry: records, query geometry, date windows, dossiers.

Sites live as one JSON document each under ``sites/``, dossiers under
``dossiers/``. Reads are lock-free; mutations are serialized through the
registry lock and validated against the review state machine, so a stale
writer gets a StatusTransitionError instead of silently clobbering progress.
"""

from __future__ import annotations

import calendar
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import date, timedelta
from math import cos, radians
from pathlib import Path
from typing import Callable, Protocol

from .errors import (
    CatalogUnavailable,
    EmptyDossier,
    SegmentTooLong,
    StatusTransitionError,
    UnsupportedLatitude,
)
from .geo import METERS_PER_DEGREE

logger = logging.getLogger(__name__)

STATUS_ORDER = ("new", "scened", "annotated", "captioned", "accepted")
SKIPPABLE = {"annotated"}  # classifier stage is optional in the pipeline
BOX_HALF_WIDTH_M = 5_000.0
POLAR_LAT_LIMIT = 85.0
TROPIC_LAT = 23.5
NORTHERN_MONTHS = frozenset({5, 6, 7, 8, 9})
SOUTHERN_MONTHS = frozenset({11, 12, 1, 2, 3})
LOOKBACK_MONTHS = 18
DEFAULT_MAX_CLOUD_PCT = 20.0
SEGMENT_WORD_CAP = 300


@dataclass
class SiteRecord:
    site_id: str
    name: str
    country: str
    lat: float
    lon: float
    commodity: list[str] = field(default_factory=list)
    status: str = "new"

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range")
        if self.status not in STATUS_ORDER:
            raise ValueError(f"unknown status {self.status!r}")

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "name": self.name,
            "country": self.country,
            "lat": self.lat,
            "lon": self.lon,
            "commodity": list(self.commodity),
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SiteRecord":
        return cls(
            site_id=doc["site_id"],
            name=doc["name"],
            country=doc["country"],
            lat=float(doc["lat"]),
            lon=float(doc["lon"]),
            commodity=list(doc.get("commodity", [])),
            status=doc.get("status", "new"),
        )


@dataclass(frozen=True)
class GeoBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def contains(self, lon: float, lat: float) -> bool:
        return self.min_lon <= lon <= self.max_lon and self.min_lat <= lat <= self.max_lat

    def area_km2(self) -> float:
        """Box area under the same flat-earth model used to construct it."""
        mid_lat = 0.5 * (self.min_lat + self.max_lat)
        width_m = (self.max_lon - self.min_lon) * METERS_PER_DEGREE * cos(radians(mid_lat))
        height_m = (self.max_lat - self.min_lat) * METERS_PER_DEGREE
        return width_m * height_m / 1e6


@dataclass(frozen=True)
class DateWindow:
    months: frozenset[int]
    earliest: date
    latest: date
    max_cloud_pct: float
    horizon: date

    def admits(self, capture: date) -> bool:
        return self.earliest <= capture <= self.latest and capture.month in self.months


@dataclass
class Dossier:
    site_id: str
    history: str = ""
    geology: str = ""
    controversies: str = ""
    sources: list[str] = field(default_factory=list)
    sparse_flag: bool = False

    SEGMENTS = ("history", "geology", "controversies")

    def segments(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in self.SEGMENTS}

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "history": self.history,
            "geology": self.geology,
            "controversies": self.controversies,
            "sources": list(self.sources),
            "sparse_flag": self.sparse_flag,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Dossier":
        return cls(
            site_id=doc["site_id"],
            history=doc.get("history", ""),
            geology=doc.get("geology", ""),
            controversies=doc.get("controversies", ""),
            sources=list(doc.get("sources", [])),
            sparse_flag=bool(doc.get("sparse_flag", False)),
        )


@dataclass(frozen=True)
class SceneCandidate:
    scene_id: str
    capture_date: date
    cloud_pct: float
    download_ref: str

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneCandidate":
        return cls(
            scene_id=doc["scene_id"],
            capture_date=date.fromisoformat(doc["capture_date"]),
            cloud_pct=float(doc["cloud_pct"]),
            download_ref=doc.get("download_ref", ""),
        )


# ----------------------------------------------------------------- geometry


def bbox_for(site: SiteRecord) -> GeoBox:
    """10 km x 10 km box centered on the site; rejects near-polar latitudes."""
    if abs(site.lat) >= POLAR_LAT_LIMIT:
        raise UnsupportedLatitude(f"latitude {site.lat} too close to the pole")
    half_lat = BOX_HALF_WIDTH_M / METERS_PER_DEGREE
    half_lon = BOX_HALF_WIDTH_M / (METERS_PER_DEGREE * cos(radians(site.lat)))
    return GeoBox(
        min_lon=site.lon - half_lon,
        min_lat=site.lat - half_lat,
        max_lon=site.lon + half_lon,
        max_lat=site.lat + half_lat,
    )


def _shift_months(d: date, months: int) -> date:
    total = d.year * 12 + (d.month - 1) + months
    year, month = divmod(total, 12)
    day = min(d.day, calendar.monthrange(year, month + 1)[1])
    return date(year, month + 1, day)


def date_window(
    site: SiteRecord, horizon: date, max_cloud_pct: float = DEFAULT_MAX_CLOUD_PCT
) -> DateWindow:
    """Snow-free months per hemisphere; tropics pass all year.

    The lookback spans LOOKBACK_MONTHS before the horizon so each hemisphere's
    window appears at least once.
    """
    if site.lat > TROPIC_LAT:
        months = NORTHERN_MONTHS
    elif site.lat < -TROPIC_LAT:
        months = SOUTHERN_MONTHS
    else:
        months = frozenset(range(1, 13))
    return DateWindow(
        months=months,
        earliest=_shift_months(horizon, -LOOKBACK_MONTHS),
        latest=horizon,
        max_cloud_pct=float(max_cloud_pct),
        horizon=horizon,
    )


# ------------------------------------------------------------------ catalog


class CatalogProvider(Protocol):
    def search(self, box: GeoBox, window: DateWindow) -> list[dict]: ...


class FixtureCatalog:
    """Catalog backed by a recorded JSON array of SceneCandidate documents."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def search(self, box: GeoBox, window: DateWindow) -> list[dict]:
        try:
            return json.loads(self.path.read_text())
        except OSError as exc:
            raise CatalogUnavailable(str(exc), retryable=False) from exc


def query_catalog(
    provider: CatalogProvider,
    box: GeoBox,
    window: DateWindow,
    *,
    max_attempts: int = 3,
    sleep: Callable[[float], None] = time.sleep,
) -> list[SceneCandidate]:
    """Search, filter to the window and cloud cap, sort by cloud cover.

    Retryable provider failures get max_attempts tries with exponential
    backoff; a non-retryable failure or exhausted retries surface as
    CatalogUnavailable. An empty result is a valid answer.
    """
    last: CatalogUnavailable | None = None
    for attempt in range(max_attempts):
        try:
            raw = provider.search(box, window)
            break
        except CatalogUnavailable as exc:
            if not exc.retryable:
                raise
            last = exc
            if attempt + 1 < max_attempts:
                sleep(2**attempt)
    else:
        raise CatalogUnavailable(f"catalog failed after {max_attempts} attempts: {last}")

    candidates = [SceneCandidate.from_dict(doc) for doc in raw]
    kept = [
        c
        for c in candidates
        if window.admits(c.capture_date) and c.cloud_pct <= window.max_cloud_pct
    ]
    kept.sort(key=lambda c: (c.cloud_pct, c.capture_date, c.scene_id))
    return kept


# ----------------------------------------------------------------- dossiers


def validate_dossier(d: Dossier) -> Dossier:
    """Enforce the per-segment word cap; flag dossiers with missing segments.

    Sites in regions with little public reporting legitimately lack a
    controversies segment, so emptiness there only sets sparse_flag.
    """
    counts = {name: len(text.split()) for name, text in d.segments().items()}
    if all(n == 0 for n in counts.values()):
        raise EmptyDossier(f"dossier for {d.site_id} has no content")
    for name, n in counts.items():
        if n > SEGMENT_WORD_CAP:
            raise SegmentTooLong(name, n)
    d.sparse_flag = any(n == 0 for n in counts.values())
    return d


# ----------------------------------------------------------------- registry


def check_transition(current: str, new: str) -> None:
    """Statuses advance along STATUS_ORDER; only skippable stages may be jumped."""
    try:
        i, j = STATUS_ORDER.index(current), STATUS_ORDER.index(new)
    except ValueError as exc:
        raise StatusTransitionError(f"unknown status in {current!r} -> {new!r}") from exc
    if j <= i:
        raise StatusTransitionError(f"cannot move {current!r} -> {new!r}")
    skipped = STATUS_ORDER[i + 1 : j]
    if any(s not in SKIPPABLE for s in skipped):
        raise StatusTransitionError(f"transition {current!r} -> {new!r} skips {skipped}")


class Registry:
    """File-backed site and dossier store with serialized status mutations."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.sites_dir = self.root / "sites"
        self.dossiers_dir = self.root / "dossiers"
        self.sites_dir.mkdir(parents=True, exist_ok=True)
        self.dossiers_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _write_atomic(self, path: Path, doc: dict) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(doc, indent=2))
        tmp.replace(path)

    def save_site(self, site: SiteRecord) -> None:
        with self._lock:
            self._write_atomic(self.sites_dir / f"{site.site_id}.json", site.to_dict())

    def load_site(self, site_id: str) -> SiteRecord:
        path = self.sites_dir / f"{site_id}.json"
        if not path.exists():
            raise KeyError(f"no such site {site_id!r}")
        return SiteRecord.from_dict(json.loads(path.read_text()))

    def list_sites(self) -> list[SiteRecord]:
        records = [
            SiteRecord.from_dict(json.loads(p.read_text()))
            for p in sorted(self.sites_dir.glob("*.json"))
        ]
        return sorted(records, key=lambda s: s.site_id)

    def advance_status(self, site_id: str, new_status: str) -> SiteRecord:
        """Validated transition; reads the persisted record under the lock so
        concurrent writers cannot race each other past the state machine."""
        with self._lock:
            site = self.load_site(site_id)
            check_transition(site.status, new_status)
            site.status = new_status
            self._write_atomic(self.sites_dir / f"{site_id}.json", site.to_dict())
            logger.info("site %s -> %s", site_id, new_status)
            return site

    def save_dossier(self, dossier: Dossier) -> None:
        validate_dossier(dossier)
        with self._lock:
            self._write_atomic(self.dossiers_dir / f"{dossier.site_id}.json", dossier.to_dict())

    def load_dossier(self, site_id: str) -> Dossier:
        path = self.dossiers_dir / f"{site_id}.json"
        if not path.exists():
            raise KeyError(f"no dossier for site {site_id!r}")
        return Dossier.from_dict(json.loads(path.read_text()))

    def has_dossier(self, site_id: str) -> bool:
        return (self.dossiers_dir / f"{site_id}.json").exists()
