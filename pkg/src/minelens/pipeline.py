"""Per-site pipeline orchestration, review flow, and store synchronization.

Everything under the data root is plain files. Every artifact lands via
write-then-rename, the run journal is append-only, and stage outputs are
keyed by a run id derived from (site, chosen scene, config hash), so a rerun
with unchanged inputs finds its artifacts already present and issues no
provider calls. A fault hook lets tests kill the process between any two
writes and assert the store stays loadable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import indices as idx
from . import raster
from .agentic import CascadeParams, agentic_answer, build_hierarchy, render_source_log, save_hierarchy_map
from .captioning import (
    CaptionConfig,
    GenerationHyperparams,
    ImagePayload,
    build_prompt,
    generate_caption,
    load_exemplars,
)
from .errors import (
    InsufficientEvidence,
    MinelensError,
    NoViableScene,
    StageError,
    SyncFailed,
)
from .judge import GatePolicy, evaluate, load_rubric
from .providers import ChatProvider, MockProvider, RequestLog
from .rag import Chunk, GroundedAnswer, HashedBagEmbedder, VectorStore, chunk as chunk_text, prepend_metadata
from .sites import (
    Dossier,
    FixtureCatalog,
    Registry,
    SiteRecord,
    bbox_for,
    date_window,
    query_catalog,
)
from .udm import (
    CentroidModel,
    ScribbleSet,
    UdmParams,
    classify,
    extract_features,
    postprocess,
    rasterize_scribbles,
    train,
)

logger = logging.getLogger(__name__)

STAGES = ("catalog", "quality", "indices", "udm", "caption", "judge")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_json_atomic(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
    tmp.replace(path)


def write_bytes_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


@dataclass
class PipelineConfig:
    horizon: str = "2024-12-31"
    max_cloud_pct: float = 20.0
    gap_threshold: float = 0.05
    stretch_low: float = 2.0
    stretch_high: float = 98.0
    sat_gain: float = 1.2
    payload_arm: str = "rgb_ndvi_udm"
    word_cap: int = 250
    temperature: float = 0.2
    frequency_penalty: float = 0.3
    max_tokens: int = 400
    mean_min: float = 4.0
    dim_min: int = 3
    udm: dict = field(
        default_factory=lambda: {
            "ndvi_gate": 0.4,
            "min_area_px": 9,
            "max_area_px": 1_000_000,
            "distance_margin": 0.0,
            "morphology_radius": 1,
            "texture_window": 5,
        }
    )
    rag: dict = field(
        default_factory=lambda: {
            "chunk_size": 150,
            "overlap": 30,
            "k_sections": 2,
            "k_chunks": 4,
            "k_captions": 3,
            "sufficiency_threshold": 0.35,
            "max_refinements": 3,
            "embedder_dim": 256,
        }
    )
    provider: dict = field(default_factory=lambda: {"mode": "mock", "seed": 0})

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "max_cloud_pct": self.max_cloud_pct,
            "gap_threshold": self.gap_threshold,
            "stretch_low": self.stretch_low,
            "stretch_high": self.stretch_high,
            "sat_gain": self.sat_gain,
            "payload_arm": self.payload_arm,
            "word_cap": self.word_cap,
            "temperature": self.temperature,
            "frequency_penalty": self.frequency_penalty,
            "max_tokens": self.max_tokens,
            "mean_min": self.mean_min,
            "dim_min": self.dim_min,
            "udm": dict(self.udm),
            "rag": dict(self.rag),
            "provider": dict(self.provider),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        base = cls()
        known = base.to_dict()
        merged = {**known, **{k: v for k, v in doc.items() if k in known}}
        merged["udm"] = {**known["udm"], **doc.get("udm", {})}
        merged["rag"] = {**known["rag"], **doc.get("rag", {})}
        merged["provider"] = {**known["provider"], **doc.get("provider", {})}
        return cls(**merged)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def udm_params(self) -> UdmParams:
        keys = ("ndvi_gate", "min_area_px", "max_area_px", "distance_margin", "morphology_radius")
        return UdmParams(**{k: self.udm[k] for k in keys})

    def cascade_params(self) -> CascadeParams:
        return CascadeParams(
            k_sections=self.rag["k_sections"],
            k_chunks=self.rag["k_chunks"],
            k_captions=self.rag["k_captions"],
            sufficiency_threshold=self.rag["sufficiency_threshold"],
            max_refinements=self.rag["max_refinements"],
        )


@dataclass
class StageResult:
    status: str  # finished | reused | skipped | failed
    detail: str = ""
    artifacts: list[str] = field(default_factory=list)
    at: str = ""

    def to_dict(self) -> dict:
        return {"status": self.status, "detail": self.detail, "artifacts": self.artifacts, "at": self.at}


@dataclass
class PipelineRun:
    run_id: str
    site_id: str
    scene_id: str = ""
    status: str = "running"  # running | complete | failed
    stages: dict[str, StageResult] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "site_id": self.site_id,
            "scene_id": self.scene_id,
            "status": self.status,
            "stages": {k: v.to_dict() for k, v in self.stages.items()},
        }


class Pipeline:
    """Owns the data root; see README for the directory layout."""

    def __init__(
        self,
        root: str | Path,
        config: PipelineConfig | None = None,
        provider: ChatProvider | None = None,
        judge_provider: ChatProvider | None = None,
        embedder=None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        cfg_path = self.root / "config.json"
        if config is None and cfg_path.exists():
            config = PipelineConfig.load(cfg_path)
        self.config = config or PipelineConfig()
        self.registry = Registry(self.root)
        for sub in ("scenes", "catalog", "artifacts", "models", "scribbles", "reviews",
                    "captions_index", "runs", "rag", "docs", "logs"):
            (self.root / sub).mkdir(exist_ok=True)

        if provider is None:
            mode = self.config.provider.get("mode", "mock")
            if mode == "mock":
                provider = MockProvider(int(self.config.provider.get("seed", 0)))
            else:
                from .providers import HttpChatProvider

                provider = HttpChatProvider()
        self.provider = provider
        self.judge_provider = judge_provider or provider
        self.embedder = embedder or HashedBagEmbedder(int(self.config.rag["embedder_dim"]))
        self.request_log = RequestLog(self.root / "logs" / "provider.jsonl")

        self.fault_hook: Callable[[str], None] | None = None
        self._journal_lock = threading.Lock()
        self._site_locks: dict[str, threading.Lock] = {}
        self._site_locks_guard = threading.Lock()

    # ------------------------------------------------------------- plumbing

    def _site_lock(self, site_id: str) -> threading.Lock:
        with self._site_locks_guard:
            return self._site_locks.setdefault(site_id, threading.Lock())

    def _journal(self, **event) -> None:
        line = json.dumps({"ts": _now(), **event}, sort_keys=True)
        with self._journal_lock:
            with (self.root / "runs" / "journal.jsonl").open("a") as fh:
                fh.write(line + "\n")

    def _hook(self, point: str) -> None:
        if self.fault_hook is not None:
            self.fault_hook(point)

    def run_dir(self, site_id: str, run_id: str) -> Path:
        d = self.root / "artifacts" / site_id / run_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def latest_run(self, site_id: str) -> PipelineRun | None:
        pointer = self.root / "artifacts" / site_id / "latest.json"
        if not pointer.exists():
            return None
        run_id = json.loads(pointer.read_text())["run_id"]
        doc = json.loads((self.run_dir(site_id, run_id) / "run.json").read_text())
        run = PipelineRun(run_id=doc["run_id"], site_id=doc["site_id"], scene_id=doc["scene_id"])
        run.status = doc["status"]
        run.stages = {
            k: StageResult(
                status=v["status"], detail=v["detail"], artifacts=v["artifacts"], at=v["at"]
            )
            for k, v in doc["stages"].items()
        }
        return run

    def _persist_run(self, run: PipelineRun) -> None:
        d = self.run_dir(run.site_id, run.run_id)
        write_json_atomic(d / "run.json", run.to_dict())
        write_json_atomic(d.parent / "latest.json", {"run_id": run.run_id})

    def _advance(self, site_id: str, target: str) -> None:
        from .sites import STATUS_ORDER

        site = self.registry.load_site(site_id)
        if STATUS_ORDER.index(site.status) < STATUS_ORDER.index(target):
            self.registry.advance_status(site_id, target)

    # ----------------------------------------------------------- run stages

    def _load_scene(self, scene_id: str) -> raster.SceneCube:
        return raster.load_scene(self.root / "scenes" / f"{scene_id}.tif")

    def _rgb(self, cube: raster.SceneCube) -> raster.RenderImage:
        c = self.config
        return raster.render_rgb(
            cube, low_pct=c.stretch_low, high_pct=c.stretch_high, sat_gain=c.sat_gain
        )

    def run_site(self, site_id: str, until: str | None = None) -> PipelineRun:
        """Execute pipeline stages for one site, stopping after `until` when
        given. Stages whose artifacts already exist are reused untouched."""
        if until is not None and until not in STAGES:
            raise ValueError(f"unknown stage {until!r}")
        with self._site_lock(site_id):
            return self._run_site_locked(site_id, until)

    def _run_site_locked(self, site_id: str, until: str | None = None) -> PipelineRun:
        site = self.registry.load_site(site_id)
        cfg_hash = self.config.config_hash()
        run = PipelineRun(run_id="", site_id=site_id)

        def fail(stage: str, exc: Exception) -> PipelineRun:
            code = getattr(exc, "code", type(exc).__name__)
            run.stages[stage] = StageResult(status="failed", detail=f"{code}: {exc}", at=_now())
            run.status = "failed"
            if not run.run_id:
                run.run_id = hashlib.sha256(f"{site_id}||{cfg_hash}".encode()).hexdigest()[:12]
            self._persist_run(run)
            self._journal(site_id=site_id, run_id=run.run_id, stage=stage, event="failed", detail=str(exc))
            logger.warning("run for %s failed at %s: %s", site_id, stage, exc)
            return run

        # catalog: fixture-backed scene discovery, cheap and deterministic,
        # recomputed on every run
        try:
            catalog = FixtureCatalog(self.root / "catalog" / f"{site_id}.json")
            window = date_window(site, date.fromisoformat(self.config.horizon), self.config.max_cloud_pct)
            candidates = query_catalog(catalog, bbox_for(site), window)
            if not candidates:
                raise NoViableScene("no catalog candidates inside the date/cloud window")
        except Exception as exc:
            return fail("catalog", exc)
        run.stages["catalog"] = StageResult(
            status="finished", detail=f"{len(candidates)} candidates", at=_now()
        )
        if until == "catalog":
            # no scene chosen yet, so no run directory to persist into
            run.status = "partial"
            return run

        # quality: load every candidate, rank, choose
        try:
            reports = []
            cubes: dict[str, raster.SceneCube] = {}
            for cand in candidates:
                cube = self._load_scene(cand.scene_id)
                cubes[cand.scene_id] = cube
                render = self._rgb(cube)
                reports.append(
                    raster.quality_metrics(
                        render,
                        cube.nodata_mask,
                        self.config.gap_threshold,
                        scene_id=cand.scene_id,
                        capture_date=cand.capture_date,
                    )
                )
            ranked = raster.rank_details(reports)
            chosen = ranked[0].scene_id
        except Exception as exc:
            return fail("quality", exc)

        run.scene_id = chosen
        run.run_id = hashlib.sha256(f"{site_id}|{chosen}|{cfg_hash}".encode()).hexdigest()[:12]
        d = self.run_dir(site_id, run.run_id)
        quality_doc = {
            "reports": [r.to_dict() for r in reports],
            "ranking": [r.scene_id for r in ranked],
            "chosen": chosen,
        }
        if (d / "quality.json").exists():
            run.stages["quality"] = StageResult(status="reused", artifacts=["quality.json"], at=_now())
        else:
            self._hook("pre:quality")
            write_json_atomic(d / "quality.json", quality_doc)
            self._hook("post:quality")
            run.stages["quality"] = StageResult(
                status="finished", detail=f"chose {chosen}", artifacts=["quality.json"], at=_now()
            )
        self._persist_run(run)
        self._journal(site_id=site_id, run_id=run.run_id, stage="quality", event=run.stages["quality"].status)
        self._advance(site_id, "scened")
        if until == "quality":
            run.status = "partial"
            self._persist_run(run)
            return run

        cube = cubes[chosen]
        try:
            self._stage_indices(run, d, cube)
            if until == "indices":
                run.status = "partial"
                self._persist_run(run)
                return run
            self._stage_udm(run, d, cube)
            if until == "udm":
                run.status = "partial"
                self._persist_run(run)
                return run
            caption = self._stage_caption(run, d, site, cube)
            if until == "caption":
                run.status = "partial"
                self._persist_run(run)
                return run
            self._stage_judge(run, d, caption)
        except Exception as exc:
            stage = getattr(exc, "stage", None) or "unknown"
            return fail(stage, exc.cause if isinstance(exc, StageError) else exc)

        run.status = "complete"
        self._persist_run(run)
        self._advance(site_id, "captioned")
        self._journal(site_id=site_id, run_id=run.run_id, stage="run", event="complete")
        return run

    def _finish(self, run: PipelineRun, stage: str, artifacts: list[str], detail: str = "") -> None:
        run.stages[stage] = StageResult(status="finished", detail=detail, artifacts=artifacts, at=_now())
        self._persist_run(run)
        self._journal(site_id=run.site_id, run_id=run.run_id, stage=stage, event="finished")

    def _reuse(self, run: PipelineRun, stage: str, artifacts: list[str]) -> None:
        run.stages[stage] = StageResult(status="reused", artifacts=artifacts, at=_now())
        self._persist_run(run)
        self._journal(site_id=run.site_id, run_id=run.run_id, stage=stage, event="reused")

    def _stage_indices(self, run: PipelineRun, d: Path, cube: raster.SceneCube) -> None:
        names = ["rgb.png", "ndvi.tif", "ndvi.png", "ndbi.tif", "ndbi.png", "fmi.tif", "fmi.png"]
        if all((d / n).exists() for n in names):
            self._reuse(run, "indices", names)
            return
        try:
            self._hook("pre:indices")
            render = self._rgb(cube)
            write_bytes_atomic(d / "rgb.png", render.png_bytes())
            for kind, fn in (("ndvi", idx.ndvi), ("ndbi", idx.ndbi), ("fmi", idx.fmi)):
                rast = fn(cube)
                idx.save_index(rast, d / f"{kind}.tmp-index.tif")
                (d / f"{kind}.tmp-index.tif").replace(d / f"{kind}.tif")
                write_bytes_atomic(d / f"{kind}.png", idx.render_index(rast).png_bytes())
            self._hook("post:indices")
        except Exception as exc:
            raise StageError("indices", exc) from exc
        self._finish(run, "indices", names)

    def _stage_udm(self, run: PipelineRun, d: Path, cube: raster.SceneCube) -> None:
        model_path = self.root / "models" / run.site_id / "udm.json"
        if not model_path.exists():
            run.stages["udm"] = StageResult(status="skipped", detail="no trained model", at=_now())
            self._persist_run(run)
            self._journal(site_id=run.site_id, run_id=run.run_id, stage="udm", event="skipped")
            return
        names = ["udm.png", "udm_summary.json"]
        if all((d / n).exists() for n in names):
            self._reuse(run, "udm", names)
            return
        try:
            self._hook("pre:udm")
            model = CentroidModel.from_json(model_path.read_text())
            params = self.config.udm_params()
            features = extract_features(cube, texture_window=int(self.config.udm["texture_window"]))
            labeled = postprocess(classify(features, model, idx.ndvi(cube), params), params)
            idx.save_label_png(labeled.labels, d / "udm.tmp-label.png")
            (d / "udm.tmp-label.png").replace(d / "udm.png")
            write_json_atomic(d / "udm_summary.json", labeled.summary())
            self._hook("post:udm")
        except Exception as exc:
            raise StageError("udm", exc) from exc
        self._finish(run, "udm", names)

    def _payload(self, d: Path, cube: raster.SceneCube) -> ImagePayload:
        roles = {"rgb": self._rgb(cube), "ndvi": idx.render_index(idx.ndvi(cube))}
        udm_png = d / "udm.png"
        images = [("rgb", roles["rgb"])]
        if self.config.payload_arm == "rgb_ndvi_udm":
            images.append(("ndvi", roles["ndvi"]))
            if udm_png.exists():
                from PIL import Image

                px = np.asarray(Image.open(udm_png).convert("RGB"), dtype=np.uint8)
                images.append(("udm", raster.RenderImage(pixels=px, provenance="udm labels")))
        return ImagePayload(images=images)

    def _stage_caption(self, run: PipelineRun, d: Path, site: SiteRecord, cube: raster.SceneCube):
        from .captioning import CaptionCandidate

        if (d / "caption.json").exists():
            self._reuse(run, "caption", ["caption.json"])
            return CaptionCandidate.from_dict(json.loads((d / "caption.json").read_text()))
        try:
            self._hook("pre:caption")
            dossier = self.registry.load_dossier(site.site_id)
            bundle = build_prompt(
                site,
                dossier,
                load_exemplars(),
                CaptionConfig(word_cap=self.config.word_cap, payload_arm=self.config.payload_arm),
            )
            hp = GenerationHyperparams(
                temperature=self.config.temperature,
                frequency_penalty=self.config.frequency_penalty,
                max_tokens=self.config.max_tokens,
            )
            caption = generate_caption(
                self.provider,
                bundle,
                self._payload(d, cube),
                hp,
                site_id=site.site_id,
                word_cap=self.config.word_cap,
                log=self.request_log,
            )
            write_json_atomic(d / "caption.json", caption.to_dict())
            write_json_atomic(
                self.root / "captions_index" / f"{caption.caption_id}.json",
                {"site_id": site.site_id, "run_id": run.run_id},
            )
            self._hook("post:caption")
        except Exception as exc:
            raise StageError("caption", exc) from exc
        self._finish(run, "caption", ["caption.json"], detail=caption.caption_id)
        return caption

    def _stage_judge(self, run: PipelineRun, d: Path, caption) -> None:
        if (d / "scorecard.json").exists():
            self._reuse(run, "judge", ["scorecard.json"])
            return
        try:
            self._hook("pre:judge")
            policy = GatePolicy(mean_min=self.config.mean_min, dim_min=self.config.dim_min)
            card = evaluate(
                self.judge_provider,
                caption.caption_id,
                caption.text,
                load_rubric(),
                policy,
                log=self.request_log,
            )
            write_json_atomic(d / "scorecard.json", card.to_dict())
            self._hook("post:judge")
        except Exception as exc:
            raise StageError("judge", exc) from exc
        self._finish(run, "judge", ["scorecard.json"], detail=card.verdict)

    # ------------------------------------------------------------------ udm

    def _chosen_scene(self, site_id: str) -> tuple[PipelineRun, raster.SceneCube]:
        from .errors import StatusTransitionError

        run = self.latest_run(site_id)
        if run is None or not run.scene_id:
            raise StatusTransitionError(f"site {site_id} has no chosen scene; run quality first")
        return run, self._load_scene(run.scene_id)

    def save_scribbles(self, site_id: str, geojson: dict) -> ScribbleSet:
        scribbles = ScribbleSet.from_geojson(geojson, scene_id=site_id)
        if not scribbles.strokes:
            raise ValueError("scribble set is empty")
        write_json_atomic(self.root / "scribbles" / f"{site_id}.geojson", scribbles.to_geojson())
        site = self.registry.load_site(site_id)
        # re-annotating a site that moved past this stage is fine; moving
        # backwards is not, so only the legal forward transition is attempted
        if site.status in ("new", "scened"):
            self.registry.advance_status(site_id, "annotated")
        return scribbles

    def load_scribbles(self, site_id: str) -> ScribbleSet:
        path = self.root / "scribbles" / f"{site_id}.geojson"
        if not path.exists():
            raise KeyError(f"no scribbles for site {site_id!r}")
        return ScribbleSet.from_geojson(json.loads(path.read_text()), scene_id=site_id)

    def train_udm(self, site_id: str) -> dict:
        run, cube = self._chosen_scene(site_id)
        scribbles = self.load_scribbles(site_id)
        features = extract_features(cube, texture_window=int(self.config.udm["texture_window"]))
        rasterized = rasterize_scribbles(scribbles, cube)
        model = train(features, rasterized.samples, scene_ids=[run.scene_id])
        model_dir = self.root / "models" / site_id
        model_dir.mkdir(parents=True, exist_ok=True)
        tmp = model_dir / "udm.json.tmp"
        tmp.write_text(model.to_json())
        tmp.replace(model_dir / "udm.json")
        per_class: dict[str, int] = {}
        for _, class_name in rasterized.samples:
            per_class[class_name] = per_class.get(class_name, 0) + 1
        self._journal(site_id=site_id, stage="udm_train", event="finished", detail=json.dumps(per_class))
        return {
            "trained_on": run.scene_id,
            "samples": per_class,
            "conflict_px": rasterized.conflict_px,
            "masked_px": rasterized.masked_px,
        }

    def classify_udm(self, site_id: str) -> dict:
        model_path = self.root / "models" / site_id / "udm.json"
        if not model_path.exists():
            raise KeyError(f"no trained model for site {site_id!r}")
        run, cube = self._chosen_scene(site_id)
        d = self.run_dir(site_id, run.run_id)
        model = CentroidModel.from_json(model_path.read_text())
        params = self.config.udm_params()
        features = extract_features(cube, texture_window=int(self.config.udm["texture_window"]))
        labeled = postprocess(classify(features, model, idx.ndvi(cube), params), params)
        idx.save_label_png(labeled.labels, d / "udm.tmp-label.png")
        (d / "udm.tmp-label.png").replace(d / "udm.png")
        summary = labeled.summary()
        write_json_atomic(d / "udm_summary.json", summary)
        run.stages["udm"] = StageResult(
            status="finished", detail="classified on demand", artifacts=["udm.png", "udm_summary.json"], at=_now()
        )
        self._persist_run(run)
        self._journal(site_id=site_id, run_id=run.run_id, stage="udm", event="finished")
        return summary

    # --------------------------------------------------------------- review

    def caption_location(self, caption_id: str) -> tuple[str, str]:
        pointer = self.root / "captions_index" / f"{caption_id}.json"
        if not pointer.exists():
            raise KeyError(f"unknown caption {caption_id!r}")
        doc = json.loads(pointer.read_text())
        return doc["site_id"], doc["run_id"]

    def load_caption(self, caption_id: str):
        from .captioning import CaptionCandidate

        site_id, run_id = self.caption_location(caption_id)
        d = self.run_dir(site_id, run_id)
        return CaptionCandidate.from_dict(json.loads((d / "caption.json").read_text()))

    def load_scorecard(self, caption_id: str) -> dict | None:
        site_id, run_id = self.caption_location(caption_id)
        path = self.run_dir(site_id, run_id) / "scorecard.json"
        return json.loads(path.read_text()) if path.exists() else None

    def review(self, caption_id: str, decision: str, reviewer: str, note: str = "") -> dict:
        """Record an immutable human decision on a judge-accepted caption."""
        if decision not in ("accept", "reject"):
            raise ValueError(f"decision must be accept or reject, not {decision!r}")
        site_id, _ = self.caption_location(caption_id)
        card = self.load_scorecard(caption_id)
        if card is None or card["verdict"] != "accept":
            raise PermissionError(f"caption {caption_id} is not judge-accepted; not reviewable")
        path = self.root / "reviews" / f"{caption_id}.json"
        if path.exists():
            raise FileExistsError(f"caption {caption_id} already reviewed")
        record = {
            "caption_id": caption_id,
            "reviewer": reviewer,
            "decision": decision,
            "note": note,
            "decided_at": _now(),
        }
        write_json_atomic(path, record)
        if decision == "accept":
            self._advance(site_id, "accepted")
        self._journal(site_id=site_id, stage="review", event=decision, detail=caption_id)
        return record

    def reviews(self) -> list[dict]:
        return [
            json.loads(p.read_text()) for p in sorted((self.root / "reviews").glob("*.json"))
        ]

    def captions_for_site(self, site_id: str) -> list[dict]:
        """Caption candidates with their scorecards and any review decision."""
        decisions = {r["caption_id"]: r for r in self.reviews()}
        out = []
        for pointer in sorted((self.root / "captions_index").glob("*.json")):
            loc = json.loads(pointer.read_text())
            if loc["site_id"] != site_id:
                continue
            caption_id = pointer.stem
            entry = {
                "caption": self.load_caption(caption_id).to_dict(),
                "scorecard": self.load_scorecard(caption_id),
                "review": decisions.get(caption_id),
            }
            out.append(entry)
        out.sort(key=lambda e: e["caption"]["caption_id"])
        return out

    # ------------------------------------------------------------- rag sync

    def _accepted_captions(self) -> list[tuple[str, str, SiteRecord]]:
        out = []
        for rec in self.reviews():
            if rec["decision"] != "accept":
                continue
            caption = self.load_caption(rec["caption_id"])
            site = self.registry.load_site(caption.site_id)
            out.append((caption.caption_id, caption.text, site))
        out.sort(key=lambda t: t[0])
        return out

    def _documents(self) -> list[tuple[str, str]]:
        docs_dir = self.root / "docs"
        return [
            (p.name, p.read_text())
            for p in sorted(docs_dir.iterdir())
            if p.suffix in (".txt", ".md")
        ]

    def rag_sync(self) -> dict:
        """Rebuild the three vector stores from accepted captions and
        registered documents. The store manifests are the commit points; the
        sync state file records content hashes for change accounting."""
        rag_dir = self.root / "rag"
        rag_dir.mkdir(exist_ok=True)
        state_path = rag_dir / "sync_state.json"
        old_state = json.loads(state_path.read_text()) if state_path.exists() else {
            "captions": {},
            "documents": {},
        }

        captions = self._accepted_captions()
        documents = self._documents()
        new_state = {
            "captions": {
                cid: hashlib.sha256(text.encode()).hexdigest() for cid, text, _ in captions
            },
            "documents": {
                name: hashlib.sha256(text.encode()).hexdigest() for name, text in documents
            },
        }

        def status_of(kind: str, key: str) -> str:
            old = old_state.get(kind, {})
            if key not in old:
                return "added"
            return "skipped" if old[key] == new_state[kind][key] else "updated"

        stores_exist = all(
            (rag_dir / n / "manifest.json").exists() for n in ("captions", "sections", "documents")
        )
        if new_state == old_state and stores_exist:
            total = sum(
                json.loads((rag_dir / n / "manifest.json").read_text())["count"]
                for n in ("captions", "sections", "documents")
            )
            return {"added": 0, "updated": 0, "skipped": total}

        caption_store = VectorStore("captions", self.embedder)
        section_store = VectorStore("sections", self.embedder)
        document_store = VectorStore("documents", self.embedder)
        counts = {"added": 0, "updated": 0, "skipped": 0}
        cs, ov = int(self.config.rag["chunk_size"]), int(self.config.rag["overlap"])

        try:
            for cid, text, site in captions:
                status = status_of("captions", cid)
                meta = {
                    "kind": "caption",
                    "site_id": site.site_id,
                    "caption_id": cid,
                    "mine_name": site.name,
                    "country": site.country,
                    "lat": site.lat,
                    "lon": site.lon,
                }
                for c in chunk_text(text, cid, cs, ov, metadata=meta):
                    caption_store.add_text(prepend_metadata(c))
                    counts[status] += 1
            hierarchy_maps = []
            for name, text in documents:
                status = status_of("documents", name)
                h = build_hierarchy(text, Path(name).stem, name, chunk_size=cs, overlap=ov)
                for s in h.summaries:
                    section_store.add_text(s)
                    counts[status] += 1
                for c in h.chunks:
                    document_store.add_text(prepend_metadata(c))
                    counts[status] += 1
                hierarchy_maps.append(h)
        except Exception as exc:
            raise SyncFailed(f"embedding failed mid-sync, stores untouched: {exc}") from exc

        caption_store.save(rag_dir / "captions")
        section_store.save(rag_dir / "sections")
        document_store.save(rag_dir / "documents")
        (rag_dir / "hierarchies").mkdir(exist_ok=True)
        for h in hierarchy_maps:
            save_hierarchy_map(h, rag_dir / "hierarchies" / f"{h.doc_id}.json")
        write_json_atomic(state_path, new_state)
        self._journal(stage="rag_sync", event="finished", detail=json.dumps(counts, sort_keys=True))
        return counts

    # ------------------------------------------------------------ rag query

    def _load_stores(self) -> tuple[VectorStore, VectorStore, VectorStore]:
        rag_dir = self.root / "rag"
        stores = []
        for name in ("captions", "sections", "documents"):
            directory = rag_dir / name
            if not (directory / "manifest.json").exists():
                raise InsufficientEvidence("stores not synced; run rag sync first")
            stores.append(VectorStore.load(directory, self.embedder))
        return tuple(stores)

    def rag_query(self, query: str, mode: str = "flat") -> tuple[GroundedAnswer, dict | None]:
        caption_store, section_store, document_store = self._load_stores()
        if mode == "agentic":
            ans, trace = agentic_answer(
                self.provider,
                query,
                section_store,
                document_store,
                caption_store,
                self.config.cascade_params(),
            )
            return ans, trace.to_dict()
        if mode != "flat":
            raise ValueError(f"mode must be flat or agentic, not {mode!r}")
        from .rag import answer as flat_answer

        hits = caption_store.search(query, int(self.config.rag["k_captions"]))
        if not hits:
            raise InsufficientEvidence("caption store returned no hits")
        ans = flat_answer(self.provider, query, hits)
        by_id = {h.chunk.chunk_id: h.chunk for h, _ in hits}
        ans.text = f"{ans.text}\n\n{render_source_log(ans, by_id)}"
        return ans, None
