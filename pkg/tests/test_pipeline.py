"""End-to-end orchestration over an offline data root: runs, artifact reuse,
review flow, store sync, closed-domain queries, and crash recovery."""

import hashlib
import json

import pytest

from conftest import WORLD_DOC, training_scribbles
from minelens.agentic import build_hierarchy
from minelens.errors import (
    InsufficientEvidence,
    StatusTransitionError,
    SyncFailed,
)
from minelens.pipeline import Pipeline, PipelineConfig, STAGES
from minelens.providers import ScriptedProvider

SITE = "ElliotsNo1OpenCut"


def pipeline_for(world, **kwargs):
    return Pipeline(world["root"], **kwargs)


class TestConfig:
    def test_default_hash_is_pinned(self):
        assert PipelineConfig().config_hash() == "0376f5b0f1a7"

    def test_round_trips_through_dict(self):
        cfg = PipelineConfig.from_dict({"word_cap": 120, "udm": {"ndvi_gate": 0.3}})
        again = PipelineConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_partial_override_merges_nested_defaults(self):
        cfg = PipelineConfig.from_dict({"udm": {"ndvi_gate": 0.2}, "word_cap": 99})
        assert cfg.word_cap == 99
        assert cfg.udm["ndvi_gate"] == 0.2
        assert cfg.udm["min_area_px"] == 9  # untouched default survives

    def test_unknown_keys_are_ignored(self):
        cfg = PipelineConfig.from_dict({"not_a_key": 1})
        assert cfg == PipelineConfig()

    def test_hash_tracks_every_field(self):
        base = PipelineConfig().config_hash()
        assert PipelineConfig(word_cap=99).config_hash() != base
        assert PipelineConfig(udm={"ndvi_gate": 0.3}).config_hash() != base

    def test_config_file_autoloads(self, world):
        cfg = PipelineConfig(word_cap=77)
        (world["root"] / "config.json").write_text(json.dumps(cfg.to_dict()))
        p = pipeline_for(world)
        assert p.config.word_cap == 77

    def test_param_projections(self):
        cfg = PipelineConfig()
        assert cfg.udm_params().ndvi_gate == 0.4
        assert cfg.cascade_params().k_sections == 2


class TestRunSite:
    def test_full_offline_run_completes(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE)
        assert run.status == "complete"
        assert run.scene_id == f"{SITE}-a"
        assert run.stages["catalog"].status == "finished"
        assert run.stages["quality"].status == "finished"
        assert run.stages["indices"].status == "finished"
        assert run.stages["udm"].status == "skipped"
        assert run.stages["caption"].status == "finished"
        assert run.stages["judge"].status == "finished"

    def test_run_id_derivation_and_artifacts(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE)
        expected = hashlib.sha256(
            f"{SITE}|{run.scene_id}|{p.config.config_hash()}".encode()
        ).hexdigest()[:12]
        assert run.run_id == expected
        d = world["root"] / "artifacts" / SITE / run.run_id
        for name in (
            "run.json",
            "quality.json",
            "rgb.png",
            "ndvi.tif",
            "ndvi.png",
            "ndbi.tif",
            "ndbi.png",
            "fmi.tif",
            "fmi.png",
            "caption.json",
            "scorecard.json",
        ):
            assert (d / name).exists(), name

    def test_cloudy_scene_filtered_before_ranking(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE)
        doc = json.loads(
            (world["root"] / "artifacts" / SITE / run.run_id / "quality.json").read_text()
        )
        assert doc["chosen"] == f"{SITE}-a"
        assert f"{SITE}-c" not in doc["ranking"]
        assert set(doc["ranking"]) == {f"{SITE}-a", f"{SITE}-b"}

    def test_site_status_advances_to_captioned(self, world):
        p = pipeline_for(world)
        p.run_site(SITE)
        assert p.registry.load_site(SITE).status == "captioned"

    def test_latest_run_pointer_round_trips(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE)
        again = p.latest_run(SITE)
        assert again.run_id == run.run_id
        assert again.status == "complete"
        assert {k: v.status for k, v in again.stages.items()} == {
            k: v.status for k, v in run.stages.items()
        }

    def test_judge_accepts_mock_caption(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE)
        card = json.loads(
            (world["root"] / "artifacts" / SITE / run.run_id / "scorecard.json").read_text()
        )
        assert card["verdict"] == "accept"
        assert card["caption_id"] == run.stages["caption"].detail

    def test_rerun_reuses_artifacts_without_provider_calls(self, world):
        p = pipeline_for(world)
        first = p.run_site(SITE)
        calls_after_first = p.provider.calls
        second = p.run_site(SITE)
        assert second.run_id == first.run_id
        assert p.provider.calls == calls_after_first
        for stage in ("quality", "indices", "caption", "judge"):
            assert second.stages[stage].status == "reused", stage
        assert second.stages["udm"].status == "skipped"
        assert second.status == "complete"

    def test_config_change_changes_run_id(self, world):
        p = pipeline_for(world)
        first = p.run_site(SITE)
        p2 = Pipeline(world["root"], config=PipelineConfig(word_cap=120))
        second = p2.run_site(SITE)
        assert second.run_id != first.run_id


class TestUntilPartials:
    def test_catalog_only_is_not_persisted(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE, until="catalog")
        assert run.status == "partial"
        assert run.run_id == ""
        assert list(run.stages) == ["catalog"]
        assert p.latest_run(SITE) is None

    def test_quality_partial_stops_before_indices(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE, until="quality")
        assert run.status == "partial"
        d = world["root"] / "artifacts" / SITE / run.run_id
        assert (d / "quality.json").exists()
        assert not (d / "rgb.png").exists()
        assert "indices" not in run.stages

    def test_indices_partial_stops_before_caption(self, world):
        p = pipeline_for(world)
        run = p.run_site(SITE, until="indices")
        d = world["root"] / "artifacts" / SITE / run.run_id
        assert (d / "fmi.png").exists()
        assert not (d / "caption.json").exists()
        assert p.provider.calls == 0

    def test_partial_then_full_resumes_with_reuse(self, world):
        p = pipeline_for(world)
        partial = p.run_site(SITE, until="indices")
        full = p.run_site(SITE)
        assert full.run_id == partial.run_id
        assert full.stages["indices"].status == "reused"
        assert full.stages["caption"].status == "finished"
        assert full.status == "complete"

    def test_unknown_stage_rejected(self, world):
        with pytest.raises(ValueError):
            pipeline_for(world).run_site(SITE, until="render")


class TestFailures:
    def test_empty_catalog_fails_the_catalog_stage(self, world):
        (world["root"] / "catalog" / f"{SITE}.json").write_text("[]")
        p = pipeline_for(world)
        run = p.run_site(SITE)
        assert run.status == "failed"
        assert run.stages["catalog"].status == "failed"
        assert "no catalog candidates" in run.stages["catalog"].detail

    def test_all_cloudy_catalog_fails(self, world):
        entries = json.loads((world["root"] / "catalog" / f"{SITE}.json").read_text())
        for e in entries:
            e["cloud_pct"] = 90.0
        (world["root"] / "catalog" / f"{SITE}.json").write_text(json.dumps(entries))
        run = pipeline_for(world).run_site(SITE)
        assert run.status == "failed"

    def test_failed_run_is_persisted_for_inspection(self, world):
        (world["root"] / "catalog" / f"{SITE}.json").write_text("[]")
        p = pipeline_for(world)
        run = p.run_site(SITE)
        assert run.run_id  # synthesized without a scene
        doc = json.loads(
            (world["root"] / "artifacts" / SITE / run.run_id / "run.json").read_text()
        )
        assert doc["status"] == "failed"

    def test_unknown_site_raises_key_error(self, world):
        with pytest.raises(KeyError):
            pipeline_for(world).run_site("NoSuchSite")


class TestUdmFlow:
    def test_scribbles_require_a_chosen_scene(self, world):
        p = pipeline_for(world)
        with pytest.raises(StatusTransitionError):
            p.save_scribbles(SITE, training_scribbles(SITE).to_geojson())

    def test_train_and_classify_round_trip(self, world):
        p = pipeline_for(world)
        p.run_site(SITE, until="quality")
        p.save_scribbles(SITE, training_scribbles(SITE).to_geojson())
        assert p.registry.load_site(SITE).status == "annotated"

        info = p.train_udm(SITE)
        assert info["trained_on"] == f"{SITE}-a"
        assert set(info["samples"]) == {"mining", "urban", "negative"}
        assert all(n > 0 for n in info["samples"].values())
        assert (world["root"] / "models" / SITE / "udm.json").exists()

        summary = p.classify_udm(SITE)
        assert len(summary["components"]) >= 1
        assert summary["counts"]["mining"] >= 1
        assert summary["labeled_px"] > 0
        run = p.latest_run(SITE)
        d = world["root"] / "artifacts" / SITE / run.run_id
        assert (d / "udm.png").exists()
        assert (d / "udm_summary.json").exists()

    def test_run_after_training_executes_udm_stage(self, world):
        p = pipeline_for(world)
        p.run_site(SITE, until="quality")
        p.save_scribbles(SITE, training_scribbles(SITE).to_geojson())
        p.train_udm(SITE)
        run = p.run_site(SITE)
        assert run.stages["udm"].status in ("finished", "reused")
        assert run.status == "complete"

    def test_empty_scribbles_rejected(self, world):
        p = pipeline_for(world)
        p.run_site(SITE, until="quality")
        with pytest.raises(ValueError):
            p.save_scribbles(SITE, {"type": "FeatureCollection", "features": []})

    def test_train_without_scribbles_raises(self, world):
        p = pipeline_for(world)
        p.run_site(SITE, until="quality")
        with pytest.raises(KeyError):
            p.train_udm(SITE)

    def test_classify_without_model_raises(self, world):
        p = pipeline_for(world)
        p.run_site(SITE, until="quality")
        with pytest.raises(KeyError):
            p.classify_udm(SITE)


def run_and_caption(p, site=SITE):
    run = p.run_site(site)
    assert run.status == "complete"
    return run.stages["caption"].detail


class TestReview:
    def test_accept_review_advances_site(self, world):
        p = pipeline_for(world)
        caption_id = run_and_caption(p)
        record = p.review(caption_id, "accept", reviewer="analyst-1", note="clear pit")
        assert record["decision"] == "accept"
        assert p.registry.load_site(SITE).status == "accepted"
        assert p.reviews() == [record]

    def test_reject_review_does_not_advance(self, world):
        p = pipeline_for(world)
        caption_id = run_and_caption(p)
        p.review(caption_id, "reject", reviewer="analyst-1")
        assert p.registry.load_site(SITE).status == "captioned"

    def test_reviews_are_immutable(self, world):
        p = pipeline_for(world)
        caption_id = run_and_caption(p)
        p.review(caption_id, "accept", reviewer="a")
        with pytest.raises(FileExistsError):
            p.review(caption_id, "reject", reviewer="b")

    def test_only_judge_accepted_captions_reviewable(self, world):
        rejecting_judge = ScriptedProvider(['{"score": 3}'] * 10)
        p = pipeline_for(world, judge_provider=rejecting_judge)
        caption_id = run_and_caption(p)
        assert p.load_scorecard(caption_id)["verdict"] == "reject"
        with pytest.raises(PermissionError):
            p.review(caption_id, "accept", reviewer="a")

    def test_unknown_caption_and_bad_decision(self, world):
        p = pipeline_for(world)
        caption_id = run_and_caption(p)
        with pytest.raises(KeyError):
            p.review("cap-000000000000", "accept", reviewer="a")
        with pytest.raises(ValueError):
            p.review(caption_id, "maybe", reviewer="a")

    def test_captions_for_site_joins_scorecard_and_review(self, world):
        p = pipeline_for(world)
        caption_id = run_and_caption(p)
        p.review(caption_id, "accept", reviewer="a")
        entries = p.captions_for_site(SITE)
        assert len(entries) == 1
        entry = entries[0]
        assert entry["caption"]["caption_id"] == caption_id
        assert entry["scorecard"]["verdict"] == "accept"
        assert entry["review"]["decision"] == "accept"
        assert p.captions_for_site("Endeavour22") == []


def synced_world(world):
    p = pipeline_for(world)
    caption_id = run_and_caption(p)
    p.review(caption_id, "accept", reviewer="a")
    return p, caption_id


def expected_doc_counts():
    h = build_hierarchy(WORLD_DOC, "northern_mining_review", "northern_mining_review.txt")
    return len(h.summaries), len(h.chunks)


class TestRagSync:
    def test_first_sync_counts_match_chunker_oracle(self, world):
        p, _ = synced_world(world)
        counts = p.rag_sync()
        n_summaries, n_chunks = expected_doc_counts()
        assert counts == {"added": 1 + n_summaries + n_chunks, "updated": 0, "skipped": 0}
        for name in ("captions", "sections", "documents"):
            assert (world["root"] / "rag" / name / "manifest.json").exists()

    def test_unchanged_resync_is_a_fast_noop(self, world):
        p, _ = synced_world(world)
        first = p.rag_sync()
        total = sum(first.values())
        assert p.rag_sync() == {"added": 0, "updated": 0, "skipped": total}

    def test_new_acceptance_adds_only_its_chunks(self, world):
        p, _ = synced_world(world)
        first = p.rag_sync()
        second_caption = run_and_caption(p, "Endeavour22")
        p.review(second_caption, "accept", reviewer="a")
        counts = p.rag_sync()
        assert counts["added"] == 1
        assert counts["updated"] == 0
        assert counts["skipped"] == sum(first.values())

    def test_rejected_captions_stay_out_of_the_store(self, world):
        p, _ = synced_world(world)
        second_caption = run_and_caption(p, "Endeavour22")
        p.review(second_caption, "reject", reviewer="a")
        p.rag_sync()
        manifest = json.loads(
            (world["root"] / "rag" / "captions" / "manifest.json").read_text()
        )
        assert manifest["count"] == 1

    def test_failing_embedder_leaves_stores_untouched(self, world):
        p, _ = synced_world(world)
        p.rag_sync()
        before = {
            name: (world["root"] / "rag" / name / "manifest.json").read_bytes()
            for name in ("captions", "sections", "documents")
        }

        class Broken:
            identity = p.embedder.identity
            dimension = p.embedder.dimension

            def embed(self, text):
                raise RuntimeError("embedding backend down")

        second_caption = run_and_caption(p, "Endeavour22")
        p.review(second_caption, "accept", reviewer="a")
        broken = Pipeline(world["root"], embedder=Broken())
        with pytest.raises(SyncFailed):
            broken.rag_sync()
        after = {
            name: (world["root"] / "rag" / name / "manifest.json").read_bytes()
            for name in ("captions", "sections", "documents")
        }
        assert after == before
        # and the stores still load and answer
        ans, _ = p.rag_query("open-pit operation")
        assert "Caption Sources:" in ans.text


class TestRagQuery:
    def test_query_before_sync_refuses(self, world):
        p, _ = synced_world(world)
        with pytest.raises(InsufficientEvidence):
            p.rag_query("anything")

    def test_flat_query_appends_source_log(self, world):
        p, _ = synced_world(world)
        p.rag_sync()
        ans, trace = p.rag_query("what does the scene show?")
        assert trace is None
        assert "\n\nCaption Sources:\n" in ans.text
        assert SITE in ans.caption_sources

    def test_agentic_query_returns_trace(self, world):
        p, caption_id = synced_world(world)
        p.rag_sync()
        caption_text = p.load_caption(caption_id).text
        ans, trace = p.rag_query(caption_text, mode="agentic")
        assert trace is not None
        assert 1 <= len(trace["iterations"]) <= p.config.rag["max_refinements"] + 1
        assert "Document Sources:" in ans.text

    def test_agentic_out_of_corpus_refuses(self, world):
        p, _ = synced_world(world)
        p.rag_sync()
        with pytest.raises(InsufficientEvidence):
            p.rag_query("qzx vbnml wqpfr jklh zzyx", mode="agentic")

    def test_unknown_mode_rejected(self, world):
        p, _ = synced_world(world)
        p.rag_sync()
        with pytest.raises(ValueError):
            p.rag_query("q", mode="hybrid")


class Crash(BaseException):
    # derives from BaseException so no stage wrapper can absorb it; the run
    # dies exactly at the fault point, like a kill signal would
    pass


FAULT_POINTS = (
    "pre:quality",
    "post:quality",
    "pre:indices",
    "post:indices",
    "pre:caption",
    "post:caption",
    "pre:judge",
    "post:judge",
)


class TestCrashSafety:
    @pytest.mark.parametrize("point", FAULT_POINTS)
    def test_crash_at_any_hook_leaves_root_recoverable(self, world, point):
        p = pipeline_for(world)

        def bomb(at):
            if at == point:
                raise Crash(at)

        p.fault_hook = bomb
        with pytest.raises(Crash):
            p.run_site(SITE)

        # every persisted json must still parse (no torn writes)
        for path in world["root"].rglob("*.json"):
            json.loads(path.read_text())

        p.fault_hook = None
        run = p.run_site(SITE)
        assert run.status == "complete"

    def test_crash_during_udm_stage_recovers(self, world):
        p = pipeline_for(world)
        p.run_site(SITE, until="quality")
        p.save_scribbles(SITE, training_scribbles(SITE).to_geojson())
        p.train_udm(SITE)

        def bomb(at):
            if at == "post:udm":
                raise Crash(at)

        p.fault_hook = bomb
        with pytest.raises(Crash):
            p.run_site(SITE)
        p.fault_hook = None
        run = p.run_site(SITE)
        assert run.status == "complete"
        assert run.stages["udm"].status in ("finished", "reused")


class TestStatusProgress:
    def test_rerun_never_regresses_site_status(self, world):
        p = pipeline_for(world)
        caption_id = run_and_caption(p)
        p.review(caption_id, "accept", reviewer="a")
        assert p.registry.load_site(SITE).status == "accepted"
        p.run_site(SITE)
        assert p.registry.load_site(SITE).status == "accepted"

    def test_journal_records_stage_events(self, world):
        p = pipeline_for(world)
        p.run_site(SITE)
        lines = (world["root"] / "runs" / "journal.jsonl").read_text().splitlines()
        events = [json.loads(l) for l in lines]
        assert any(e.get("stage") == "quality" for e in events)
        assert any(e.get("event") == "complete" for e in events)
