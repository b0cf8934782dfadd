#!/usr/bin/env python3
"""Record live service responses as JSON fixtures for the UI contract tests.

Run from the repo root:

    python3 frontend/scripts/record_fixtures.py

Builds a fresh offline world, drives the HTTP service in-process, and
writes every interesting exchange to frontend/tests/fixtures/. The UI
tests replay these files instead of talking to a server, so the files must
always be regenerated from a real service, never edited by hand.
"""

import json
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPO / "tests"))

from fastapi.testclient import TestClient  # noqa: E402

from conftest import build_world, training_scribbles  # noqa: E402
from minelens.pipeline import Pipeline  # noqa: E402
from minelens.providers import ScriptedProvider  # noqa: E402
from minelens.service import create_app  # noqa: E402
from minelens.udm import ScribbleSet, Stroke  # noqa: E402

OUT = REPO / "frontend" / "tests" / "fixtures"
SITE = "ElliotsNo1OpenCut"
QUERY = "The scene shows an active open-pit operation."


def rec(name: str, method: str, path: str, resp, request_body=None) -> dict:
    doc = {
        "method": method,
        "path": path,
        "request": request_body,
        "status": resp.status_code,
    }
    if resp.headers.get("content-type", "").startswith("image/"):
        doc["content_type"] = resp.headers["content-type"]
        doc["body_magic_hex"] = resp.content[:8].hex()
    else:
        doc["body"] = resp.json()
    OUT.joinpath(f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"  {name}: {method} {path} -> {resp.status_code}")
    return doc


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for stale in OUT.glob("*.json"):
        stale.unlink()

    tmp = Path(tempfile.mkdtemp(prefix="fixture-world-"))
    world = build_world(tmp / "data")
    site2, site3 = [s for s in world["site_ids"] if s != SITE][:2]
    pipeline = Pipeline(world["root"])
    client = TestClient(create_app(pipeline))

    print("pristine world")
    rec("sites_list", "GET", "/sites", client.get("/sites"))
    rec("site_unknown", "GET", "/sites/Nowhere", client.get("/sites/Nowhere"))
    body = training_scribbles(site2).to_geojson()
    rec(
        "scribbles_on_new_site",
        "POST",
        f"/sites/{site2}/scribbles",
        client.post(f"/sites/{site2}/scribbles", json=body),
        request_body=body,
    )
    unsynced = {"query": QUERY, "mode": "flat"}
    rec(
        "rag_unsynced",
        "POST",
        "/rag/query",
        client.post("/rag/query", json=unsynced),
        request_body=unsynced,
    )

    print("annotate and train")
    pipeline.run_site(SITE, until="quality")
    canonical = training_scribbles(SITE).to_geojson()
    rec(
        "scribbles_save",
        "POST",
        f"/sites/{SITE}/scribbles",
        client.post(f"/sites/{SITE}/scribbles", json=canonical),
        request_body=canonical,
    )
    broken = training_scribbles(SITE).to_geojson()
    del broken["features"][0]["properties"]["class"]
    rec(
        "scribbles_missing_class",
        "POST",
        f"/sites/{SITE}/scribbles",
        client.post(f"/sites/{SITE}/scribbles", json=broken),
        request_body=broken,
    )
    empty = {"type": "FeatureCollection", "features": []}
    rec(
        "scribbles_empty",
        "POST",
        f"/sites/{SITE}/scribbles",
        client.post(f"/sites/{SITE}/scribbles", json=empty),
        request_body=empty,
    )
    rec("udm_train", "POST", f"/sites/{SITE}/udm/train", client.post(f"/sites/{SITE}/udm/train"))

    # crossing strokes of different classes: the overlap pixel is dropped
    # and counted, which is what the warning badge displays
    conflict = ScribbleSet(
        scene_id=SITE,
        strokes=[
            Stroke(class_name="mining", points=[(40, 15), (40, 45)]),
            Stroke(class_name="urban", points=[(30, 30), (50, 30)]),
            Stroke(class_name="negative", points=[(2, 2), (2, 40)]),
        ],
    ).to_geojson()
    client.post(f"/sites/{SITE}/scribbles", json=conflict)
    conflict_train = rec(
        "udm_train_conflict",
        "POST",
        f"/sites/{SITE}/udm/train",
        client.post(f"/sites/{SITE}/udm/train"),
    )
    assert conflict_train["body"]["conflict_px"] > 0, "conflict fixture must drop pixels"

    # restore the clean model before recording the classification summary
    client.post(f"/sites/{SITE}/scribbles", json=canonical)
    client.post(f"/sites/{SITE}/udm/train")
    rec(
        "udm_classify",
        "POST",
        f"/sites/{SITE}/udm/classify",
        client.post(f"/sites/{SITE}/udm/classify"),
    )

    print("caption review")
    run = pipeline.run_site(SITE)
    assert run.status == "complete", run.status
    caption_id = pipeline.captions_for_site(SITE)[0]["caption"]["caption_id"]
    rec("render_rgb", "GET", f"/sites/{SITE}/render/rgb", client.get(f"/sites/{SITE}/render/rgb"))
    rec("render_udm", "GET", f"/sites/{SITE}/render/udm", client.get(f"/sites/{SITE}/render/udm"))
    rec(
        "render_bad_layer",
        "GET",
        f"/sites/{SITE}/render/elevation",
        client.get(f"/sites/{SITE}/render/elevation"),
    )
    rec(
        "captions_pending",
        "GET",
        f"/sites/{SITE}/captions",
        client.get(f"/sites/{SITE}/captions"),
    )
    accept = {"decision": "accept", "note": "", "reviewer": "operator"}
    rec(
        "review_accept",
        "POST",
        f"/captions/{caption_id}/review",
        client.post(f"/captions/{caption_id}/review", json=accept),
        request_body=accept,
    )
    rec(
        "captions_after_accept",
        "GET",
        f"/sites/{SITE}/captions",
        client.get(f"/sites/{SITE}/captions"),
    )
    rec(
        "review_double",
        "POST",
        f"/captions/{caption_id}/review",
        client.post(f"/captions/{caption_id}/review", json=accept),
        request_body=accept,
    )
    rec("site_accepted", "GET", f"/sites/{SITE}", client.get(f"/sites/{SITE}"))

    run3 = pipeline.run_site(site3)
    assert run3.status == "complete", run3.status
    cap3 = pipeline.captions_for_site(site3)[0]["caption"]["caption_id"]
    reject = {"decision": "reject", "note": "clouds mistaken for mines", "reviewer": "operator"}
    rec(
        "review_reject",
        "POST",
        f"/captions/{cap3}/review",
        client.post(f"/captions/{cap3}/review", json=reject),
        request_body=reject,
    )
    rec(
        "captions_after_reject",
        "GET",
        f"/sites/{site3}/captions",
        client.get(f"/sites/{site3}/captions"),
    )

    # a judge that scores every dimension 3 fails the mean gate, so the
    # caption lands in the queue as read-only
    low = ScriptedProvider(['{"score": 3, "rationale": "weak"}'] * 10)
    pipeline2 = Pipeline(world["root"], judge_provider=low)
    client2 = TestClient(create_app(pipeline2))
    run2 = pipeline2.run_site(site2)
    assert run2.status == "complete", run2.status
    cap2 = pipeline2.captions_for_site(site2)[0]["caption"]["caption_id"]
    judged = rec(
        "captions_judge_rejected",
        "GET",
        f"/sites/{site2}/captions",
        client2.get(f"/sites/{site2}/captions"),
    )
    assert judged["body"][0]["scorecard"]["verdict"] == "reject"
    rec(
        "review_not_reviewable",
        "POST",
        f"/captions/{cap2}/review",
        client2.post(f"/captions/{cap2}/review", json=accept),
        request_body=accept,
    )

    print("rag console")
    synced = pipeline.rag_sync()
    assert synced["added"] > 0, synced
    flat = {"query": QUERY, "mode": "flat"}
    rec("rag_flat", "POST", "/rag/query", client.post("/rag/query", json=flat), request_body=flat)
    agentic = {"query": QUERY, "mode": "agentic"}
    rec(
        "rag_agentic",
        "POST",
        "/rag/query",
        client.post("/rag/query", json=agentic),
        request_body=agentic,
    )
    gibberish = {"query": "qzx vbnml wqpfr jklh", "mode": "agentic"}
    rec(
        "rag_refusal",
        "POST",
        "/rag/query",
        client.post("/rag/query", json=gibberish),
        request_body=gibberish,
    )
    bad_mode = {"query": QUERY, "mode": "hybrid"}
    rec(
        "rag_bad_mode",
        "POST",
        "/rag/query",
        client.post("/rag/query", json=bad_mode),
        request_body=bad_mode,
    )

    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
