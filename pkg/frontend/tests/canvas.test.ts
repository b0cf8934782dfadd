/**
 * Annotation session behaviour: draw, save, train, classify, and the
 * display rules around class toggles and conflict warnings.
 */

import { describe, expect, it } from "vitest";

import { ReviewApi } from "../src/api.js";
import { CanvasSession } from "../src/canvas.js";
import type { LabelSummary, TrainSummary } from "../src/types.js";
import { body, FakeFetch, fixture } from "./fixtures.js";

const SITE = "ElliotsNo1OpenCut";

function drawCanonical(session: CanvasSession): void {
  session.begin("mining");
  session.extend(15, 40);
  session.extend(45, 40);
  session.end();
  session.begin("urban");
  session.extend(62, 78);
  session.extend(82, 78);
  session.end();
  session.begin("negative");
  session.extend(2, 2);
  session.extend(40, 2);
  session.end();
}

describe("drawing", () => {
  it("buffers strokes in draw order", () => {
    const session = new CanvasSession(SITE);
    drawCanonical(session);
    expect(session.strokes().map((s) => s.className)).toEqual(["mining", "urban", "negative"]);
  });

  it("serializes the buffer to the recorded training payload", () => {
    const session = new CanvasSession(SITE);
    drawCanonical(session);
    expect(session.serialize()).toEqual(fixture("scribbles_save").request);
  });

  it("drops empty strokes instead of recording them", () => {
    const session = new CanvasSession(SITE);
    session.begin("mining");
    session.end();
    expect(session.strokes()).toHaveLength(0);
  });

  it("undo removes only the most recent stroke", () => {
    const session = new CanvasSession(SITE);
    drawCanonical(session);
    session.undo();
    expect(session.strokes().map((s) => s.className)).toEqual(["mining", "urban"]);
  });
});

describe("annotate and train cycle", () => {
  it("saves, trains, classifies, and mirrors the component counts", async () => {
    const fake = new FakeFetch().expect("scribbles_save", "udm_train", "udm_classify");
    const api = new ReviewApi("", fake.impl);
    const session = new CanvasSession(SITE);
    drawCanonical(session);

    const ack = await api.saveScribbles(session.siteId, session.serialize());
    expect(ack.status).toBe("annotated");

    const training = await api.trainUdm(session.siteId);
    expect(session.absorbTraining(training)).toBeNull();

    const labels = await api.classifyUdm(session.siteId);
    session.setOverlay(labels, api.renderUrl(session.siteId, "udm"));

    const summary = body<LabelSummary>("udm_classify");
    expect(session.componentCount("mining")).toBe(summary.counts["mining"]);
    expect(session.componentCount("urban")).toBe(summary.counts["urban"]);
    expect(session.overlay?.pngUrl).toBe(fixture("render_udm").path);
    expect(fake.drained).toBe(true);
  });

  it("raises the warning badge with the dropped-pixel count", () => {
    const session = new CanvasSession(SITE);
    const conflicted = body<TrainSummary>("udm_train_conflict");
    const badge = session.absorbTraining(conflicted);
    expect(badge).toBe("1 px dropped: conflicting classes overlap");
    expect(session.conflictPx).toBe(1);
  });

  it("clears the warning when a retrain comes back clean", () => {
    const session = new CanvasSession(SITE);
    session.absorbTraining(body<TrainSummary>("udm_train_conflict"));
    expect(session.absorbTraining(body<TrainSummary>("udm_train"))).toBeNull();
    expect(session.conflictPx).toBe(0);
  });
});

describe("class toggles", () => {
  it("hiding negatives changes painting, not the overlay or the payload", () => {
    const session = new CanvasSession(SITE);
    drawCanonical(session);
    session.setOverlay(body<LabelSummary>("udm_classify"), "/overlay.png");
    const before = structuredClone(session.overlay);
    const payloadBefore = session.serialize();

    session.toggle("negative");

    expect(session.visibleStrokes().map((s) => s.className)).toEqual(["mining", "urban"]);
    expect(session.overlay).toEqual(before);
    expect(session.serialize()).toEqual(payloadBefore);
  });

  it("toggles flip back on", () => {
    const session = new CanvasSession(SITE);
    session.toggle("urban");
    expect(session.isVisible("urban")).toBe(false);
    session.toggle("urban");
    expect(session.isVisible("urban")).toBe(true);
  });
});
