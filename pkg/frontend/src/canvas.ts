/**
 * Annotation canvas state. Holds the stroke buffer being drawn over a scene
 * render, the per-class visibility toggles, and the latest classification
 * overlay. Visibility is display-only: serialization always emits the full
 * buffer, and toggling never touches the overlay, because negative strokes
 * steer the model rather than the mask.
 */

import { toGeoJson, type Stroke, type StrokeClass, type StrokeCollection } from "./strokes.js";
import type { LabelSummary, RenderLayer, TrainSummary } from "./types.js";

export interface Overlay {
  pngUrl: string;
  summary: LabelSummary;
}

export class CanvasSession {
  activeLayer: RenderLayer = "rgb";
  overlay: Overlay | null = null;
  /** set from the last training response when strokes overlapped */
  conflictPx = 0;

  private buffer: Stroke[] = [];
  private current: Stroke | null = null;
  private visibility: Record<StrokeClass, boolean> = {
    urban: true,
    mining: true,
    negative: true,
  };

  constructor(readonly siteId: string) {}

  begin(className: StrokeClass, widthPx = 1): void {
    if (this.current) throw new Error("stroke already in progress");
    this.current = { className, widthPx, points: [] };
  }

  extend(x: number, y: number): void {
    if (!this.current) throw new Error("no stroke in progress");
    this.current.points.push([x, y]);
  }

  end(): void {
    if (!this.current) throw new Error("no stroke in progress");
    if (this.current.points.length === 0) {
      this.current = null;
      return;
    }
    this.buffer.push(this.current);
    this.current = null;
  }

  undo(): void {
    this.buffer.pop();
  }

  clear(): void {
    this.buffer = [];
    this.current = null;
  }

  strokes(): readonly Stroke[] {
    return this.buffer;
  }

  /** Strokes to paint, honouring the class toggles. */
  visibleStrokes(): Stroke[] {
    return this.buffer.filter((s) => this.visibility[s.className]);
  }

  isVisible(className: StrokeClass): boolean {
    return this.visibility[className];
  }

  toggle(className: StrokeClass): void {
    this.visibility[className] = !this.visibility[className];
  }

  /** Full buffer as the GeoJSON the training endpoint consumes. */
  serialize(): StrokeCollection {
    return toGeoJson(this.siteId, this.buffer);
  }

  setOverlay(summary: LabelSummary, pngUrl: string): void {
    this.overlay = { pngUrl, summary };
  }

  componentCount(label: string): number {
    return this.overlay?.summary.counts[label] ?? 0;
  }

  /** Warning badge text after training, or null when nothing was dropped. */
  absorbTraining(summary: TrainSummary): string | null {
    this.conflictPx = summary.conflict_px;
    if (summary.conflict_px === 0) return null;
    return `${summary.conflict_px} px dropped: conflicting classes overlap`;
  }
}
