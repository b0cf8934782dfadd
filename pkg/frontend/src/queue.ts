/**
 * Review queue derivation. A caption is actionable only while it is
 * judge-accepted and undecided; judge-rejected captions stay visible with
 * their scores but never grow controls, and a recorded decision disables
 * controls permanently.
 */

import type { CaptionRow, RenderLayer, ReviewRecord } from "./types.js";

/** Layers shown beside the caption text, in display order. */
export const THUMBNAIL_LAYERS: readonly RenderLayer[] = ["rgb", "ndvi", "udm"];

export interface QueueItem {
  captionId: string;
  siteId: string;
  text: string;
  scores: Record<string, number> | null;
  verdict: "accept" | "reject" | null;
  review: ReviewRecord | null;
  thumbnails: string[];
  decisionEnabled: boolean;
}

export function toQueueItem(
  row: CaptionRow,
  renderUrl: (siteId: string, layer: RenderLayer) => string,
): QueueItem {
  const verdict = row.scorecard?.verdict ?? null;
  return {
    captionId: row.caption.caption_id,
    siteId: row.caption.site_id,
    text: row.caption.text,
    scores: row.scorecard ? row.scorecard.scores : null,
    verdict,
    review: row.review,
    thumbnails: THUMBNAIL_LAYERS.map((layer) => renderUrl(row.caption.site_id, layer)),
    decisionEnabled: verdict === "accept" && row.review === null,
  };
}

export function buildQueue(
  rows: CaptionRow[],
  renderUrl: (siteId: string, layer: RenderLayer) => string,
): QueueItem[] {
  return rows.map((row) => toQueueItem(row, renderUrl));
}

/** Items still awaiting a human decision; decided captions leave the queue. */
export function pending(items: QueueItem[]): QueueItem[] {
  return items.filter((item) => item.review === null);
}

/** Reconcile the queue with a decision the server just recorded. */
export function applyDecision(items: QueueItem[], record: ReviewRecord): QueueItem[] {
  return items.map((item) =>
    item.captionId === record.caption_id
      ? { ...item, review: record, decisionEnabled: false }
      : item,
  );
}
