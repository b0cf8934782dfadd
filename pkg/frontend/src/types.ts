/**
 * Wire types for the pipeline service. Every interface here mirrors a JSON
 * payload the HTTP API actually returns; the recorded fixtures under
 * tests/fixtures/ are the source of truth and the contract tests hold these
 * shapes to them.
 */

export type SiteStatus = "new" | "scened" | "annotated" | "captioned" | "accepted";

export interface SiteRecord {
  site_id: string;
  name: string;
  country: string;
  lat: number;
  lon: number;
  commodity: string[];
  status: SiteStatus;
}

export interface ErrorEnvelope {
  error: { code: string; message: string };
}

/** Acknowledgement for a saved scribble set. */
export interface ScribbleAck {
  site_id: string;
  strokes: number;
  status: SiteStatus;
}

export interface TrainSummary {
  trained_on: string;
  samples: Record<string, number>;
  /** pixels dropped where strokes of different classes overlapped */
  conflict_px: number;
  /** stroke pixels that fell on nodata */
  masked_px: number;
}

export interface ComponentInfo {
  label: string;
  area_px: number;
  /** row_min, col_min, row_max, col_max, inclusive */
  bbox: [number, number, number, number];
}

export interface LabelSummary {
  components: ComponentInfo[];
  counts: Record<string, number>;
  labeled_px: number;
}

export interface CaptionCandidate {
  caption_id: string;
  site_id: string;
  text: string;
  provider: string;
  hyperparams: {
    temperature: number;
    frequency_penalty: number;
    max_tokens: number;
    banned_phrases: string[];
  };
  payload_roles: string[];
  created_at: string;
}

export type Verdict = "accept" | "reject";

export interface Scorecard {
  caption_id: string;
  scores: Record<string, number>;
  raw_responses: Record<string, string>;
  verdict: Verdict;
  policy: { mean_min: number; dim_min: number };
  failures: Record<string, string>;
}

export interface ReviewRecord {
  caption_id: string;
  reviewer: string;
  decision: Verdict;
  note: string;
  decided_at: string;
}

/** One row of GET /sites/{id}/captions: candidate joined with its judgement
 * and any human decision. */
export interface CaptionRow {
  caption: CaptionCandidate;
  scorecard: Scorecard | null;
  review: ReviewRecord | null;
}

export interface EvidenceChunk {
  chunk_id: string;
  doc_id: string;
  text: string;
  token_span: [number, number];
  metadata: Record<string, unknown>;
}

export interface TraceIteration {
  query: string;
  routed_sections: string[];
  caption_hits: number;
  document_hits: number;
  sufficient: boolean;
}

export interface CascadeTrace {
  iterations: TraceIteration[];
  final_query: string;
}

export interface RagAnswer {
  refused: false;
  text: string;
  caption_sources: string[];
  document_sources: [string, string][];
  evidence: EvidenceChunk[];
  trace?: CascadeTrace;
}

/** Declining to answer is data, not an error. */
export interface RagRefusal {
  refused: true;
  reason: string;
  trace?: CascadeTrace;
}

export type RagResult = RagAnswer | RagRefusal;

export type RagMode = "flat" | "agentic";

export const RENDER_LAYERS = ["rgb", "ndvi", "ndbi", "fmi", "udm"] as const;

export type RenderLayer = (typeof RENDER_LAYERS)[number];
