/**
 * Typed client for the pipeline service. This is the only place the UI
 * talks to the outside world; every write it performs is one of the
 * documented endpoint payloads.
 */

import type {
  CaptionRow,
  LabelSummary,
  RagMode,
  RagResult,
  RenderLayer,
  ReviewRecord,
  ScribbleAck,
  SiteRecord,
  TrainSummary,
  Verdict,
} from "./types.js";
import type { StrokeCollection } from "./strokes.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx response, carrying the service's machine-readable code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function raise(resp: Response): Promise<never> {
  let code = "unknown";
  let message = `HTTP ${resp.status}`;
  try {
    const body = (await resp.json()) as { error?: { code?: string; message?: string } };
    if (body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the fallback
  }
  throw new ApiError(resp.status, code, message);
}

export class ReviewApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) await raise(resp);
    return (await resp.json()) as T;
  }

  listSites(): Promise<SiteRecord[]> {
    return this.request("GET", "/sites");
  }

  getSite(siteId: string): Promise<SiteRecord> {
    return this.request("GET", `/sites/${encodeURIComponent(siteId)}`);
  }

  /** URL for an <img> tag; the service answers image/png. */
  renderUrl(siteId: string, layer: RenderLayer): string {
    return `${this.baseUrl}/sites/${encodeURIComponent(siteId)}/render/${layer}`;
  }

  saveScribbles(siteId: string, collection: StrokeCollection): Promise<ScribbleAck> {
    return this.request("POST", `/sites/${encodeURIComponent(siteId)}/scribbles`, collection);
  }

  trainUdm(siteId: string): Promise<TrainSummary> {
    return this.request("POST", `/sites/${encodeURIComponent(siteId)}/udm/train`);
  }

  classifyUdm(siteId: string): Promise<LabelSummary> {
    return this.request("POST", `/sites/${encodeURIComponent(siteId)}/udm/classify`);
  }

  captionsForSite(siteId: string): Promise<CaptionRow[]> {
    return this.request("GET", `/sites/${encodeURIComponent(siteId)}/captions`);
  }

  review(
    captionId: string,
    decision: Verdict,
    note = "",
    reviewer = "operator",
  ): Promise<ReviewRecord> {
    return this.request("POST", `/captions/${encodeURIComponent(captionId)}/review`, {
      decision,
      note,
      reviewer,
    });
  }

  ragQuery(query: string, mode: RagMode): Promise<RagResult> {
    return this.request("POST", "/rag/query", { query, mode });
  }
}
