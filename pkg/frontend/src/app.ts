/**
 * Single-page wiring. All behaviour worth testing lives in the imported
 * modules; this file only binds them to the DOM, so it stays on the thin
 * side of the contract tests.
 */

import { ApiError, ReviewApi } from "./api.js";
import { CanvasSession } from "./canvas.js";
import { markers } from "./map.js";
import { applyDecision, buildQueue, pending, type QueueItem } from "./queue.js";
import { present, type ConsoleView } from "./rag.js";
import { STROKE_CLASSES, type StrokeClass } from "./strokes.js";
import { RENDER_LAYERS, type RagMode, type RenderLayer, type SiteRecord } from "./types.js";

const STROKE_COLORS: Record<StrokeClass, string> = {
  mining: "#d97706",
  urban: "#2563eb",
  negative: "#6b7280",
};

const MAP_W = 720;
const MAP_H = 360;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(err: unknown): void {
  const banner = el<HTMLDivElement>("error-banner");
  if (err instanceof ApiError) {
    banner.textContent = `${err.code} (${err.status}): ${err.message}`;
  } else {
    banner.textContent = String(err);
  }
  banner.hidden = false;
}

function clearError(): void {
  el<HTMLDivElement>("error-banner").hidden = true;
}

class App {
  private readonly api = new ReviewApi("");
  private sites: SiteRecord[] = [];
  private session: CanvasSession | null = null;
  private queue: QueueItem[] = [];
  private drawing = false;

  async start(): Promise<void> {
    await this.refreshSites();
    this.bindCanvas();
    this.bindControls();
    const first = this.sites[0];
    if (first) await this.select(first.site_id);
  }

  private async refreshSites(): Promise<void> {
    this.sites = await this.api.listSites();
    this.renderMap();
    this.renderSiteList();
  }

  private renderMap(): void {
    const svg = el<HTMLElement>("site-map");
    svg.innerHTML = "";
    for (const m of markers(this.sites, MAP_W, MAP_H)) {
      const dot = document.createElementNS("http://www.w3.org/2000/svg", "circle");
      dot.setAttribute("cx", m.x.toFixed(1));
      dot.setAttribute("cy", m.y.toFixed(1));
      dot.setAttribute("r", "5");
      dot.setAttribute("class", `marker status-${m.status}`);
      dot.addEventListener("click", () => void this.select(m.siteId));
      const title = document.createElementNS("http://www.w3.org/2000/svg", "title");
      title.textContent = `${m.name} (${m.status})`;
      dot.appendChild(title);
      svg.appendChild(dot);
    }
  }

  private renderSiteList(): void {
    const list = el<HTMLUListElement>("site-list");
    list.innerHTML = "";
    for (const site of this.sites) {
      const item = document.createElement("li");
      const link = document.createElement("a");
      link.href = "#";
      link.textContent = `${site.name} [${site.status}]`;
      link.addEventListener("click", (ev) => {
        ev.preventDefault();
        void this.select(site.site_id);
      });
      item.appendChild(link);
      list.appendChild(item);
    }
  }

  private async select(siteId: string): Promise<void> {
    clearError();
    this.session = new CanvasSession(siteId);
    el<HTMLHeadingElement>("site-title").textContent = siteId;
    this.showLayer("rgb");
    this.repaintStrokes();
    el<HTMLDivElement>("overlay-info").textContent = "";
    el<HTMLDivElement>("train-warning").hidden = true;
    await this.refreshQueue();
  }

  private bindControls(): void {
    for (const layer of RENDER_LAYERS) {
      el<HTMLButtonElement>(`layer-${layer}`).addEventListener("click", () =>
        this.showLayer(layer),
      );
    }
    for (const cls of STROKE_CLASSES) {
      el<HTMLInputElement>(`toggle-${cls}`).addEventListener("change", () => {
        this.session?.toggle(cls);
        this.repaintStrokes();
      });
    }
    el<HTMLButtonElement>("stroke-undo").addEventListener("click", () => {
      this.session?.undo();
      this.repaintStrokes();
    });
    el<HTMLButtonElement>("stroke-save").addEventListener("click", () => void this.save());
    el<HTMLButtonElement>("train-classify").addEventListener("click", () => void this.train());
    el<HTMLFormElement>("rag-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.ask();
    });
  }

  private bindCanvas(): void {
    const canvas = el<HTMLCanvasElement>("stroke-canvas");
    const toPixel = (ev: PointerEvent): [number, number] => {
      const rect = canvas.getBoundingClientRect();
      const sx = canvas.width / rect.width;
      const sy = canvas.height / rect.height;
      return [(ev.clientX - rect.left) * sx, (ev.clientY - rect.top) * sy];
    };
    canvas.addEventListener("pointerdown", (ev) => {
      if (!this.session) return;
      const cls = (el<HTMLSelectElement>("stroke-class").value || "mining") as StrokeClass;
      const width = Number(el<HTMLInputElement>("stroke-width").value) || 1;
      this.session.begin(cls, width);
      const [x, y] = toPixel(ev);
      this.session.extend(x, y);
      this.drawing = true;
      canvas.setPointerCapture(ev.pointerId);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!this.drawing || !this.session) return;
      const [x, y] = toPixel(ev);
      this.session.extend(x, y);
      this.repaintStrokes();
    });
    canvas.addEventListener("pointerup", () => {
      if (!this.drawing || !this.session) return;
      this.session.end();
      this.drawing = false;
      this.repaintStrokes();
    });
  }

  private showLayer(layer: RenderLayer): void {
    if (!this.session) return;
    this.session.activeLayer = layer;
    const img = el<HTMLImageElement>("scene-render");
    img.src = this.api.renderUrl(this.session.siteId, layer) + `?t=${Date.now()}`;
    img.onload = () => {
      const canvas = el<HTMLCanvasElement>("stroke-canvas");
      canvas.width = img.naturalWidth;
      canvas.height = img.naturalHeight;
      this.repaintStrokes();
    };
    img.onerror = () => showError(new ApiError(404, "not_found", `no ${layer} render yet`));
  }

  private repaintStrokes(): void {
    const canvas = el<HTMLCanvasElement>("stroke-canvas");
    const ctx = canvas.getContext("2d");
    if (!ctx || !this.session) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    for (const stroke of this.session.visibleStrokes()) {
      ctx.strokeStyle = STROKE_COLORS[stroke.className];
      ctx.lineWidth = stroke.widthPx;
      ctx.lineCap = "round";
      ctx.beginPath();
      stroke.points.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
      ctx.stroke();
    }
  }

  private async save(): Promise<void> {
    if (!this.session) return;
    clearError();
    try {
      const ack = await this.api.saveScribbles(this.session.siteId, this.session.serialize());
      el<HTMLDivElement>("save-status").textContent =
        `${ack.strokes} strokes saved, site ${ack.status}`;
      await this.refreshSites();
    } catch (err) {
      showError(err);
    }
  }

  private async train(): Promise<void> {
    if (!this.session) return;
    clearError();
    const warning = el<HTMLDivElement>("train-warning");
    try {
      const summary = await this.api.trainUdm(this.session.siteId);
      const badge = this.session.absorbTraining(summary);
      warning.hidden = badge === null;
      warning.textContent = badge ?? "";
      const labels = await this.api.classifyUdm(this.session.siteId);
      this.session.setOverlay(
        labels,
        this.api.renderUrl(this.session.siteId, "udm") + `?t=${Date.now()}`,
      );
      const counts = Object.entries(labels.counts)
        .map(([cls, n]) => `${cls}: ${n}`)
        .join(", ");
      el<HTMLDivElement>("overlay-info").textContent =
        `components ${counts} (${labels.labeled_px} px labeled)`;
      this.showLayer("udm");
    } catch (err) {
      showError(err);
    }
  }

  private async refreshQueue(): Promise<void> {
    if (!this.session) return;
    const rows = await this.api.captionsForSite(this.session.siteId);
    this.queue = buildQueue(rows, (siteId, layer) => this.api.renderUrl(siteId, layer));
    this.renderQueue();
  }

  private renderQueue(): void {
    const host = el<HTMLDivElement>("review-queue");
    host.innerHTML = "";
    for (const item of pending(this.queue)) {
      host.appendChild(this.queueCard(item));
    }
  }

  private queueCard(item: QueueItem): HTMLElement {
    const card = document.createElement("article");
    card.className = "caption-card";
    const text = document.createElement("p");
    text.textContent = item.text;
    card.appendChild(text);

    const scores = document.createElement("dl");
    for (const [dim, score] of Object.entries(item.scores ?? {})) {
      const dt = document.createElement("dt");
      dt.textContent = dim;
      const dd = document.createElement("dd");
      dd.textContent = String(score);
      scores.append(dt, dd);
    }
    card.appendChild(scores);

    for (const url of item.thumbnails) {
      const img = document.createElement("img");
      img.src = url;
      img.className = "thumb";
      card.appendChild(img);
    }

    if (item.verdict === "reject") {
      const note = document.createElement("p");
      note.className = "muted";
      note.textContent = "judge-rejected: read only";
      card.appendChild(note);
    } else if (item.decisionEnabled) {
      const note = document.createElement("input");
      note.placeholder = "review note";
      const accept = document.createElement("button");
      accept.textContent = "Accept";
      const reject = document.createElement("button");
      reject.textContent = "Reject";
      const decide = (decision: "accept" | "reject") => async () => {
        clearError();
        accept.disabled = reject.disabled = true;
        try {
          const record = await this.api.review(item.captionId, decision, note.value);
          this.queue = applyDecision(this.queue, record);
          await this.refreshSites();
          this.renderQueue();
        } catch (err) {
          showError(err);
          accept.disabled = reject.disabled = false;
        }
      };
      accept.addEventListener("click", () => void decide("accept")());
      reject.addEventListener("click", () => void decide("reject")());
      card.append(note, accept, reject);
    }
    return card;
  }

  private async ask(): Promise<void> {
    clearError();
    const query = el<HTMLInputElement>("rag-query").value.trim();
    if (!query) return;
    const mode = el<HTMLSelectElement>("rag-mode").value as RagMode;
    try {
      const result = await this.api.ragQuery(query, mode);
      this.renderConsole(present(result, mode));
    } catch (err) {
      showError(err);
    }
  }

  private renderConsole(view: ConsoleView): void {
    const card = el<HTMLDivElement>("rag-card");
    card.className = view.kind === "refusal" ? "refusal" : "answer";
    el<HTMLParagraphElement>("rag-body").textContent =
      view.kind === "refusal" ? `No answer: ${view.reason}` : view.answerBody;
    el<HTMLPreElement>("rag-sources").textContent = view.sourceLog.join("\n");

    const panel = el<HTMLDivElement>("rag-trace");
    panel.hidden = !view.tracePanelVisible;
    if (view.tracePanelVisible && view.trace) {
      const lines = view.trace.iterations.map(
        (it, i) =>
          `pass ${i + 1}: "${it.query}" sections=[${it.routed_sections.join(", ")}] ` +
          `captions=${it.caption_hits} documents=${it.document_hits} ` +
          (it.sufficient ? "sufficient" : "insufficient"),
      );
      lines.push(`final query: "${view.trace.final_query}"`);
      panel.textContent = lines.join("\n");
    }
  }
}

new App().start().catch(showError);
