/**
 * Query console presentation. Answers arrive as one text block with the
 * source log appended after a blank line; the console shows the log lines
 * verbatim, never reformatted, so what the operator reads is exactly what
 * the service attributed. Refusals render as their own card.
 */

import type { CascadeTrace, RagMode, RagResult } from "./types.js";

const LOG_HEADER = "Caption Sources:";

export interface ConsoleView {
  kind: "answer" | "refusal";
  /** answer text above the source log; empty for refusals */
  answerBody: string;
  /** untouched source log lines, starting with the caption header */
  sourceLog: string[];
  captionSources: string[];
  documentSources: [string, string][];
  /** refusal explanation, absent on answers */
  reason: string | null;
  trace: CascadeTrace | null;
  /** the trace panel exists only in agentic mode and only when a trace came back */
  tracePanelVisible: boolean;
}

function splitSourceLog(text: string): { body: string; log: string[] } {
  const marker = `\n\n${LOG_HEADER}`;
  const at = text.lastIndexOf(marker);
  if (at < 0) return { body: text, log: [] };
  return {
    body: text.slice(0, at),
    log: text.slice(at + 2).split("\n"),
  };
}

export function present(result: RagResult, mode: RagMode): ConsoleView {
  const trace = result.trace ?? null;
  const tracePanelVisible = mode === "agentic" && trace !== null;
  if (result.refused) {
    return {
      kind: "refusal",
      answerBody: "",
      sourceLog: [],
      captionSources: [],
      documentSources: [],
      reason: result.reason,
      trace,
      tracePanelVisible,
    };
  }
  const { body, log } = splitSourceLog(result.text);
  return {
    kind: "answer",
    answerBody: body,
    sourceLog: log,
    captionSources: result.caption_sources,
    documentSources: result.document_sources,
    reason: null,
    trace,
    tracePanelVisible,
  };
}
