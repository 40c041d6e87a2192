/**
 * v1 wire protocol: newline-delimited JSON over a byte stream.
 *
 * Handshake:  -> {"version": "v1"}
 *             <- {"version": "v1", "ok": true}
 * Requests:   -> {"id", "mode": "score"|"label"|"rephrase", "text", "labels": [pos, neg], "prompt_id", ...}
 * Responses:  <- {"id", "logprobs": {token: naturalLog}}
 *             <- {"id", "label": token}
 *             <- {"id", "text": rewritten}
 *             <- {"id", "error": {"code", "message"}}
 *
 * Logprobs travel as natural-log values; base conversion is the client's job.
 */

export const PROTOCOL_VERSION = 'v1';

export const PROMPT_IDS = ['V1', 'V2', 'V3', 'V4', 'dailymed', 'rephrase', 'custom'] as const;
export type PromptId = (typeof PROMPT_IDS)[number];

export type Mode = 'score' | 'label' | 'rephrase';

export interface ScorerRequest {
  id: string;
  mode: Mode;
  text: string;
  labels?: [string, string];
  prompt_id: PromptId;
  /** rephrase-mode extras */
  other_fields?: Record<string, string>;
  target_column?: string;
  instruction?: string;
}

export interface ErrorBody {
  code: string;
  message: string;
}

export type ScorerResponse =
  | { id: string | null; logprobs: Record<string, number> }
  | { id: string | null; label: string }
  | { id: string | null; text: string; flagged?: string }
  | { id: string | null; error: ErrorBody };

export function errorResponse(id: string | null, code: string, message: string): ScorerResponse {
  return { id, error: { code, message } };
}

/** Validate one parsed request line; never throws. */
export function validateRequest(raw: unknown): { ok: true; request: ScorerRequest } | { ok: false; response: ScorerResponse } {
  if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
    return { ok: false, response: errorResponse(null, 'bad_request', 'request must be a JSON object') };
  }
  const obj = raw as Record<string, unknown>;
  const id = typeof obj.id === 'string' ? obj.id : null;
  if (id === null) {
    return { ok: false, response: errorResponse(null, 'bad_request', 'string id required') };
  }
  const mode = obj.mode;
  if (mode !== 'score' && mode !== 'label' && mode !== 'rephrase') {
    return { ok: false, response: errorResponse(id, 'bad_request', `unknown mode ${JSON.stringify(mode)}`) };
  }
  const promptId = obj.prompt_id;
  if (typeof promptId !== 'string' || !(PROMPT_IDS as readonly string[]).includes(promptId)) {
    return { ok: false, response: errorResponse(id, 'unknown_prompt', `prompt_id ${JSON.stringify(promptId)}`) };
  }
  const text = typeof obj.text === 'string' ? obj.text : undefined;
  if (text === undefined) {
    return { ok: false, response: errorResponse(id, 'bad_request', 'text must be a string') };
  }
  let labels: [string, string] | undefined;
  if (mode === 'score' || mode === 'label') {
    const rawLabels = obj.labels;
    if (!Array.isArray(rawLabels) || rawLabels.length !== 2
        || rawLabels.some((t) => typeof t !== 'string' || t.length === 0)
        || rawLabels[0] === rawLabels[1]) {
      return { ok: false, response: errorResponse(id, 'bad_request', 'labels must list two distinct tokens') };
    }
    labels = [rawLabels[0], rawLabels[1]];
  }
  const request: ScorerRequest = {
    id,
    mode,
    text,
    labels,
    prompt_id: promptId as PromptId,
  };
  if (typeof obj.target_column === 'string') request.target_column = obj.target_column;
  if (typeof obj.instruction === 'string') request.instruction = obj.instruction;
  if (typeof obj.other_fields === 'object' && obj.other_fields !== null) {
    request.other_fields = Object.fromEntries(
      Object.entries(obj.other_fields as Record<string, unknown>)
        .filter(([, v]) => typeof v === 'string'),
    ) as Record<string, string>;
  }
  return { ok: true, request };
}

export function encodeLine(value: unknown): string {
  return `${JSON.stringify(value)}\n`;
}
