/**
 * Request handling shared by the server and the batch tools: render the
 * prompt, drive the backend, parse/validate the generation, and flag what
 * cannot be salvaged.
 */

import { Backend } from './backends.js';
import { ScorerRequest, ScorerResponse, errorResponse } from './protocol.js';
import { TEMPLATE_IDS, TemplateId, renderDecisionPrompt, renderRephrasePrompt } from './templates.js';

export interface FlaggedItem {
  id: string;
  reason: string;
  raw: string;
}

function templateFor(promptId: string): TemplateId {
  return (TEMPLATE_IDS as readonly string[]).includes(promptId) ? (promptId as TemplateId) : 'V1';
}

/** First whitespace-delimited token of an unconstrained generation, bare. */
export function parseFirstToken(generation: string): string {
  const first = generation.trim().split(/\s+/)[0] ?? '';
  return first.replace(/^["'`([{]+|["'`)\]}.,:;!?]+$/g, '');
}

export function matchLabel(generation: string, labels: [string, string]): string | null {
  const token = parseFirstToken(generation);
  if (token === labels[0] || token === labels[1]) return token;
  const upper = token.toUpperCase();
  if (upper === labels[0]) return labels[0];
  if (upper === labels[1]) return labels[1];
  return null;
}

export async function handleScore(backend: Backend, request: ScorerRequest): Promise<ScorerResponse> {
  const labels = request.labels!;
  const logprobs = await backend.score(request.text, labels, request.prompt_id);
  for (const token of labels) {
    if (!Number.isFinite(logprobs[token])) {
      return errorResponse(request.id, 'backend', `non-finite logprob for ${token}`);
    }
  }
  return { id: request.id, logprobs };
}

/** One label with a single retry on unparseable output; null means flagged. */
export async function resolveLabel(
  backend: Backend,
  request: ScorerRequest,
): Promise<{ label: string | null; raw: string }> {
  const labels = request.labels!;
  let raw = '';
  for (let attempt = 0; attempt < 2; attempt += 1) {
    raw = await backend.generateLabel(request.text, labels, request.prompt_id);
    const matched = backend.constrained && (raw === labels[0] || raw === labels[1])
      ? raw
      : matchLabel(raw, labels);
    if (matched !== null) {
      return { label: matched, raw };
    }
  }
  return { label: null, raw };
}

export async function handleLabel(backend: Backend, request: ScorerRequest): Promise<ScorerResponse> {
  const { label, raw } = await resolveLabel(backend, request);
  if (label === null) {
    return errorResponse(request.id, 'unparseable', `generation ${JSON.stringify(raw.slice(0, 80))}`);
  }
  return { id: request.id, label };
}

/** Strip wrapping quotes and known preambles; null when unsalvageable. */
export function filterRephrased(generation: string): { text: string; flagged?: string } | null {
  let text = generation.trim();
  let flagged: string | undefined;
  const preamble = text.match(/^rephrased text:\s*/i);
  if (preamble) {
    text = text.slice(preamble[0].length).trim();
    flagged = 'stripped preamble';
  }
  const quoted = text.match(/^(["'])(.*)\1$/s);
  if (quoted) {
    text = quoted[2].trim();
    flagged = flagged ? `${flagged}; stripped quotes` : 'stripped quotes';
  }
  if (text.length === 0) {
    return null;
  }
  return flagged ? { text, flagged } : { text };
}

export async function handleRephrase(backend: Backend, request: ScorerRequest): Promise<ScorerResponse> {
  if (request.text.trim().length === 0) {
    return errorResponse(request.id, 'bad_request', 'empty original text');
  }
  const rendered = renderRephrasePrompt({
    otherFields: request.other_fields ?? {},
    targetColumn: request.target_column ?? 'text',
    targetText: request.text,
    instruction: request.instruction ?? 'Rephrase the text while staying truthful to the original.',
  });
  const generation = await backend.rephrase(request.text, rendered);
  const filtered = filterRephrased(generation);
  if (filtered === null) {
    // validation failure: the original text passes through, flagged
    return { id: request.id, text: request.text, flagged: 'validation failed; original passed through' };
  }
  return filtered.flagged
    ? { id: request.id, text: filtered.text, flagged: filtered.flagged }
    : { id: request.id, text: filtered.text };
}

export async function handleRequest(backend: Backend, request: ScorerRequest): Promise<ScorerResponse> {
  try {
    if (request.mode === 'score') return await handleScore(backend, request);
    if (request.mode === 'label') return await handleLabel(backend, request);
    return await handleRephrase(backend, request);
  } catch (exc) {
    return errorResponse(request.id, 'backend', exc instanceof Error ? exc.message : String(exc));
  }
}

/** Render what a decision backend would actually see (used by HTTP backends and tools). */
export function renderedPrompt(request: ScorerRequest): string {
  const labels = request.labels ?? ['SELECT', 'PASS'];
  return renderDecisionPrompt(templateFor(request.prompt_id), labels[0], labels[1], request.text);
}

export interface BatchResult {
  responses: ScorerResponse[];
  manifest: FlaggedItem[];
}

export async function labelBatch(backend: Backend, requests: ScorerRequest[]): Promise<BatchResult> {
  const responses: ScorerResponse[] = [];
  const manifest: FlaggedItem[] = [];
  for (const request of requests) {
    const { label, raw } = await resolveLabel(backend, request);
    if (label === null) {
      manifest.push({ id: request.id, reason: 'unparseable after retry', raw: raw.slice(0, 200) });
      responses.push(errorResponse(request.id, 'unparseable', 'no valid token after retry'));
    } else {
      responses.push({ id: request.id, label });
    }
  }
  return { responses, manifest };
}

export async function rephraseBatch(backend: Backend, requests: ScorerRequest[]): Promise<BatchResult> {
  const responses: ScorerResponse[] = [];
  const manifest: FlaggedItem[] = [];
  for (const request of requests) {
    const response = await handleRephrase(backend, request);
    if ('flagged' in response && response.flagged) {
      manifest.push({ id: request.id, reason: response.flagged, raw: '' });
    } else if ('error' in response) {
      manifest.push({ id: request.id, reason: response.error.message, raw: '' });
    }
    responses.push(response);
  }
  return { responses, manifest };
}
