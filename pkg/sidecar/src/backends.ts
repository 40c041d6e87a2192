/**
 * Scorer backends. Every backend is deterministic given its inputs: score
 * mode returns finite natural-log values for both candidate tokens, and
 * label mode resolves to exactly one of the two tokens (possibly after a
 * parse of an unconstrained generation).
 */

import { createHash } from 'node:crypto';

export interface Backend {
  readonly id: string;
  readonly model: string;
  readonly batchSize: number;
  /** whether decoding can be restricted to the two candidate tokens */
  readonly constrained: boolean;
  /** natural-log probabilities for both tokens */
  score(text: string, labels: [string, string], promptId: string): Promise<Record<string, number>>;
  /** raw generation for a label request (a bare token when constrained) */
  generateLabel(text: string, labels: [string, string], promptId: string): Promise<string>;
  /** raw generation for a rephrase request */
  rephrase(text: string, rendered: string): Promise<string>;
}

/** Pseudo-probability of the positive token in [0.05, 0.95], from sha256. */
export function mockPositiveProbability(text: string, promptId: string): number {
  const digest = createHash('sha256').update(`${promptId}\x1f${text}`, 'utf8').digest('hex');
  const u = parseInt(digest.slice(0, 8), 16) / 0xffffffff;
  return 0.05 + 0.9 * u;
}

/**
 * Deterministic mock: a pure function of (text, token pair, prompt_id).
 * Scoring an empty text yields the same fixed distribution every time, which
 * is exactly the no-input convention clients use for null-model scores.
 */
export class MockBackend implements Backend {
  readonly id = 'mock';
  readonly model = 'mock-deterministic';
  readonly batchSize = 64;
  readonly constrained = true;

  async score(text: string, labels: [string, string], promptId: string): Promise<Record<string, number>> {
    const p = mockPositiveProbability(text, promptId);
    return { [labels[0]]: Math.log(p), [labels[1]]: Math.log(1 - p) };
  }

  async generateLabel(text: string, labels: [string, string], promptId: string): Promise<string> {
    const p = mockPositiveProbability(text, promptId);
    return p >= 0.5 ? labels[0] : labels[1];
  }

  /** Deterministic token shuffle keyed by a per-word hash. */
  async rephrase(text: string, _rendered: string): Promise<string> {
    const words = text.split(/\s+/).filter((w) => w.length > 0);
    const keyed = words.map((word, i) => ({
      word,
      key: createHash('sha256').update(`${word}:${i}:${text}`, 'utf8').digest('hex'),
    }));
    keyed.sort((a, b) => (a.key < b.key ? -1 : a.key > b.key ? 1 : 0));
    return keyed.map((k) => k.word).join(' ');
  }
}

interface ChatCompletionLogprob {
  token: string;
  logprob: number;
  top_logprobs?: { token: string; logprob: number }[];
}

export interface ChatCompletionResponse {
  choices: {
    message?: { content?: string | null };
    logprobs?: { content?: ChatCompletionLogprob[] | null } | null;
  }[];
}

export type ChatCaller = (body: Record<string, unknown>) => Promise<ChatCompletionResponse>;

function defaultCaller(baseUrl: string, apiKey: string | undefined): ChatCaller {
  return async (body) => {
    const response = await fetch(`${baseUrl.replace(/\/$/, '')}/v1/chat/completions`, {
      method: 'POST',
      headers: {
        'content-type': 'application/json',
        ...(apiKey ? { authorization: `Bearer ${apiKey}` } : {}),
      },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new Error(`chat completion failed: HTTP ${response.status}`);
    }
    return (await response.json()) as ChatCompletionResponse;
  };
}

/**
 * OpenAI-compatible chat-completions backend with greedy decoding and
 * logprob readout of the two candidate tokens. Version pinning of hosted
 * models is outside the sidecar's control; pass an explicit dated model
 * name where the provider offers one.
 */
export class HttpLlmBackend implements Backend {
  readonly id = 'http';
  readonly constrained = false;
  readonly batchSize: number;
  readonly model: string;
  private readonly call: ChatCaller;

  constructor(options: { model: string; baseUrl?: string; apiKey?: string; batchSize?: number; caller?: ChatCaller }) {
    this.model = options.model;
    this.batchSize = options.batchSize ?? 16;
    this.call = options.caller ?? defaultCaller(options.baseUrl ?? 'http://127.0.0.1:8000', options.apiKey);
  }

  private body(rendered: string, maxTokens: number, logprobs: boolean): Record<string, unknown> {
    return {
      model: this.model,
      messages: [{ role: 'user', content: rendered }],
      temperature: 0,
      max_tokens: maxTokens,
      ...(logprobs ? { logprobs: true, top_logprobs: 20 } : {}),
    };
  }

  async score(_text: string, labels: [string, string], _promptId: string, rendered?: string): Promise<Record<string, number>> {
    const response = await this.call(this.body(rendered ?? _text, 1, true));
    const content = response.choices[0]?.logprobs?.content;
    const top = content?.[0]?.top_logprobs ?? [];
    const found: Record<string, number> = {};
    for (const entry of top) {
      const token = entry.token.trim();
      if ((token === labels[0] || token === labels[1]) && !(token in found)) {
        found[token] = entry.logprob;
      }
    }
    for (const token of labels) {
      if (!(token in found) || !Number.isFinite(found[token])) {
        // unseen token: bound its mass by the smallest observed logprob
        const floor = Math.min(-20, ...top.map((t) => t.logprob));
        found[token] = floor;
      }
    }
    return { [labels[0]]: found[labels[0]], [labels[1]]: found[labels[1]] };
  }

  async generateLabel(_text: string, _labels: [string, string], _promptId: string, rendered?: string): Promise<string> {
    const response = await this.call(this.body(rendered ?? _text, 4, false));
    return response.choices[0]?.message?.content ?? '';
  }

  async rephrase(_text: string, rendered: string): Promise<string> {
    const response = await this.call(this.body(rendered, 1024, false));
    return response.choices[0]?.message?.content ?? '';
  }
}
