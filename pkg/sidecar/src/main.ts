#!/usr/bin/env node
/**
 * scorer-sidecar CLI.
 *
 *   serve          --transport tcp|stdio [--port N] [--backend mock|http] [--model M] [--base-url U]
 *   label-batch    --in requests.jsonl --out responses.jsonl [--manifest flags.jsonl] [--backend ...]
 *   rephrase-batch --in requests.jsonl --out responses.jsonl [--manifest flags.jsonl] [--backend ...]
 */

import { readFileSync, writeFileSync } from 'node:fs';
import { parseArgs } from 'node:util';

import { Backend, HttpLlmBackend, MockBackend } from './backends.js';
import { labelBatch, rephraseBatch } from './labeler.js';
import { ScorerRequest, validateRequest } from './protocol.js';
import { serveStdio, serveTcp } from './server.js';

function makeBackend(values: Record<string, string | boolean | undefined>): Backend {
  const kind = (values.backend as string) ?? 'mock';
  if (kind === 'mock') return new MockBackend();
  if (kind === 'http') {
    const model = values.model as string | undefined;
    if (!model) {
      throw new Error('--model is required for the http backend');
    }
    return new HttpLlmBackend({
      model,
      baseUrl: values['base-url'] as string | undefined,
      apiKey: process.env.SCORER_API_KEY,
    });
  }
  throw new Error(`unknown backend ${JSON.stringify(kind)}`);
}

function readRequests(path: string): ScorerRequest[] {
  const requests: ScorerRequest[] = [];
  for (const line of readFileSync(path, 'utf8').split('\n')) {
    if (!line.trim()) continue;
    const checked = validateRequest(JSON.parse(line));
    if (!checked.ok) {
      throw new Error(`invalid request line: ${JSON.stringify(checked.response)}`);
    }
    requests.push(checked.request);
  }
  return requests;
}

function writeLines(path: string, rows: unknown[]): void {
  writeFileSync(path, rows.map((r) => JSON.stringify(r)).join('\n') + (rows.length ? '\n' : ''), 'utf8');
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  const { values } = parseArgs({
    args: rest,
    options: {
      transport: { type: 'string', default: 'tcp' },
      port: { type: 'string', default: '7331' },
      host: { type: 'string', default: '127.0.0.1' },
      backend: { type: 'string', default: 'mock' },
      model: { type: 'string' },
      'base-url': { type: 'string' },
      in: { type: 'string' },
      out: { type: 'string' },
      manifest: { type: 'string' },
    },
  });
  const backend = makeBackend(values);

  if (command === 'serve') {
    if (values.transport === 'stdio') {
      await serveStdio(backend);
      return 0;
    }
    if (values.transport === 'tcp') {
      const server = await serveTcp(backend, Number(values.port), values.host as string);
      const address = server.address();
      const bound = address !== null && typeof address === 'object' ? address.port : values.port;
      process.stderr.write(`scorer-sidecar: ${backend.id} backend listening on tcp:${values.host}:${bound}\n`);
      return await new Promise<number>(() => undefined); // runs until killed
    }
    throw new Error(`unknown transport ${JSON.stringify(values.transport)}`);
  }

  if (command === 'label-batch' || command === 'rephrase-batch') {
    if (!values.in || !values.out) {
      throw new Error(`${command} requires --in and --out`);
    }
    const requests = readRequests(values.in as string);
    const result = command === 'label-batch'
      ? await labelBatch(backend, requests)
      : await rephraseBatch(backend, requests);
    writeLines(values.out as string, result.responses);
    if (values.manifest) {
      writeLines(values.manifest as string, result.manifest);
    }
    process.stderr.write(`${command}: ${result.responses.length} responses, `
      + `${result.manifest.length} flagged\n`);
    return 0;
  }

  process.stderr.write('usage: scorer-sidecar serve|label-batch|rephrase-batch [options]\n');
  return 2;
}

main().then(
  (code) => {
    if (code !== 0) process.exitCode = code;
  },
  (error) => {
    process.stderr.write(`scorer-sidecar: ${error instanceof Error ? error.message : error}\n`);
    process.exitCode = 1;
  },
);
