/**
 * Protocol server over TCP or stdio. Each connection performs the one-line
 * version handshake, then answers requests one at a time in arrival order.
 * Malformed requests produce per-request error responses; the process stays
 * up.
 */

import { createInterface } from 'node:readline';
import { createServer, Server, Socket } from 'node:net';
import { Readable, Writable } from 'node:stream';

import { Backend } from './backends.js';
import { handleRequest } from './labeler.js';
import { PROTOCOL_VERSION, encodeLine, errorResponse, validateRequest } from './protocol.js';

async function serveStream(backend: Backend, input: Readable, output: Writable): Promise<void> {
  const lines = createInterface({ input, crlfDelay: Infinity });
  let shaken = false;
  for await (const line of lines) {
    if (line.trim().length === 0) continue;
    if (!shaken) {
      let hello: unknown;
      try {
        hello = JSON.parse(line);
      } catch {
        output.write(encodeLine({ ok: false, error: 'handshake must be JSON' }));
        return;
      }
      const version = (hello as Record<string, unknown>)?.version;
      if (version !== PROTOCOL_VERSION) {
        output.write(encodeLine({ ok: false, error: `unsupported version ${JSON.stringify(version)}` }));
        return;
      }
      output.write(encodeLine({ version: PROTOCOL_VERSION, ok: true }));
      shaken = true;
      continue;
    }
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch {
      output.write(encodeLine(errorResponse(null, 'bad_json', 'request line is not valid JSON')));
      continue;
    }
    const checked = validateRequest(parsed);
    if (!checked.ok) {
      output.write(encodeLine(checked.response));
      continue;
    }
    const response = await handleRequest(backend, checked.request);
    output.write(encodeLine(response));
  }
}

export function serveTcp(backend: Backend, port: number, host = '127.0.0.1'): Promise<Server> {
  const server = createServer((socket: Socket) => {
    socket.on('error', () => socket.destroy());
    void serveStream(backend, socket, socket).then(
      () => socket.end(),
      () => socket.destroy(),
    );
  });
  return new Promise((resolve, reject) => {
    server.once('error', reject);
    server.listen(port, host, () => resolve(server));
  });
}

export async function serveStdio(backend: Backend): Promise<void> {
  await serveStream(backend, process.stdin, process.stdout);
}
