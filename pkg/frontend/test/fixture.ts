/**
 * In-memory fixture implementing the review service contract: versioned
 * records, queue ordering (suspect tail by descending loss, then confident
 * head ascending), optimistic-concurrency 409s, and live stats. An http
 * adapter serves it over a real socket for client tests; `fetchFor` routes
 * requests in-memory and can simulate an offline network.
 */

import * as http from 'node:http';
import type { AddressInfo } from 'node:net';
import type { FetchLike } from '../src/api.js';
import type { FlagKind, QueueItem, VerdictRequest } from '../src/types.js';

interface FixtureRecord {
  sample_id: string;
  label: string;
  suggested_label: string | null;
  loss: number;
  flag_kind: FlagKind;
  round: number;
  version: number;
  status: 'unverified' | 'certified' | 'relabeled' | 'rejected' | 'ambiguous';
}

export const CLASSES = ['i', 'ii', 'iii', 'iv', 'v', 'vi', 'vii', 'viii', 'ix', 'x'];

export class FixtureService {
  records = new Map<string, FixtureRecord>();
  round = 1;
  offline = false;
  requestLog: string[] = [];

  constructor(headCount: number, tailCount: number) {
    for (let i = 0; i < headCount; i++) {
      const id = `h${String(i).padStart(4, '0')}`;
      this.records.set(id, {
        sample_id: id,
        label: CLASSES[i % 10]!,
        suggested_label: null,
        loss: 0.001 * (i + 1),
        flag_kind: 'confident_head',
        round: this.round,
        version: 1,
        status: 'unverified',
      });
    }
    for (let i = 0; i < tailCount; i++) {
      const id = `t${String(i).padStart(4, '0')}`;
      this.records.set(id, {
        sample_id: id,
        label: CLASSES[i % 10]!,
        suggested_label: CLASSES[(i + 1) % 10]!,
        loss: 5.0 + 0.01 * i,
        flag_kind: 'suspect_tail',
        round: this.round,
        version: 1,
        status: 'unverified',
      });
    }
  }

  queuePayload(round: number, kind?: string): QueueItem[] {
    const pending = [...this.records.values()].filter(
      (r) => r.round === round && r.status === 'unverified',
    );
    const tail = pending
      .filter((r) => r.flag_kind === 'suspect_tail')
      .sort((a, b) => b.loss - a.loss || a.sample_id.localeCompare(b.sample_id));
    const head = pending
      .filter((r) => r.flag_kind === 'confident_head')
      .sort((a, b) => a.loss - b.loss || a.sample_id.localeCompare(b.sample_id));
    const blocks =
      kind === 'suspect_tail' ? tail : kind === 'confident_head' ? head : [...tail, ...head];
    return blocks.map((r) => ({
      sample_id: r.sample_id,
      image_url: `/api/sample/${r.sample_id}/image`,
      label: r.label,
      suggested_label: r.suggested_label,
      loss: r.loss,
      flag_kind: r.flag_kind,
      round: r.round,
      version: r.version,
    }));
  }

  statsPayload(round: number): Record<string, unknown> {
    const flagged = [...this.records.values()].filter((r) => r.round === round);
    const reviewed = flagged.filter((r) => r.status !== 'unverified');
    let confirmed = 0;
    for (const r of reviewed) {
      if (r.flag_kind === 'confident_head' && r.status === 'certified') confirmed += 1;
      if (r.flag_kind === 'suspect_tail' && r.status !== 'certified') confirmed += 1;
    }
    return {
      round,
      reviewed: reviewed.length,
      total: flagged.length,
      pipeline_accuracy: reviewed.length ? confirmed / reviewed.length : null,
      ratio_validated: reviewed.length / Math.max(this.records.size, 1),
      train_size: reviewed.length,
      validation_size: 0,
    };
  }

  verdict(body: VerdictRequest): { status: number; body: unknown } {
    const record = this.records.get(body.sample_id);
    if (!record) {
      return { status: 404, body: { code: 'unknown_sample', message: 'no such sample' } };
    }
    if (body.expected_version !== record.version) {
      return {
        status: 409,
        body: {
          code: 'version_conflict',
          message: `expected ${body.expected_version}, found ${record.version}`,
          sample_id: body.sample_id,
        },
      };
    }
    if (record.status !== 'unverified') {
      return {
        status: 400,
        body: { code: 'invalid_verdict', message: 'already decided', sample_id: body.sample_id },
      };
    }
    if (body.action === 'relabel') {
      if (!body.new_label || body.new_label === record.label) {
        return {
          status: 400,
          body: { code: 'invalid_verdict', message: 'bad relabel', sample_id: body.sample_id },
        };
      }
      record.label = body.new_label;
      record.status = 'relabeled';
    } else if (body.action === 'certify') {
      record.status = 'certified';
    } else if (body.action === 'reject') {
      record.status = 'rejected';
    } else if (body.action === 'ambiguous') {
      record.status = 'ambiguous';
    } else {
      return {
        status: 400,
        body: { code: 'invalid_verdict', message: 'unknown action', sample_id: body.sample_id },
      };
    }
    record.version += 1;
    return {
      status: 200,
      body: {
        sample_id: record.sample_id,
        status: record.status,
        label: record.label,
        version: record.version,
        round: record.round,
      },
    };
  }

  handle(method: string, url: URL, body: string): { status: number; body: string } {
    this.requestLog.push(`${method} ${url.pathname}${url.search}`);
    if (method === 'GET' && url.pathname === '/api/rounds') {
      return {
        status: 200,
        body: JSON.stringify({
          rounds: [
            {
              round: this.round,
              flagged: this.records.size,
              reviewed: (this.statsPayload(this.round) as { reviewed: number }).reviewed,
            },
          ],
          classes: CLASSES,
        }),
      };
    }
    if (method === 'GET' && url.pathname === '/api/queue') {
      const round = Number(url.searchParams.get('round'));
      if (round !== this.round) {
        return { status: 404, body: JSON.stringify({ code: 'unknown_round', message: 'nope' }) };
      }
      const kind = url.searchParams.get('kind') ?? undefined;
      return { status: 200, body: JSON.stringify(this.queuePayload(round, kind)) };
    }
    if (method === 'GET' && url.pathname === '/api/stats') {
      const round = Number(url.searchParams.get('round'));
      if (round !== this.round) {
        return { status: 404, body: JSON.stringify({ code: 'unknown_round', message: 'nope' }) };
      }
      return { status: 200, body: JSON.stringify(this.statsPayload(round)) };
    }
    if (method === 'POST' && url.pathname === '/api/verdict') {
      const result = this.verdict(JSON.parse(body) as VerdictRequest);
      return { status: result.status, body: JSON.stringify(result.body) };
    }
    return { status: 404, body: JSON.stringify({ code: 'not_found', message: url.pathname }) };
  }

  /** In-memory fetch with offline simulation; no sockets involved. */
  fetchFor(): FetchLike {
    return async (rawUrl, init) => {
      if (this.offline) {
        throw new TypeError('fetch failed (offline)');
      }
      const url = new URL(rawUrl, 'http://fixture');
      const result = this.handle(init?.method ?? 'GET', url, (init?.body as string) ?? '');
      return new Response(result.body, {
        status: result.status,
        headers: { 'content-type': 'application/json' },
      });
    };
  }

  /** Real HTTP adapter for exercising the client over a socket. */
  listen(): Promise<{ port: number; close: () => Promise<void> }> {
    const server = http.createServer((req, res) => {
      let data = '';
      req.on('data', (chunk) => (data += chunk));
      req.on('end', () => {
        const url = new URL(req.url ?? '/', 'http://127.0.0.1');
        const result = this.handle(req.method ?? 'GET', url, data);
        res.writeHead(result.status, { 'content-type': 'application/json' });
        res.end(result.body);
      });
    });
    return new Promise((resolve) => {
      server.listen(0, '127.0.0.1', () => {
        const port = (server.address() as AddressInfo).port;
        resolve({
          port,
          close: () => new Promise((done) => server.close(() => done())),
        });
      });
    });
  }
}
