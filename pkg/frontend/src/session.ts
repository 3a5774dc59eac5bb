/**
 * Review-session state machine: queue navigation, keyboard-first verdicts,
 * optimistic-concurrency conflict handling, and an offline retry buffer.
 *
 * Invariants the tests pin down:
 *  - at most one in-flight-or-buffered verdict per sample; nothing is ever
 *    sent twice within a session;
 *  - a version conflict refetches the item and surfaces it to the reviewer,
 *    it never overwrites silently;
 *  - a transport failure parks the verdict in the buffer; flush() retries
 *    (call it on reconnect);
 *  - all displayed metrics come from the service verbatim; the session keeps
 *    only navigation state.
 *
 * Undo ("u") can only revert verdicts that have not reached the service yet,
 * i.e. buffered ones; applied verdicts are final from the UI's perspective.
 */

import { ApiRequestError, ReviewApiClient, StatsSnapshot } from './api.js';
import type { QueueItem, VerdictAction, VerdictRequest } from './types.js';

export type SubmitOutcome =
  | 'applied'
  | 'buffered'
  | 'conflict'
  | 'rejected'
  | 'duplicate'
  | 'no_item';

export interface SessionEvents {
  onConflict?: (sampleId: string, refreshed: QueueItem | null) => void;
  onError?: (sampleId: string, message: string) => void;
}

interface BufferedVerdict {
  request: VerdictRequest;
  queueIndex: number;
}

export class ReviewSession {
  round = 0;
  classes: string[] = [];
  queue: QueueItem[] = [];
  cursor = 0;
  pageSize: number;
  stats: StatsSnapshot | null = null;
  statsStale = false;

  private buffer: BufferedVerdict[] = [];
  private decided = new Set<string>(); // sent or buffered sample ids
  private events: SessionEvents;

  constructor(
    private readonly api: ReviewApiClient,
    options: { pageSize?: number; events?: SessionEvents } = {},
  ) {
    this.pageSize = options.pageSize ?? 50;
    this.events = options.events ?? {};
  }

  /** (Re)build the whole session from the service; refresh-safe by design. */
  async load(round: number, kind?: string): Promise<void> {
    const rounds = await this.api.getRounds();
    this.classes = rounds.classes;
    this.round = round;
    this.queue = await this.api.getQueue(round, kind);
    this.cursor = 0;
    this.buffer = [];
    this.decided = new Set();
    await this.refreshStats();
  }

  async refreshStats(): Promise<void> {
    try {
      this.stats = await this.api.getStats(this.round);
      this.statsStale = false;
    } catch {
      this.statsStale = true; // keep the last snapshot, mark it stale
    }
  }

  current(): QueueItem | null {
    return this.queue[this.cursor] ?? null;
  }

  page(): number {
    return Math.floor(this.cursor / this.pageSize);
  }

  pageItems(page = this.page()): QueueItem[] {
    return this.queue.slice(page * this.pageSize, (page + 1) * this.pageSize);
  }

  pageCount(): number {
    return Math.max(1, Math.ceil(this.queue.length / this.pageSize));
  }

  pendingCount(): number {
    return this.buffer.length;
  }

  isDecided(sampleId: string): boolean {
    return this.decided.has(sampleId);
  }

  advance(): void {
    for (let i = this.cursor + 1; i < this.queue.length; i++) {
      const item = this.queue[i];
      if (item && !this.decided.has(item.sample_id)) {
        this.cursor = i;
        return;
      }
    }
    this.cursor = Math.min(this.cursor + 1, Math.max(this.queue.length - 1, 0));
  }

  back(): void {
    this.cursor = Math.max(0, this.cursor - 1);
  }

  async certify(): Promise<SubmitOutcome> {
    return this.submit('certify');
  }

  async reject(): Promise<SubmitOutcome> {
    return this.submit('reject');
  }

  async ambiguous(): Promise<SubmitOutcome> {
    return this.submit('ambiguous');
  }

  /** Relabeling to the current label means "the label is right": certify. */
  async relabel(newLabel: string): Promise<SubmitOutcome> {
    const item = this.current();
    if (!item) return 'no_item';
    if (newLabel === item.label) return this.submit('certify');
    return this.submit('relabel', newLabel);
  }

  async submit(action: VerdictAction, newLabel?: string): Promise<SubmitOutcome> {
    const item = this.current();
    if (!item) return 'no_item';
    if (this.decided.has(item.sample_id)) return 'duplicate';
    const request: VerdictRequest = {
      sample_id: item.sample_id,
      action,
      expected_version: item.version,
      new_label: newLabel ?? null,
      round: item.round,
    };
    try {
      const response = await this.api.postVerdict(request);
      item.version = response.version;
      this.decided.add(item.sample_id);
      this.advance();
      void this.refreshStats();
      return 'applied';
    } catch (error) {
      if (error instanceof ApiRequestError) {
        if (error.isConflict) {
          const refreshed = await this.refetchItem(item.sample_id);
          this.events.onConflict?.(item.sample_id, refreshed);
          return 'conflict';
        }
        this.events.onError?.(item.sample_id, error.message);
        return 'rejected';
      }
      // Transport failure: park the verdict for a later flush.
      this.buffer.push({ request, queueIndex: this.cursor });
      this.decided.add(item.sample_id);
      this.advance();
      return 'buffered';
    }
  }

  /**
   * Non-blocking refresh after a conflict: pull the item's current state and
   * splice it into the queue (or drop it when another reviewer resolved it).
   */
  private async refetchItem(sampleId: string): Promise<QueueItem | null> {
    try {
      const fresh = await this.api.getQueue(this.round);
      const index = this.queue.findIndex((q) => q.sample_id === sampleId);
      const updated = fresh.find((q) => q.sample_id === sampleId) ?? null;
      if (index >= 0) {
        if (updated) {
          this.queue[index] = updated;
        } else {
          this.queue.splice(index, 1);
          this.cursor = Math.min(this.cursor, Math.max(this.queue.length - 1, 0));
        }
      }
      void this.refreshStats();
      return updated;
    } catch {
      return null;
    }
  }

  /** Retry buffered verdicts in order; stops at the first transport failure. */
  async flush(): Promise<{ applied: number; remaining: number }> {
    let applied = 0;
    while (this.buffer.length > 0) {
      const next = this.buffer[0]!;
      try {
        const response = await this.api.postVerdict(next.request);
        const item = this.queue.find((q) => q.sample_id === next.request.sample_id);
        if (item) item.version = response.version;
        this.buffer.shift();
        applied += 1;
      } catch (error) {
        if (error instanceof ApiRequestError) {
          // The sample changed while we were offline; hand it back for review.
          this.buffer.shift();
          this.decided.delete(next.request.sample_id);
          if (error.isConflict) {
            const refreshed = await this.refetchItem(next.request.sample_id);
            this.events.onConflict?.(next.request.sample_id, refreshed);
          } else {
            this.events.onError?.(next.request.sample_id, error.message);
          }
          continue;
        }
        break; // still offline
      }
    }
    void this.refreshStats();
    return { applied, remaining: this.buffer.length };
  }

  /** Revert the most recent verdict that has not reached the service yet. */
  undoLast(): boolean {
    const last = this.buffer.pop();
    if (!last) return false;
    this.decided.delete(last.request.sample_id);
    this.cursor = Math.min(last.queueIndex, Math.max(this.queue.length - 1, 0));
    return true;
  }

  /**
   * Keyboard map: digits pick a class label (1..9 then 0 for the tenth),
   * c = certify, x = reject, a = ambiguous, u = undo last unsent,
   * n/p = navigate.
   */
  async handleKey(key: string): Promise<SubmitOutcome | 'moved' | 'undone' | 'ignored'> {
    if (key >= '0' && key <= '9') {
      const index = key === '0' ? 9 : Number(key) - 1;
      const label = this.classes[index];
      if (label === undefined) return 'ignored';
      return this.relabel(label);
    }
    switch (key) {
      case 'c':
        return this.certify();
      case 'x':
        return this.reject();
      case 'a':
        return this.ambiguous();
      case 'u':
        return this.undoLast() ? 'undone' : 'ignored';
      case 'n':
      case 'ArrowRight':
        this.advance();
        return 'moved';
      case 'p':
      case 'ArrowLeft':
        this.back();
        return 'moved';
      default:
        return 'ignored';
    }
  }
}
