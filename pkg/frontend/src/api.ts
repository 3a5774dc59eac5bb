/**
 * Typed client for the review service.
 *
 * The only configuration is the service base URL. A fetch implementation can
 * be injected for tests. Non-2xx responses raise ApiRequestError carrying the
 * parsed {code, message} body; transport failures raise whatever fetch threw,
 * which callers treat as "offline".
 */

import type {
  ApiErrorPayload,
  QueueItem,
  RoundsPayload,
  RoundStats,
  VerdictRequest,
  VerdictResponse,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiRequestError extends Error {
  constructor(
    readonly status: number,
    readonly payload: ApiErrorPayload,
  ) {
    super(`${payload.code}: ${payload.message}`);
    this.name = 'ApiRequestError';
  }

  get isConflict(): boolean {
    return this.status === 409 && this.payload.code === 'version_conflict';
  }
}

/** Stats response with the exact bytes the service sent, for faithful display. */
export interface StatsSnapshot {
  stats: RoundStats;
  raw: string;
}

export class ReviewApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let payload: ApiErrorPayload;
      try {
        payload = (await response.json()) as ApiErrorPayload;
      } catch {
        payload = { code: 'unknown', message: `HTTP ${response.status}` };
      }
      throw new ApiRequestError(response.status, payload);
    }
    return response;
  }

  async getRounds(): Promise<RoundsPayload> {
    const response = await this.request('/api/rounds');
    return (await response.json()) as RoundsPayload;
  }

  async getQueue(round: number, kind?: string): Promise<QueueItem[]> {
    const suffix = kind ? `&kind=${encodeURIComponent(kind)}` : '';
    const response = await this.request(`/api/queue?round=${round}${suffix}`);
    return (await response.json()) as QueueItem[];
  }

  /** Keeps the raw body so the UI can display exactly what the service said. */
  async getStats(round: number): Promise<StatsSnapshot> {
    const response = await this.request(`/api/stats?round=${round}`);
    const raw = await response.text();
    return { stats: JSON.parse(raw) as RoundStats, raw };
  }

  async postVerdict(body: VerdictRequest): Promise<VerdictResponse> {
    const response = await this.request('/api/verdict', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    return (await response.json()) as VerdictResponse;
  }

  imageUrl(item: QueueItem): string {
    return `${this.baseUrl}${item.image_url}`;
  }
}
