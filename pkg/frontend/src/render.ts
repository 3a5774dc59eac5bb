/**
 * HTML-string renderers. Only the current page of the queue is materialized,
 * so a 600-item round stays responsive. Every number shown here comes out of
 * a service payload; nothing is computed client-side.
 */

import type { StatsSnapshot } from './api.js';
import type { QueueItem } from './types.js';

function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export interface ItemViewState {
  imageFailed?: boolean;
  decided?: boolean;
  active?: boolean;
}

export function renderQueueItem(
  item: QueueItem,
  baseUrl: string,
  state: ItemViewState = {},
): string {
  const badge =
    item.flag_kind === 'suspect_tail'
      ? '<span class="badge badge-suspect">suspect</span>'
      : '<span class="badge badge-confident">confident</span>';
  const image = state.imageFailed
    ? `<div class="image-placeholder" data-sample="${esc(item.sample_id)}">
         image unavailable
         <button class="retry" data-action="retry-image">retry</button>
       </div>`
    : `<img class="sample-image zoomable" src="${esc(baseUrl + item.image_url)}"
          alt="${esc(item.sample_id)}" data-sample="${esc(item.sample_id)}">`;
  const suggestion = item.suggested_label
    ? `<div class="suggested-label">model suggests
         <strong class="suggestion">${esc(item.suggested_label)}</strong></div>`
    : '';
  const loss = item.loss === null ? 'n/a' : item.loss.toFixed(4);
  const classes = ['queue-item', state.active ? 'active' : '', state.decided ? 'decided' : '']
    .filter(Boolean)
    .join(' ');
  return `<div class="${classes}" data-sample="${esc(item.sample_id)}"
               data-version="${item.version}">
    ${image}
    <div class="meta">
      ${badge}
      <div class="current-label">label: <strong>${esc(item.label)}</strong></div>
      ${suggestion}
      <div class="loss">loss: ${loss}</div>
    </div>
  </div>`;
}

export function renderQueuePage(
  items: QueueItem[],
  baseUrl: string,
  options: { page: number; pageCount: number; activeId?: string; decided?: Set<string> },
): string {
  const cards = items
    .map((item) =>
      renderQueueItem(item, baseUrl, {
        active: item.sample_id === options.activeId,
        decided: options.decided?.has(item.sample_id) ?? false,
      }),
    )
    .join('\n');
  return `<div class="queue-page" data-page="${options.page}">
    ${cards}
    <nav class="pager">
      <button data-action="prev-page" ${options.page === 0 ? 'disabled' : ''}>prev</button>
      <span>page ${options.page + 1} / ${options.pageCount}</span>
      <button data-action="next-page"
        ${options.page + 1 >= options.pageCount ? 'disabled' : ''}>next</button>
    </nav>
  </div>`;
}

/**
 * Round progress. The numbers are lifted from the stats payload unchanged and
 * the exact response body is kept verbatim in a <pre> for inspection.
 */
export function renderProgress(snapshot: StatsSnapshot | null, stale: boolean): string {
  if (!snapshot) {
    return '<div class="progress stale">stats unavailable</div>';
  }
  const s = snapshot.stats;
  const accuracy =
    s.pipeline_accuracy === null ? 'n/a' : `${(s.pipeline_accuracy * 100).toFixed(1)}%`;
  const staleBadge = stale ? '<span class="badge badge-stale">stale</span>' : '';
  return `<div class="progress${stale ? ' stale' : ''}">
    ${staleBadge}
    <span class="reviewed">${s.reviewed} / ${s.total} reviewed</span>
    <span class="pipeline-accuracy">pipeline accuracy: ${accuracy}</span>
    <span class="ratio-validated">validated: ${(s.ratio_validated * 100).toFixed(1)}%</span>
    <details><summary>raw stats</summary><pre class="stats-raw">${esc(snapshot.raw)}</pre></details>
  </div>`;
}

export function renderShortcutHelp(classes: string[]): string {
  const digits = classes
    .map((name, i) => `<kbd>${i === 9 ? 0 : i + 1}</kbd>=${esc(name)}`)
    .slice(0, 10)
    .join(' ');
  return `<div class="shortcuts">
    <kbd>c</kbd>=certify <kbd>x</kbd>=reject <kbd>a</kbd>=ambiguous
    <kbd>u</kbd>=undo <kbd>n</kbd>/<kbd>p</kbd>=move &middot; relabel: ${digits}
  </div>`;
}
