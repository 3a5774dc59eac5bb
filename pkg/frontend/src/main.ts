/**
 * Browser entry point: wires the session to the DOM and the keyboard.
 *
 * Serve the review service (`workbench review-serve --manifest M --port P`),
 * build this package (`npm run build`), and open index.html; set the service
 * URL via the `?service=` query parameter (default http://127.0.0.1:8000).
 */

import { ReviewApiClient } from './api.js';
import { renderProgress, renderQueuePage, renderShortcutHelp } from './render.js';
import { ReviewSession } from './session.js';

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get('service') ?? 'http://127.0.0.1:8000';
  const round = Number(params.get('round') ?? '1');
  const api = new ReviewApiClient(baseUrl);
  const failedImages = new Set<string>();

  const session = new ReviewSession(api, {
    pageSize: 24,
    events: {
      onConflict: (sampleId) => {
        el('notice').textContent =
          `sample ${sampleId} changed on the server; it was refreshed - please re-review`;
        draw();
      },
      onError: (sampleId, message) => {
        el('notice').textContent = `verdict rejected for ${sampleId}: ${message}`;
      },
    },
  });

  function draw(): void {
    el('queue').innerHTML = renderQueuePage(session.pageItems(), baseUrl, {
      page: session.page(),
      pageCount: session.pageCount(),
      activeId: session.current()?.sample_id,
      decided: new Set(
        session.queue.filter((q) => session.isDecided(q.sample_id)).map((q) => q.sample_id),
      ),
    });
    el('progress').innerHTML = renderProgress(session.stats, session.statsStale);
    el('shortcuts').innerHTML = renderShortcutHelp(session.classes);
    el('pending').textContent =
      session.pendingCount() > 0 ? `${session.pendingCount()} verdicts queued offline` : '';
    for (const img of document.querySelectorAll<HTMLImageElement>('img.sample-image')) {
      img.onerror = () => {
        failedImages.add(img.dataset.sample ?? '');
        img.outerHTML = `<div class="image-placeholder">image unavailable
          <button class="retry" data-action="retry-image"
                  data-sample="${img.dataset.sample}">retry</button></div>`;
      };
      img.onclick = () => img.classList.toggle('zoomed');
    }
  }

  document.addEventListener('keydown', (event) => {
    if (event.target instanceof HTMLInputElement) return;
    void session.handleKey(event.key).then(draw);
  });
  document.addEventListener('click', (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset?.action;
    if (action === 'next-page') {
      session.cursor = Math.min((session.page() + 1) * session.pageSize,
                                Math.max(session.queue.length - 1, 0));
      draw();
    } else if (action === 'prev-page') {
      session.cursor = Math.max((session.page() - 1) * session.pageSize, 0);
      draw();
    } else if (action === 'retry-image') {
      failedImages.delete(target.dataset?.sample ?? '');
      draw();
    }
  });
  window.addEventListener('online', () => {
    void session.flush().then(draw);
  });

  await session.load(round);
  draw();
}

if (typeof document !== 'undefined') {
  void boot();
}
