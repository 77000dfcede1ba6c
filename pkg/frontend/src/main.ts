/** DOM bootstrap: wire query parameters, event delegation, and keyboard. */

import { ApiClient } from './api.js';
import { AnnotationSession, ViewHost } from './app.js';
import { escapeHtml } from './view.js';

function host(root: HTMLElement): ViewHost {
  return {
    show(html: string) {
      root.innerHTML = html;
    },
  };
}

function renderLanding(root: HTMLElement, message = ''): void {
  root.innerHTML = `
    <div class="landing">
      <h2>Annotation session</h2>
      ${message ? `<div class="banner error">${escapeHtml(message)}</div>` : ''}
      <form id="session-form">
        <label>Task id <input name="task" required></label>
        <label>Annotator token <input name="annotator" required></label>
        <label>API base URL <input name="base" placeholder="same origin"></label>
        <button type="submit">Start</button>
      </form>
    </div>`;
  const form = root.querySelector('#session-form') as HTMLFormElement;
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const params = new URLSearchParams();
    params.set('task', String(data.get('task') ?? ''));
    params.set('annotator', String(data.get('annotator') ?? ''));
    const base = String(data.get('base') ?? '');
    if (base) {
      params.set('base', base);
    }
    window.location.search = params.toString();
  });
}

function start(): void {
  const root = document.getElementById('app');
  if (!root) {
    return;
  }
  const params = new URLSearchParams(window.location.search);
  const taskId = params.get('task');
  const annotator = params.get('annotator');
  if (!taskId || !annotator) {
    renderLanding(root);
    return;
  }
  const api = new ApiClient(params.get('base') ?? '');
  const session = new AnnotationSession(api, host(root), taskId, annotator);

  root.addEventListener('click', (event) => {
    const target = (event.target as HTMLElement).closest('[data-choice],[data-action]');
    if (!target) {
      return;
    }
    const choice = target.getAttribute('data-choice');
    if (choice !== null) {
      void session.choose(parseInt(choice, 10));
      return;
    }
    switch (target.getAttribute('data-action')) {
      case 'confirm':
        void session.confirmSelection();
        break;
      case 'report':
        void session.showReport();
        break;
      case 'back':
        void session.back();
        break;
      case 'skip':
        session.skipCurrent();
        break;
      case 'retry':
        void session.loadNext();
        break;
    }
  });

  document.addEventListener('keydown', (event) => {
    if ((event.target as HTMLElement).tagName === 'INPUT') {
      return;
    }
    void session.handleKey(event.key);
  });

  void session.start();
}

start();
