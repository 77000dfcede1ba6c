/**
 * Pure HTML rendering.  Label controls always come from the server-provided
 * vocabulary (never hardcoded), and report views print API values verbatim:
 * the client performs zero statistical computation.
 */

import { ItemPayload, Progress, Report } from './api.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

/** Map a pressed key to a vocabulary index: "1".."9" select in server order. */
export function indexForKey(key: string, vocabularySize: number): number | null {
  if (!/^[1-9]$/.test(key)) {
    return null;
  }
  const index = parseInt(key, 10) - 1;
  return index < vocabularySize ? index : null;
}

export class PayloadError extends Error {}

/** Reject payloads the renderer cannot display (missing evidence texts). */
export function validatePayload(payload: ItemPayload): void {
  if (!payload.vocabulary || payload.vocabulary.length === 0) {
    throw new PayloadError('payload has no vocabulary');
  }
  if (payload.kind === 'RESOLUTION_BEHAVIOR') {
    if (payload.rationale === undefined || payload.final_answer === undefined) {
      throw new PayloadError('transcript payload missing rationale or final answer');
    }
    return;
  }
  if (!payload.evidence || payload.evidence.length !== 2
      || payload.evidence.some((text) => !text)) {
    throw new PayloadError('payload missing evidence text');
  }
}

function progressBar(progress: Progress): string {
  return `<div class="progress" data-role="progress" data-done="${progress.done}" `
    + `data-total="${progress.total}">${progress.done} / ${progress.total} labeled</div>`;
}

function vocabularyButtons(
  vocabulary: string[],
  multiSelect: boolean,
  selected: ReadonlySet<number>,
): string {
  const buttons = vocabulary
    .map((label, index) => {
      const className = selected.has(index) ? 'choice selected' : 'choice';
      return `<button class="${className}" data-choice="${index}">`
        + `<span class="key">${index + 1}</span> ${escapeHtml(label)}</button>`;
    })
    .join('\n');
  const confirm = multiSelect
    ? '\n<button class="confirm" data-action="confirm">Submit selection</button>'
    : '';
  return `<div class="choices">${buttons}${confirm}</div>`;
}

export interface ItemViewState {
  selected?: ReadonlySet<number>;
  error?: string;
  pending?: boolean;
}

export function renderItem(payload: ItemPayload, state: ItemViewState = {}): string {
  const selected = state.selected ?? new Set<number>();
  const parts: string[] = [progressBar(payload.progress)];
  if (state.error) {
    parts.push(`<div class="banner error" data-role="error">${escapeHtml(state.error)}</div>`);
  }
  if (payload.question) {
    parts.push(`<h2 class="question">${escapeHtml(payload.question)}</h2>`);
  }
  if (payload.kind === 'RESOLUTION_BEHAVIOR') {
    parts.push('<div class="transcript">');
    parts.push(`<h3>Model rationale</h3><p class="rationale">${escapeHtml(payload.rationale ?? '')}</p>`);
    parts.push(`<h3>Final answer</h3><p class="final-answer">${escapeHtml(payload.final_answer ?? '')}</p>`);
    parts.push('</div>');
  } else {
    const [first, second] = payload.evidence ?? ['', ''];
    parts.push(
      '<div class="evidence-pair">'
      + `<section class="evidence"><h3>Evidence 1</h3><p>${escapeHtml(first)}</p></section>`
      + `<section class="evidence"><h3>Evidence 2</h3><p>${escapeHtml(second)}</p></section>`
      + '</div>',
    );
  }
  parts.push(vocabularyButtons(payload.vocabulary, payload.multi_select, selected));
  if (state.pending) {
    parts.push('<div class="banner pending" data-role="pending">Submitting…</div>');
  }
  return `<div class="item" data-item-id="${escapeHtml(payload.item_id)}">${parts.join('\n')}</div>`;
}

export function renderDone(progress: Progress): string {
  return (
    '<div class="done">'
    + '<h2>All items labeled</h2>'
    + progressBar(progress)
    + '<button data-action="report">View agreement report</button>'
    + '</div>'
  );
}

export function renderErrorCard(message: string, options: { skip?: boolean; retry?: boolean } = {}): string {
  const controls: string[] = [];
  if (options.retry) {
    controls.push('<button data-action="retry">Retry</button>');
  }
  if (options.skip) {
    controls.push('<button data-action="skip">Skip item</button>');
  }
  return (
    `<div class="card error" data-role="error-card">`
    + `<p>${escapeHtml(message)}</p>${controls.join(' ')}</div>`
  );
}

/** One definition row; values pass through String() untouched. */
function row(label: string, value: unknown): string {
  return `<tr><th>${escapeHtml(label)}</th>`
    + `<td data-field="${escapeHtml(label)}">${escapeHtml(String(value))}</td></tr>`;
}

export function renderReport(report: Report): string {
  const parts: string[] = ['<div class="report">', '<h2>Agreement report</h2>'];
  if (!report.complete) {
    parts.push(
      '<div class="banner partial" data-role="partial">'
      + 'Partial report: not every item has the required rater count.'
      + '</div>',
    );
  }
  const rows: string[] = [
    row('kind', report.kind),
    row('items', report.n_items),
    row('complete items', report.n_complete_items),
  ];
  if (report.kind === 'PAIR_LABEL') {
    rows.push(row('kappa', report['kappa']));
    rows.push(row('pseudo label accuracy', report['pseudo_label_accuracy']));
    rows.push(row('scored items', report['n_scored']));
  } else if (report.kind === 'INTENSITY') {
    rows.push(row('pearson rho', report['pearson_rho']));
    rows.push(row('p value', report['p_value']));
  } else if (report.kind === 'CONFLICT_TYPE') {
    const percentages = (report['type_percentages'] ?? {}) as Record<string, unknown>;
    for (const [label, value] of Object.entries(percentages)) {
      rows.push(row(`type ${label}`, value));
    }
  } else if (report.kind === 'RESOLUTION_BEHAVIOR') {
    const behavior = (report['behavior'] ?? {}) as any;
    const strata = behavior.strata ?? {};
    for (const [stratum, data] of Object.entries<any>(strata)) {
      for (const [label, value] of Object.entries(data.percentages ?? {})) {
        rows.push(row(`${stratum} ${label}`, value));
      }
    }
  }
  parts.push(`<table class="stats">${rows.join('\n')}</table>`);
  parts.push('<button data-action="back">Back</button>');
  parts.push('</div>');
  return parts.join('\n');
}

export function renderFatal(message: string): string {
  return renderErrorCard(message, { retry: true });
}
