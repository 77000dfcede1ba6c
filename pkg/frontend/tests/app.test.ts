import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError, ItemPayload } from '../src/api.js';
import { AnnotationSession, ViewHost } from '../src/app.js';

function makePayload(index: number, total: number, overrides: Partial<ItemPayload> = {}): ItemPayload {
  return {
    item_id: `item-${index}`,
    index,
    kind: 'PAIR_LABEL',
    vocabulary: ['Conflicting', 'Non-conflicting', 'Not sure'],
    progress: { done: index, total },
    multi_select: false,
    question: `question ${index}`,
    evidence: [`left ${index}`, `right ${index}`],
    ...overrides,
  };
}

/** In-memory stand-in for the annotation service. */
class FakeServer {
  submitted: Array<{ itemId: string; labels: string[] }> = [];
  rejectNext: { code: string; detail: string; status: number } | null = null;
  payloads: ItemPayload[];
  cursor = 0;
  reportBody: Record<string, unknown> = {
    task_id: 't', kind: 'PAIR_LABEL', complete: true,
    n_items: 2, n_complete_items: 2, kappa: 0.71,
  };

  constructor(payloads: ItemPayload[]) {
    this.payloads = payloads;
  }

  client(): ApiClient {
    const self = this;
    return {
      async nextItem() {
        if (self.cursor >= self.payloads.length) {
          return { done: true as const, kind: 'PAIR_LABEL',
                   progress: { done: self.cursor, total: self.payloads.length } };
        }
        return self.payloads[self.cursor];
      },
      async submitLabel(_task: string, _annotator: string, itemId: string, labels: string[]) {
        if (self.rejectNext) {
          const { code, detail, status } = self.rejectNext;
          self.rejectNext = null;
          throw new ApiError(code, detail, status);
        }
        self.submitted.push({ itemId, labels });
        self.cursor += 1;
        return { ok: true, replaced: false, audit_count: 0 };
      },
      async report() {
        return self.reportBody as any;
      },
      async taskSummary() {
        return {} as any;
      },
    } as unknown as ApiClient;
  }
}

class CapturingHost implements ViewHost {
  frames: string[] = [];

  show(html: string): void {
    this.frames.push(html);
  }

  last(): string {
    return this.frames[this.frames.length - 1] ?? '';
  }
}

function makeSession(payloads: ItemPayload[]) {
  const server = new FakeServer(payloads);
  const host = new CapturingHost();
  const session = new AnnotationSession(server.client(), host, 't', 'ann');
  return { server, host, session };
}

describe('AnnotationSession flow', () => {
  it('loads the first item and renders its vocabulary', async () => {
    const { session, host } = makeSession([makePayload(0, 2), makePayload(1, 2)]);
    await session.start();
    expect(host.last()).toContain('question 0');
    expect(host.last()).toContain('Conflicting');
    expect(session.progress).toEqual({ done: 0, total: 2 });
  });

  it('valid choice advances with progress +1', async () => {
    const { session, server, host } = makeSession([makePayload(0, 2), makePayload(1, 2)]);
    await session.start();
    await session.choose(0);
    expect(server.submitted).toEqual([{ itemId: 'item-0', labels: ['Conflicting'] }]);
    expect(host.last()).toContain('question 1');
    expect(session.progress).toEqual({ done: 1, total: 2 });
  });

  it('server rejection rolls back progress and shows the error inline', async () => {
    const { session, server, host } = makeSession([makePayload(0, 2)]);
    await session.start();
    server.rejectNext = { code: 'VOCAB_VIOLATION', detail: 'bad label', status: 422 };
    await session.choose(1);
    expect(session.progress).toEqual({ done: 0, total: 2 });  // unchanged
    expect(host.last()).toContain('VOCAB_VIOLATION');
    expect(host.last()).toContain('question 0');  // same item still shown
    expect(server.submitted).toEqual([]);
  });

  it('keyboard shortcuts map 1..n to vocabulary order', async () => {
    const { session, server } = makeSession([makePayload(0, 1)]);
    await session.start();
    const handled = await session.handleKey('3');
    expect(handled).toBe(true);
    expect(server.submitted).toEqual([{ itemId: 'item-0', labels: ['Not sure'] }]);
    expect(await session.handleKey('9')).toBe(false);  // beyond vocabulary
  });

  it('DONE renders the completion screen with a report link', async () => {
    const { session, host } = makeSession([makePayload(0, 1)]);
    await session.start();
    await session.choose(2);
    expect(host.last()).toContain('All items labeled');
    expect(host.last()).toContain('data-action="report"');
  });

  it('multi-select toggles then submits the combined labels', async () => {
    const payload = makePayload(0, 1, {
      kind: 'CONFLICT_TYPE', multi_select: true,
      vocabulary: ['Entity', 'Temporal', 'Number'],
    });
    const { session, server } = makeSession([payload]);
    await session.start();
    await session.choose(0);
    await session.choose(2);
    await session.choose(0);  // toggle off again
    await session.choose(1);
    expect(server.submitted).toEqual([]);  // nothing sent until confirmation
    await session.confirmSelection();
    expect(server.submitted).toEqual([{ itemId: 'item-0', labels: ['Temporal', 'Number'] }]);
  });

  it('report view passes API numbers through untouched', async () => {
    const { session, server, host } = makeSession([]);
    server.reportBody = { ...server.reportBody, kappa: 0.7123456789 };
    await session.start();  // immediately done (no items)
    await session.showReport();
    expect(host.last()).toContain('0.7123456789');
  });

  it('malformed payload shows an error card with a skip control', async () => {
    const broken = makePayload(0, 2, { evidence: ['only one side'] as any });
    const { session, host } = makeSession([broken, makePayload(1, 2)]);
    await session.start();
    expect(host.last()).toContain('data-action="skip"');
    expect(host.last()).toContain('Cannot display item');
  });

  it('unreachable API yields a retry prompt', async () => {
    const host = new CapturingHost();
    const failing = {
      async nextItem() {
        throw new ApiError('UNREACHABLE', 'refused', 0);
      },
    } as unknown as ApiClient;
    const session = new AnnotationSession(failing, host, 't', 'ann');
    await session.start();
    expect(host.last()).toContain('data-action="retry"');
    expect(host.last()).toContain('unreachable');
  });
});
