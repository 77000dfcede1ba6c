/**
 * Session controller: one annotator working through one task.
 *
 * Pure state machine over the API client plus a render sink, so the flow is
 * testable without a DOM.  Progress increments optimistically on submission
 * and rolls back when the server rejects the label.
 */

import { ApiClient, ApiError, ItemPayload, NextResponse, Progress, isDone } from './api.js';
import {
  PayloadError,
  indexForKey,
  renderDone,
  renderErrorCard,
  renderFatal,
  renderItem,
  renderReport,
  validatePayload,
} from './view.js';

export interface ViewHost {
  show(html: string): void;
}

type Screen = 'item' | 'done' | 'report' | 'fatal';

export class AnnotationSession {
  screen: Screen = 'item';
  payload: ItemPayload | null = null;
  progress: Progress = { done: 0, total: 0 };
  selected = new Set<number>();
  inlineError: string | null = null;
  private skipped = new Set<string>();

  constructor(
    private readonly api: ApiClient,
    private readonly host: ViewHost,
    readonly taskId: string,
    readonly annotator: string,
  ) {}

  async start(): Promise<void> {
    await this.loadNext();
  }

  async loadNext(): Promise<void> {
    let response: NextResponse;
    try {
      response = await this.api.nextItem(this.taskId, this.annotator);
    } catch (err) {
      this.screen = 'fatal';
      this.host.show(renderFatal(this.describe(err)));
      return;
    }
    this.inlineError = null;
    this.selected = new Set();
    if (isDone(response) || this.skipped.has((response as ItemPayload).item_id)) {
      // A skipped item stays unlabeled server-side; treat the session as done.
      this.screen = 'done';
      this.payload = null;
      this.progress = response.progress;
      this.host.show(renderDone(this.progress));
      return;
    }
    const payload = response as ItemPayload;
    try {
      validatePayload(payload);
    } catch (err) {
      if (err instanceof PayloadError) {
        this.payload = payload;
        this.screen = 'item';
        this.host.show(renderErrorCard(`Cannot display item: ${err.message}`, { skip: true }));
        return;
      }
      throw err;
    }
    this.payload = payload;
    this.progress = payload.progress;
    this.screen = 'item';
    this.render();
  }

  private render(): void {
    if (this.payload) {
      this.host.show(renderItem(
        { ...this.payload, progress: this.progress },
        { selected: this.selected, error: this.inlineError ?? undefined },
      ));
    }
  }

  /** Click or keyboard selection of vocabulary entry `index`. */
  async choose(index: number): Promise<void> {
    if (this.screen !== 'item' || !this.payload) {
      return;
    }
    if (index < 0 || index >= this.payload.vocabulary.length) {
      return;
    }
    if (this.payload.multi_select) {
      if (this.selected.has(index)) {
        this.selected.delete(index);
      } else {
        this.selected.add(index);
      }
      this.render();
      return;
    }
    await this.submit([this.payload.vocabulary[index]]);
  }

  /** Multi-select confirmation. */
  async confirmSelection(): Promise<void> {
    if (!this.payload || !this.payload.multi_select) {
      return;
    }
    const labels = [...this.selected].sort((a, b) => a - b)
      .map((i) => this.payload!.vocabulary[i]);
    await this.submit(labels);
  }

  async handleKey(key: string): Promise<boolean> {
    if (this.screen !== 'item' || !this.payload) {
      return false;
    }
    const index = indexForKey(key, this.payload.vocabulary.length);
    if (index === null) {
      return false;
    }
    await this.choose(index);
    return true;
  }

  private async submit(labels: string[]): Promise<void> {
    if (!this.payload) {
      return;
    }
    const before = this.progress;
    this.progress = { done: before.done + 1, total: before.total };  // optimistic
    try {
      await this.api.submitLabel(this.taskId, this.annotator, this.payload.item_id, labels);
    } catch (err) {
      this.progress = before;  // rolled back on rejection
      this.inlineError = this.describe(err);
      this.render();
      return;
    }
    await this.loadNext();
  }

  skipCurrent(): void {
    if (this.payload) {
      this.skipped.add(this.payload.item_id);
    }
    void this.loadNext();
  }

  async showReport(): Promise<void> {
    try {
      const report = await this.api.report(this.taskId, 'partial');
      this.screen = 'report';
      this.host.show(renderReport(report));
    } catch (err) {
      this.host.show(renderFatal(this.describe(err)));
    }
  }

  async back(): Promise<void> {
    await this.loadNext();
  }

  private describe(err: unknown): string {
    if (err instanceof ApiError) {
      return err.code === 'UNREACHABLE'
        ? 'Annotation service unreachable. Check the base URL and retry.'
        : `${err.code}: ${err.detail}`;
    }
    return String(err);
  }
}
