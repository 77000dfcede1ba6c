/**
 * Typed client for the annotation HTTP API.
 *
 * The base URL comes from a `base` query parameter or defaults to the
 * serving origin; the HTTP contract is the only coupling to the backend.
 */

export interface Progress {
  readonly done: number;
  readonly total: number;
}

export interface ItemPayload {
  item_id: string;
  index: number;
  kind: string;
  vocabulary: string[];
  progress: Progress;
  multi_select: boolean;
  question?: string;
  evidence?: string[];
  evidence_order?: string[];
  rationale?: string;
  final_answer?: string;
  done?: boolean;
}

export interface DonePayload {
  done: true;
  kind: string;
  progress: Progress;
}

export type NextResponse = ItemPayload | DonePayload;

export interface SubmitAck {
  ok: boolean;
  replaced: boolean;
  audit_count: number;
}

/** Agreement report: rendered verbatim, never recomputed client-side. */
export interface Report {
  task_id: string;
  kind: string;
  complete: boolean;
  n_items: number;
  n_complete_items: number;
  [key: string]: unknown;
}

export interface TaskSummary {
  task_id: string;
  kind: string;
  name: string;
  n_items: number;
  vocabulary: string[];
  annotators: string[];
}

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    public readonly detail: string,
    public readonly status: number,
  ) {
    super(`${code}: ${detail}`);
  }
}

export function isDone(payload: NextResponse): payload is DonePayload {
  return (payload as DonePayload).done === true;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.url(path), init);
    } catch (err) {
      throw new ApiError('UNREACHABLE', String(err), 0);
    }
    const text = await response.text();
    let body: any = null;
    try {
      body = text ? JSON.parse(text) : null;
    } catch {
      body = null;
    }
    if (!response.ok) {
      const code = body?.error ?? 'HTTP_ERROR';
      const detail = body?.detail ?? text.slice(0, 200);
      throw new ApiError(code, detail, response.status);
    }
    return body as T;
  }

  taskSummary(taskId: string): Promise<TaskSummary> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}`);
  }

  nextItem(taskId: string, annotator: string): Promise<NextResponse> {
    const query = new URLSearchParams({ annotator });
    return this.request(`/tasks/${encodeURIComponent(taskId)}/next?${query}`);
  }

  submitLabel(
    taskId: string,
    annotator: string,
    itemId: string,
    labels: string[],
  ): Promise<SubmitAck> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/labels`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ annotator, item_id: itemId, labels }),
    });
  }

  report(taskId: string, mode: 'partial' | 'complete' = 'partial'): Promise<Report> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/report?mode=${mode}`);
  }
}
