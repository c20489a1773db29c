import type {
  AnswerBody,
  DatasetInfo,
  Plan,
  SessionView,
  Transcript,
} from './types.js';

export class ApiError extends Error {
  status: number;
  code: string;
  detail: unknown;

  constructor(status: number, code: string, message: string, detail?: unknown) {
    super(message);
    this.status = status;
    this.code = code;
    this.detail = detail;
  }
}

async function raise(r: Response): Promise<never> {
  let code = 'http_error';
  let message = `${r.status} ${r.statusText}`;
  let detail: unknown = null;
  try {
    const body = await r.json();
    code = body.code ?? code;
    message = body.message ?? message;
    detail = body.detail ?? null;
  } catch {
    // non-JSON error body, keep the status line
  }
  throw new ApiError(r.status, code, message, detail);
}

export interface CreateSessionBody {
  dataset_id: string;
  subject_index?: number;
  features?: Record<string, number | string>;
  budget?: number;
  strategy?: string;
  k?: number;
  margin?: number;
  truth_seed?: number;
}

// Thin fetch wrapper over the session API. The base is '' when the bundle
// is served by the same process at /ui; tests point it at a live server.
export class ApiClient {
  base: string;

  constructor(base = '') {
    this.base = base;
  }

  private async get<T>(path: string): Promise<T> {
    const r = await fetch(`${this.base}${path}`);
    if (!r.ok) await raise(r);
    return r.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const r = await fetch(`${this.base}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!r.ok) await raise(r);
    return r.json() as Promise<T>;
  }

  async listDatasets(): Promise<DatasetInfo[]> {
    const body = await this.get<{ datasets: DatasetInfo[] }>('/datasets');
    return body.datasets;
  }

  createSession(body: CreateSessionBody): Promise<SessionView> {
    return this.post('/sessions', body);
  }

  getSession(id: string): Promise<SessionView> {
    return this.get(`/sessions/${id}`);
  }

  submitAnswer(id: string, token: string, answer: AnswerBody): Promise<SessionView> {
    return this.post(`/sessions/${id}/answers`, { token, answer });
  }

  requestRecourse(id: string, method: string): Promise<Plan> {
    return this.post(`/sessions/${id}/recourse`, { method });
  }

  getTranscript(id: string): Promise<Transcript> {
    return this.get(`/sessions/${id}/transcript`);
  }
}
