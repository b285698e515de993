// Thin typed client over the annotation service HTTP API.
//
// Submission is idempotent on the client side: every submit is keyed by
// (session, task, choice), in-flight duplicates share one request, and a
// re-delivery of an already-acknowledged submission replays the recorded
// outcome instead of hitting the network again. This keeps double-clicks
// and network-layer retries from ever producing a second POST.

export interface TaskView {
  status: 'task' | 'drained';
  session: string;
  phase: string;
  clip_a?: string;
  clip_b?: string;
  quiz_progress?: string | null;
}

export interface SubmitOutcome {
  outcome: 'continue' | 'quiz_passed' | 'quiz_failed' | 'blocked';
  phase: string;
  score?: number;
  campaign_complete?: boolean;
}

export interface SessionInfo {
  session: string;
  phase: string;
}

export interface ProgressInfo {
  campaign: string;
  status: string;
  items: number;
  placed: number;
  resolved: number;
  pending: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private inFlight = new Map<string, Promise<SubmitOutcome>>();
  private delivered = new Map<string, SubmitOutcome>();

  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === 'string') detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  createSession(campaignId: string, annotator: string): Promise<SessionInfo> {
    return this.request(`/campaigns/${campaignId}/sessions`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ annotator }),
    });
  }

  nextTask(sessionId: string): Promise<TaskView> {
    return this.request(`/sessions/${sessionId}/next`);
  }

  submit(sessionId: string, taskKey: string, choice: string): Promise<SubmitOutcome> {
    const key = `${sessionId}|${taskKey}|${choice}`;
    const done = this.delivered.get(key);
    if (done) return Promise.resolve(done);
    const pending = this.inFlight.get(key);
    if (pending) return pending;

    const promise = this.request<SubmitOutcome>(`/sessions/${sessionId}/submit`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ choice }),
    })
      .then((outcome) => {
        this.delivered.set(key, outcome);
        return outcome;
      })
      .finally(() => {
        this.inFlight.delete(key);
      });
    this.inFlight.set(key, promise);
    return promise;
  }

  progress(campaignId: string): Promise<ProgressInfo> {
    return this.request(`/campaigns/${campaignId}/progress`);
  }

  audioUrl(clipId: string): string {
    return `${this.baseUrl}/clips/${clipId}/audio`;
  }
}

export function taskKeyOf(task: TaskView): string {
  return `${task.clip_a ?? ''}|${task.clip_b ?? ''}|${task.quiz_progress ?? ''}`;
}
