// Thin typed client for the label-service endpoints. No model logic here:
// the UI consumes exactly what the API serves.

export const USER_CLASSES = ["Fake", "Org", "Political", "Individual"] as const;
export type UserClass = (typeof USER_CLASSES)[number];

export interface QueueItem {
  user_id: string;
  uncertainty: number;
  status: string;
  votes: Record<string, number>;
  features: Record<string, number>;
  activity: number[];
}

export interface QueueResponse {
  items: QueueItem[];
  pending_total: number;
}

export interface LabelResult {
  user_id: string;
  label: string;
  source: string;
  rev: number;
}

export interface Progress {
  labeled: Record<string, number>;
  validation_accuracy: number | null;
  validation_gate: number;
  curriculum_stage: number | null;
  curriculum_stages_total: number;
  retraining: boolean;
  queue_remaining: number;
  model_version: string | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`api error ${status}`);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail: unknown = null;
    try {
      detail = (await resp.json()).detail;
    } catch {
      detail = await resp.text().catch(() => null);
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  queue(n = 12): Promise<QueueResponse> {
    return this.fetchFn(`${this.base}/api/queue?n=${n}`).then((r) => asJson<QueueResponse>(r));
  }

  submitLabel(userId: string, label: UserClass): Promise<LabelResult> {
    return this.fetchFn(`${this.base}/api/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ user_id: userId, label }),
    }).then((r) => asJson<LabelResult>(r));
  }

  retrain(): Promise<{ started: boolean }> {
    return this.fetchFn(`${this.base}/api/retrain`, { method: "POST" }).then((r) =>
      asJson<{ started: boolean }>(r),
    );
  }

  progress(): Promise<Progress> {
    return this.fetchFn(`${this.base}/api/progress`).then((r) => asJson<Progress>(r));
  }

  health(): Promise<{ status: string; users: number }> {
    return this.fetchFn(`${this.base}/api/health`).then((r) => asJson<{ status: string; users: number }>(r));
  }
}
