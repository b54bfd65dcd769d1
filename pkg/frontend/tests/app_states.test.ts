// @vitest-environment jsdom
//
// DOM states driven through a stubbed API client: no server required.

import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, Progress, QueueResponse } from "../src/api.js";
import { AnnotationApp } from "../src/app.js";

const emptyProgress: Progress = {
  labeled: { human: 0, pseudo: 0 },
  validation_accuracy: null,
  validation_gate: 0.85,
  curriculum_stage: null,
  curriculum_stages_total: 4,
  retraining: false,
  queue_remaining: 0,
  model_version: null,
};

function stubClient(overrides: Partial<Record<keyof ApiClient, unknown>>): ApiClient {
  const base = {
    queue: async (): Promise<QueueResponse> => ({ items: [], pending_total: 0 }),
    progress: async (): Promise<Progress> => emptyProgress,
    submitLabel: async () => ({ user_id: "", label: "", source: "human", rev: 1 }),
    retrain: async () => ({ started: true }),
    health: async () => ({ status: "ok", users: 0 }),
  };
  return Object.assign(Object.create(ApiClient.prototype), base, overrides) as ApiClient;
}

function mount(): HTMLElement {
  document.body.innerHTML = '<div id="app"></div>';
  return document.getElementById("app")!;
}

const sampleItem = {
  user_id: "u0001",
  uncertainty: 0.75,
  status: "pending",
  votes: { Fake: 0.25, Org: 0.25, Political: 0.25, Individual: 0.25 },
  features: { posting_rate: 1.2, retweet_ratio: 0.1, burstiness: 0.3, entropy: 2.0 },
  activity: [0, 1, 3, 0, 2],
};

describe("app states", () => {
  it("shows the all-caught-up state on an empty queue", async () => {
    const root = mount();
    const app = new AnnotationApp(root, stubClient({}));
    await app.init();
    expect(root.querySelector(".empty")?.textContent).toMatch(/all caught up/i);
    expect(root.querySelectorAll(".card")).toHaveLength(0);
    app.dispose();
  });

  it("renders the max-uncertainty badge at 0.75", async () => {
    const root = mount();
    const app = new AnnotationApp(
      root,
      stubClient({ queue: async () => ({ items: [sampleItem], pending_total: 1 }) }),
    );
    await app.init();
    expect(root.querySelector(".badge.max")).not.toBeNull();
    app.dispose();
  });

  it("surfaces a 422 rejection inline on the card", async () => {
    const root = mount();
    const app = new AnnotationApp(
      root,
      stubClient({
        queue: async () => ({ items: [sampleItem], pending_total: 1 }),
        submitLabel: async () => {
          throw new ApiError(422, { message: "unknown label", allowed: [] });
        },
      }),
    );
    await app.init();
    await app.submit("u0001", "Org");
    const err = root.querySelector<HTMLElement>(".card-error")!;
    expect(err.hidden).toBe(false);
    expect(err.textContent).toMatch(/422/);
    expect(root.querySelector('[data-user="u0001"]')).not.toBeNull(); // card stays
    app.dispose();
  });

  it("disables the retrain button while the server reports busy", async () => {
    const root = mount();
    const app = new AnnotationApp(
      root,
      stubClient({ progress: async () => ({ ...emptyProgress, retraining: true }) }),
    );
    await app.init();
    expect(root.querySelector<HTMLButtonElement>("#retrain")!.disabled).toBe(true);
    app.dispose();
  });
});
