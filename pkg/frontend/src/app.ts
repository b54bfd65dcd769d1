// Annotation session view: uncertainty-ranked queue cards, one-keystroke
// labeling, retrain trigger, and the curriculum/progress panel. All state
// lives on the server; every label forces a queue refetch.

import { ApiClient, ApiError, Progress, QueueItem, USER_CLASSES, UserClass } from "./api.js";
import { sparklineSvg } from "./sparkline.js";

const SUMMARY_FEATURES = ["posting_rate", "retweet_ratio", "burstiness", "entropy"] as const;

function fmt(x: number): string {
  return Math.abs(x) >= 100 ? x.toFixed(0) : x.toFixed(2);
}

export class AnnotationApp {
  private queueEl: HTMLElement;
  private progressEl: HTMLElement;
  private statusEl: HTMLElement;
  private items: QueueItem[] = [];
  private pollTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private queueSize = 12,
  ) {
    root.innerHTML = `
      <header class="topbar">
        <h1>accd annotation</h1>
        <div id="status" class="status"></div>
        <button id="retrain" type="button">Retrain model</button>
      </header>
      <section id="progress" class="progress"></section>
      <main id="queue" class="queue" aria-live="polite"></main>
      <footer class="hint">keys 1-4 label the top card: ${USER_CLASSES.map((c, i) => `${i + 1}=${c}`).join("  ")}</footer>
    `;
    this.queueEl = root.querySelector("#queue")!;
    this.progressEl = root.querySelector("#progress")!;
    this.statusEl = root.querySelector("#status")!;
    root.querySelector<HTMLButtonElement>("#retrain")!.addEventListener("click", () => void this.retrain());
    document.addEventListener("keydown", (ev) => this.onKey(ev));
  }

  async init(): Promise<void> {
    await Promise.all([this.refreshQueue(), this.refreshProgress()]);
  }

  dispose(): void {
    if (this.pollTimer !== null) clearTimeout(this.pollTimer);
  }

  async refreshQueue(): Promise<void> {
    const data = await this.api.queue(this.queueSize);
    this.items = data.items;
    this.renderQueue(data.pending_total);
  }

  async refreshProgress(): Promise<void> {
    const p = await this.api.progress();
    this.renderProgress(p);
    const retrainBtn = this.root.querySelector<HTMLButtonElement>("#retrain")!;
    retrainBtn.disabled = p.retraining;
    retrainBtn.textContent = p.retraining ? "Retraining..." : "Retrain model";
    if (p.retraining) {
      this.schedulePoll();
    }
  }

  private schedulePoll(): void {
    if (this.pollTimer !== null) clearTimeout(this.pollTimer);
    this.pollTimer = setTimeout(() => {
      this.pollTimer = null;
      void this.refreshProgress().then(() => this.refreshQueue());
    }, 1500);
  }

  private renderProgress(p: Progress): void {
    const acc = p.validation_accuracy;
    const gatePct = (p.validation_gate * 100).toFixed(0);
    const accText = acc === null ? "n/a" : `${(acc * 100).toFixed(1)}%`;
    const accPct = acc === null ? 0 : Math.min(acc * 100, 100);
    const stage = p.curriculum_stage === null ? "-" : `${p.curriculum_stage}/${p.curriculum_stages_total}`;
    this.progressEl.innerHTML = `
      <div class="stat"><span class="label">human labels</span><span class="value" id="human-count">${p.labeled.human ?? 0}</span></div>
      <div class="stat"><span class="label">pseudo labels</span><span class="value" id="pseudo-count">${p.labeled.pseudo ?? 0}</span></div>
      <div class="stat"><span class="label">queue remaining</span><span class="value">${p.queue_remaining}</span></div>
      <div class="stat"><span class="label">curriculum stage</span><span class="value">${stage}</span></div>
      <div class="stat gauge-stat">
        <span class="label">validation accuracy ${accText} (gate ${gatePct}%)</span>
        <div class="gauge">
          <div class="gauge-fill${acc !== null && acc > p.validation_gate ? " above-gate" : ""}" style="width: ${accPct}%"></div>
          <div class="gauge-gate" style="left: ${gatePct}%"></div>
        </div>
      </div>
    `;
  }

  private renderQueue(pendingTotal: number): void {
    if (this.items.length === 0) {
      this.queueEl.innerHTML = `<p class="empty">All caught up — no pending accounts.</p>`;
      return;
    }
    this.queueEl.innerHTML = "";
    this.items.forEach((item, idx) => this.queueEl.appendChild(this.card(item, idx === 0)));
    this.statusEl.textContent = `${pendingTotal} pending`;
  }

  private card(item: QueueItem, isTop: boolean): HTMLElement {
    const el = document.createElement("article");
    el.className = isTop ? "card top" : "card";
    el.dataset.user = item.user_id;
    const unc = item.uncertainty;
    const badgeClass = unc >= 0.75 - 1e-9 ? "badge max" : unc >= 0.5 ? "badge high" : "badge";
    const votes = USER_CLASSES.map((c) => {
      const pct = (item.votes[c] ?? 0) * 100;
      return `<div class="vote-row"><span class="vote-name">${c}</span>
        <div class="vote-bar"><div class="vote-fill" data-class="${c}" style="width: ${pct.toFixed(1)}%"></div></div>
        <span class="vote-pct">${pct.toFixed(0)}%</span></div>`;
    }).join("");
    const feats = SUMMARY_FEATURES.map(
      (f) => `<div class="feat"><dt>${f.replace(/_/g, " ")}</dt><dd>${fmt(item.features[f] ?? 0)}</dd></div>`,
    ).join("");
    const buttons = USER_CLASSES.map(
      (c, i) => `<button type="button" class="label-btn" data-label="${c}">${i + 1} ${c}</button>`,
    ).join("");
    el.innerHTML = `
      <div class="card-head">
        <h3>${item.user_id}</h3>
        <span class="${badgeClass}" title="uncertainty">${unc.toFixed(2)}</span>
      </div>
      ${sparklineSvg(item.activity)}
      <dl class="feats">${feats}</dl>
      <div class="votes">${votes}</div>
      <div class="actions">${buttons}</div>
      <p class="card-error" hidden></p>
    `;
    el.querySelectorAll<HTMLButtonElement>(".label-btn").forEach((btn) => {
      btn.addEventListener("click", () => void this.submit(item.user_id, btn.dataset.label as UserClass));
    });
    return el;
  }

  async submit(userId: string, label: UserClass): Promise<void> {
    const card = this.queueEl.querySelector<HTMLElement>(`[data-user="${userId}"]`);
    card?.classList.add("pending-submit");
    try {
      await this.api.submitLabel(userId, label);
      card?.remove(); // optimistic; the refetch below is authoritative
      this.statusEl.textContent = `${userId} -> ${label}`;
      await Promise.all([this.refreshQueue(), this.refreshProgress()]);
    } catch (err) {
      card?.classList.remove("pending-submit");
      const msg =
        err instanceof ApiError
          ? `rejected (${err.status}): ${JSON.stringify(err.detail)}`
          : `request failed: ${String(err)}`;
      const errEl = card?.querySelector<HTMLElement>(".card-error");
      if (errEl) {
        errEl.textContent = msg;
        errEl.hidden = false;
      } else {
        this.statusEl.textContent = msg;
      }
    }
  }

  async retrain(): Promise<void> {
    try {
      await this.api.retrain();
      this.statusEl.textContent = "retraining started";
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.statusEl.textContent = "retraining already in progress";
      } else if (err instanceof ApiError) {
        this.statusEl.textContent = `retrain rejected: ${JSON.stringify(err.detail)}`;
      } else {
        this.statusEl.textContent = `retrain failed: ${String(err)}`;
      }
    }
    await this.refreshProgress();
  }

  private onKey(ev: KeyboardEvent): void {
    const idx = Number.parseInt(ev.key, 10) - 1;
    if (idx < 0 || idx >= USER_CLASSES.length || this.items.length === 0) return;
    const target = ev.target as HTMLElement | null;
    if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) return;
    void this.submit(this.items[0].user_id, USER_CLASSES[idx]);
  }
}
