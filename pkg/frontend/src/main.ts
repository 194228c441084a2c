/** DOM wiring for the reviewer app: one image at a time, keyboard-first.
 *
 * Keys: a = accept, r = reject, arrows navigate, d toggles the dashboard.
 */

import { CurationApi } from "./api.js";
import { buildProgress } from "./dashboard.js";
import { ReviewSession } from "./queue.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://localhost:8321";
const reviewer = localStorage.getItem("reviewer") ?? promptReviewer();

function promptReviewer(): string {
  const name = window.prompt("Reviewer id:", "reviewer-1") || "reviewer-1";
  localStorage.setItem("reviewer", name);
  return name;
}

const api = new CurationApi(baseUrl);
const session = new ReviewSession(api, reviewer, 25);

const imageEl = document.getElementById("sample-image") as HTMLImageElement;
const classEl = document.getElementById("sample-class")!;
const idEl = document.getElementById("sample-id")!;
const noticeEl = document.getElementById("notice")!;
const statsEl = document.getElementById("stats")!;
const dashEl = document.getElementById("dashboard")!;
const reviewerEl = document.getElementById("reviewer")!;
reviewerEl.textContent = reviewer;

let dashboardVisible = false;

function notify(text: string): void {
  noticeEl.textContent = text;
  noticeEl.classList.remove("hidden");
  window.setTimeout(() => noticeEl.classList.add("hidden"), 2500);
}

async function render(): Promise<void> {
  const sample = await session.next();
  if (!sample) {
    imageEl.src = "";
    classEl.textContent = "no pending samples";
    idEl.textContent = session.pendingRetries.size
      ? `${session.pendingRetries.size} verdicts waiting for retry`
      : "queue empty";
    await renderStats();
    return;
  }
  imageEl.src = api.imageUrl(sample);
  classEl.textContent = sample.class;
  idEl.textContent = sample.id;
  void renderStats();
}

async function renderStats(): Promise<void> {
  try {
    const stats = await api.getStats();
    const plan = await api.getPlan().catch(() => null);
    const rows = buildProgress(stats, plan);
    statsEl.textContent = rows
      .map((r) => `${r.className}: ${r.pending} pending`)
      .join("  |  ");
    if (dashboardVisible) {
      dashEl.innerHTML = rows
        .map((r) => {
          const done = r.accepted + r.rejected;
          const pct = r.total ? Math.round((100 * done) / r.total) : 100;
          const quota = r.fulfillment === null
            ? ""
            : ` quota ${(100 * r.fulfillment).toFixed(1)}%`;
          return `<div class="bar-row"><span class="bar-label">${r.className}</span>
            <div class="bar"><div class="bar-fill" style="width:${pct}%"></div></div>
            <span>${done}/${r.total} reviewed (${r.accepted} ok, ${r.rejected} out)${quota}</span></div>`;
        })
        .join("");
    }
  } catch {
    statsEl.textContent = "stats unavailable (stale data)";
  }
}

async function decide(decision: "accept" | "reject"): Promise<void> {
  await session.decide(decision);
  const last = session.events[session.events.length - 1];
  if (last?.kind === "conflict") notify(last.message ?? "already reviewed");
  if (last?.kind === "queued-retry") notify("network trouble; verdict queued for retry");
  await render();
}

window.addEventListener("keydown", (ev) => {
  if (ev.key === "a") void decide("accept");
  else if (ev.key === "r") void decide("reject");
  else if (ev.key === "ArrowRight") {
    session.forward();
    void render();
  } else if (ev.key === "ArrowLeft") {
    session.back();
    void render();
  } else if (ev.key === "d") {
    dashboardVisible = !dashboardVisible;
    dashEl.classList.toggle("hidden", !dashboardVisible);
    void renderStats();
  }
});

document.getElementById("btn-accept")!.addEventListener("click", () => void decide("accept"));
document.getElementById("btn-reject")!.addEventListener("click", () => void decide("reject"));

window.setInterval(() => {
  void session.retryPending().then((n) => {
    if (n > 0) notify(`${n} queued verdicts delivered`);
  });
}, 4000);

void render();
