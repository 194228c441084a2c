/** Review-session state machine, decoupled from the DOM for testing.
 *
 * Guarantees: every decision results in exactly one verdict POST per sample
 * id. Conflicts (409) surface a notice and advance; network failures keep
 * the decision in a retry queue keyed by sample id, so retries can never
 * duplicate or drop a verdict.
 */

import { ConflictError, CurationApi, Decision, NotFoundError, PendingSample } from "./api.js";

export interface SessionEvent {
  kind: "decided" | "conflict" | "queued-retry" | "retried" | "empty";
  sampleId?: string;
  message?: string;
}

export class ReviewSession {
  private buffer: PendingSample[] = [];
  private cursor = 0;
  private exhausted = false;
  /** decisions awaiting redelivery after a network failure, by sample id */
  readonly pendingRetries = new Map<string, Decision>();
  /** ids already decided locally; blocks duplicate posts on re-navigation */
  private decided = new Set<string>();
  readonly events: SessionEvent[] = [];

  constructor(
    private api: CurationApi,
    public reviewer: string,
    private pageSize = 20,
    private className?: string,
  ) {}

  current(): PendingSample | null {
    return this.buffer[this.cursor] ?? null;
  }

  async refill(): Promise<void> {
    if (this.exhausted || this.cursor < this.buffer.length) return;
    const last = this.buffer[this.buffer.length - 1];
    const page = await this.api.getPending({
      limit: this.pageSize,
      after: last?.id,
      className: this.className,
    });
    const known = new Set(this.buffer.map((s) => s.id));
    const fresh = page.filter((s) => !known.has(s.id) && !this.decided.has(s.id));
    if (fresh.length === 0) this.exhausted = true;
    this.buffer.push(...fresh);
  }

  async next(): Promise<PendingSample | null> {
    await this.refill();
    return this.current();
  }

  forward(): void {
    if (this.cursor < this.buffer.length) this.cursor += 1;
  }

  back(): void {
    if (this.cursor > 0) this.cursor -= 1;
  }

  /** Decide the current sample and advance. Never throws on delivery
   * problems; failures are retained for retry. */
  async decide(decision: Decision): Promise<void> {
    const sample = this.current();
    if (!sample) return;
    if (this.decided.has(sample.id)) {
      this.forward();
      return;
    }
    this.decided.add(sample.id);
    try {
      await this.api.postVerdict(sample.id, decision, this.reviewer);
      this.events.push({ kind: "decided", sampleId: sample.id });
    } catch (err) {
      if (err instanceof ConflictError) {
        this.events.push({
          kind: "conflict",
          sampleId: sample.id,
          message: "already reviewed by someone else; skipping",
        });
      } else if (err instanceof NotFoundError) {
        this.events.push({ kind: "conflict", sampleId: sample.id, message: "sample vanished" });
      } else {
        // network trouble: keep the decision, retry later, never drop it
        this.pendingRetries.set(sample.id, decision);
        this.events.push({ kind: "queued-retry", sampleId: sample.id });
      }
    }
    this.forward();
    await this.refill();
  }

  /** Redeliver failed verdicts; safe to call repeatedly. */
  async retryPending(): Promise<number> {
    let delivered = 0;
    for (const [id, decision] of [...this.pendingRetries]) {
      try {
        await this.api.postVerdict(id, decision, this.reviewer);
        this.pendingRetries.delete(id);
        this.events.push({ kind: "retried", sampleId: id });
        delivered += 1;
      } catch (err) {
        if (err instanceof ConflictError || err instanceof NotFoundError) {
          // server already has a verdict; nothing left to deliver
          this.pendingRetries.delete(id);
        }
        // other errors: keep for the next retry round
      }
    }
    return delivered;
  }

  isDone(): boolean {
    return this.exhausted && this.cursor >= this.buffer.length
      && this.pendingRetries.size === 0;
  }
}
