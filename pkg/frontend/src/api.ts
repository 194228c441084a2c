/** Typed client for the curation review API. */

export interface PendingSample {
  id: string;
  class: string;
  created_at: number;
  image_url: string;
}

export type Decision = "accept" | "reject";

export interface ClassStats {
  pending: number;
  accepted: number;
  rejected: number;
}

export type Stats = Record<string, ClassStats>;

export interface PlanRow {
  className: string;
  target: number;
  real: number;
  quota: number;
}

export class ConflictError extends Error {}
export class NotFoundError extends Error {}

export class CurationApi {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async getPending(opts: { limit?: number; after?: string; className?: string } = {}): Promise<PendingSample[]> {
    const params = new URLSearchParams();
    if (opts.limit !== undefined) params.set("limit", String(opts.limit));
    if (opts.after !== undefined) params.set("after", opts.after);
    if (opts.className !== undefined) params.set("class", opts.className);
    const res = await fetch(this.url(`/api/pending?${params}`));
    if (!res.ok) throw new Error(`pending failed: ${res.status}`);
    return res.json();
  }

  async postVerdict(id: string, decision: Decision, reviewer: string): Promise<void> {
    const res = await fetch(this.url("/api/verdict"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id, decision, reviewer }),
    });
    if (res.status === 409) throw new ConflictError(`already reviewed: ${id}`);
    if (res.status === 404) throw new NotFoundError(`unknown sample: ${id}`);
    if (!res.ok) throw new Error(`verdict failed: ${res.status}`);
  }

  async getStats(): Promise<Stats> {
    const res = await fetch(this.url("/api/stats"));
    if (!res.ok) throw new Error(`stats failed: ${res.status}`);
    return res.json();
  }

  /** Balance plan CSV is optional server-side; null when absent. */
  async getPlan(): Promise<PlanRow[] | null> {
    const res = await fetch(this.url("/api/plan"));
    if (res.status === 404) return null;
    if (!res.ok) throw new Error(`plan failed: ${res.status}`);
    return parsePlanCsv(await res.text());
  }

  imageUrl(sample: PendingSample): string {
    return this.url(sample.image_url);
  }
}

export function parsePlanCsv(text: string): PlanRow[] {
  const rows: PlanRow[] = [];
  for (const line of text.trim().split(/\r?\n/).slice(1)) {
    if (!line.trim()) continue;
    const [className, target, real, quota] = line.split(",");
    rows.push({
      className,
      target: Number(target),
      real: Number(real),
      quota: Number(quota),
    });
  }
  return rows;
}
