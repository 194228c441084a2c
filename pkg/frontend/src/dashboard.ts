/** Per-class progress model for the dashboard view. */

import { PlanRow, Stats } from "./api.js";

export interface ClassProgress {
  className: string;
  pending: number;
  accepted: number;
  rejected: number;
  total: number;
  quota: number | null;
  /** accepted / quota in [0, 1]; 1 when the quota is zero */
  fulfillment: number | null;
}

export function buildProgress(stats: Stats, plan: PlanRow[] | null): ClassProgress[] {
  const quotas = new Map<string, number>();
  if (plan) for (const row of plan) quotas.set(row.className, row.quota);
  const rows: ClassProgress[] = [];
  for (const [className, s] of Object.entries(stats)) {
    const quota = quotas.has(className) ? quotas.get(className)! : null;
    let fulfillment: number | null = null;
    if (quota !== null) {
      fulfillment = quota === 0 ? 1 : Math.min(s.accepted / quota, 1);
    }
    rows.push({
      className,
      pending: s.pending,
      accepted: s.accepted,
      rejected: s.rejected,
      total: s.pending + s.accepted + s.rejected,
      quota,
      fulfillment,
    });
  }
  rows.sort((a, b) => a.className.localeCompare(b.className));
  return rows;
}
