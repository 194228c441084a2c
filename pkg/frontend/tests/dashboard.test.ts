import { describe, expect, it } from "vitest";

import { parsePlanCsv } from "../src/api.js";
import { buildProgress } from "../src/dashboard.js";

describe("plan csv parsing", () => {
  it("parses class rows", () => {
    const rows = parsePlanCsv(
      "class,target,real,quota\nPneumothorax,30196,2013,28183\nNormal,30196,13781,16415\n",
    );
    expect(rows).toHaveLength(2);
    expect(rows[0]).toEqual({
      className: "Pneumothorax",
      target: 30196,
      real: 2013,
      quota: 28183,
    });
  });
});

describe("progress bars", () => {
  it("totals pending+accepted+rejected", () => {
    const rows = buildProgress(
      { Pneumothorax: { pending: 85, accepted: 10, rejected: 5 } },
      null,
    );
    expect(rows[0].total).toBe(100);
    expect(rows[0].fulfillment).toBeNull();
  });

  it("computes quota fulfillment against the plan", () => {
    const rows = buildProgress(
      { Pneumothorax: { pending: 85, accepted: 10, rejected: 5 } },
      [{ className: "Pneumothorax", target: 30196, real: 2013, quota: 28183 }],
    );
    // 10 of 28,183 ~ 0.035%
    expect(rows[0].fulfillment! * 100).toBeCloseTo(0.0355, 3);
  });

  it("renders zero-quota classes as complete", () => {
    const rows = buildProgress(
      { Cardiomegaly: { pending: 0, accepted: 0, rejected: 0 } },
      [{ className: "Cardiomegaly", target: 100, real: 100, quota: 0 }],
    );
    expect(rows[0].fulfillment).toBe(1);
  });

  it("sorts classes by name", () => {
    const rows = buildProgress(
      {
        Normal: { pending: 1, accepted: 0, rejected: 0 },
        Cardiomegaly: { pending: 2, accepted: 0, rejected: 0 },
      },
      null,
    );
    expect(rows.map((r) => r.className)).toEqual(["Cardiomegaly", "Normal"]);
  });
});
