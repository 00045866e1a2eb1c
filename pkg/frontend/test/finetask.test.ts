import { describe, expect, it } from "vitest";

import { FineTaskBuilder } from "../src/finetask.js";
import { validateOperatorMessage } from "../src/schema.js";

const annotations = [
  { id: 7, u: 120, v: 88 },
  { id: 8, u: 30, v: 40 },
];

describe("fine task builder", () => {
  it("builds the documented one-pair message", () => {
    const b = new FineTaskBuilder();
    expect(b.click(annotations, 121, 87)).toBe("selected"); // snaps to feature 7
    expect(b.click(annotations, 320, 240)).toBe("paired"); // desired pixel
    expect(b.canSend).toBe(true);
    expect(b.message()).toEqual({
      type: "fine_task",
      pairs: [{ feature_id: 7, u: 120, v: 88, u_star: 320, v_star: 240 }],
    });
  });

  it("send stays disabled with zero pairs", () => {
    const b = new FineTaskBuilder();
    expect(b.canSend).toBe(false);
    expect(() => b.message()).toThrow();
  });

  it("ignores first clicks that hit no annotation", () => {
    const b = new FineTaskBuilder();
    expect(b.click(annotations, 200, 200)).toBe("ignored");
    expect(b.pending).toBeNull();
  });

  it("caps at four pairs", () => {
    const b = new FineTaskBuilder();
    for (let i = 0; i < 5; i++) {
      b.click(annotations, 120, 88);
      b.click(annotations, 300, 300);
    }
    expect(b.pairs.length).toBe(4);
  });

  it("emits schema-valid JSON", () => {
    const b = new FineTaskBuilder();
    b.click(annotations, 30, 40);
    b.click(annotations, 10, 12);
    b.click(annotations, 120, 88);
    b.click(annotations, 50, 60);
    const msg = JSON.parse(JSON.stringify(b.message()));
    expect(validateOperatorMessage(msg)).toEqual([]);
    expect(msg.pairs.length).toBe(2);
  });

  it("reset clears pairs and pending selection", () => {
    const b = new FineTaskBuilder();
    b.click(annotations, 120, 88);
    b.reset();
    expect(b.pending).toBeNull();
    expect(b.pairs).toEqual([]);
  });
});
