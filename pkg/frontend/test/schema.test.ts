import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  makeCoarseTask,
  makeFineTask,
  parseGatewayMessage,
  validateOperatorMessage,
} from "../src/schema.js";

const fixturePath = fileURLToPath(new URL("../fixtures/session.jsonl", import.meta.url));

describe("inbound schema", () => {
  it("recognizes every message in the recorded session", () => {
    const lines = readFileSync(fixturePath, "utf8")
      .split("\n")
      .filter((l) => l.trim());
    for (const line of lines) {
      const msg = parseGatewayMessage(JSON.parse(line));
      expect(msg, line.slice(0, 80)).not.toBeNull();
    }
  });

  it("rejects unknown types and malformed bodies", () => {
    expect(parseGatewayMessage({ type: "mystery" })).toBeNull();
    expect(parseGatewayMessage({ type: "points", points: [{ id: "x" }] })).toBeNull();
    expect(parseGatewayMessage({ type: "status" })).toBeNull();
    expect(parseGatewayMessage("status")).toBeNull();
    expect(parseGatewayMessage(null)).toBeNull();
  });

  it("parses image messages with annotations", () => {
    const msg = parseGatewayMessage({
      type: "image",
      image_id: 0,
      width: 64,
      height: 64,
      pgm_base64: "UDU=",
      annotations: [{ id: 3, u: 10.5, v: 20.25 }],
    });
    expect(msg).toMatchObject({ type: "image", width: 64 });
  });
});

describe("outbound schema", () => {
  it("accepts well-formed operator messages", () => {
    expect(
      validateOperatorMessage({ type: "coarse_task", target: [0.1, 0.2, 0.3], preset: 2 }),
    ).toEqual([]);
    expect(
      validateOperatorMessage({
        type: "fine_task",
        pairs: [{ feature_id: 1, u: 1, v: 2, u_star: 3, v_star: 4 }],
      }),
    ).toEqual([]);
    expect(validateOperatorMessage({ type: "abort" })).toEqual([]);
  });

  it("lists problems for malformed messages", () => {
    expect(validateOperatorMessage({ type: "coarse_task", target: [1, 2], preset: 0 })).not.toEqual([]);
    expect(validateOperatorMessage({ type: "coarse_task", target: [1, 2, 3], preset: 9 })).not.toEqual([]);
    expect(validateOperatorMessage({ type: "fine_task", pairs: [] })).not.toEqual([]);
    expect(validateOperatorMessage({ type: "fine_task", pairs: [{ feature_id: 1 }] })).not.toEqual([]);
    expect(validateOperatorMessage({ type: "warp" })).not.toEqual([]);
  });

  it("constructors throw instead of emitting invalid JSON", () => {
    expect(() => makeCoarseTask([0, 0, 0], 5)).toThrow();
    expect(() => makeFineTask([])).toThrow();
    const ok = makeCoarseTask([0.5, -0.25, 1.0], 1);
    expect(JSON.parse(JSON.stringify(ok))).toEqual({
      type: "coarse_task",
      target: [0.5, -0.25, 1.0],
      preset: 1,
    });
  });
});
