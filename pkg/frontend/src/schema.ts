// Bridge message schema: everything that crosses the gateway WebSocket,
// with runtime validators on both directions.  One JSON object per line.

export interface PointRecord {
  id: number;
  x: number;
  y: number;
  z: number;
}

export interface Annotation {
  id: number;
  u: number;
  v: number;
}

export interface PointsMessage {
  type: "points";
  points: PointRecord[];
}

export interface StatusMessage {
  type: "status";
  phase: string;
  detail: string;
}

export interface ImageMessage {
  type: "image";
  image_id: number;
  width: number;
  height: number;
  pgm_base64: string;
  annotations: Annotation[];
}

export interface StatsMessage {
  type: "stats";
  count?: number;
  total_bytes?: number;
  mean_rtt_ms?: number;
  ms_per_kb?: number;
  recv_datagrams?: number;
  recv_bytes?: number;
  phase?: string;
}

export type GatewayMessage = PointsMessage | StatusMessage | ImageMessage | StatsMessage;

export interface FinePair {
  feature_id: number;
  u: number;
  v: number;
  u_star: number;
  v_star: number;
}

export interface CoarseTaskMessage {
  type: "coarse_task";
  target: [number, number, number];
  preset: number;
}

export interface FineTaskMessage {
  type: "fine_task";
  pairs: FinePair[];
}

export interface AbortMessage {
  type: "abort";
}

export type OperatorMessage = CoarseTaskMessage | FineTaskMessage | AbortMessage;

const isNum = (v: unknown): v is number => typeof v === "number" && Number.isFinite(v);
const isObj = (v: unknown): v is Record<string, unknown> =>
  typeof v === "object" && v !== null && !Array.isArray(v);

function isPointRecord(v: unknown): v is PointRecord {
  return isObj(v) && isNum(v.id) && isNum(v.x) && isNum(v.y) && isNum(v.z);
}

function isAnnotation(v: unknown): v is Annotation {
  return isObj(v) && isNum(v.id) && isNum(v.u) && isNum(v.v);
}

/** Parse one inbound gateway message; null means "not ours / malformed"
 * (callers count those as explicitly ignored). */
export function parseGatewayMessage(raw: unknown): GatewayMessage | null {
  if (!isObj(raw)) return null;
  switch (raw.type) {
    case "points":
      if (Array.isArray(raw.points) && raw.points.every(isPointRecord)) {
        return { type: "points", points: raw.points };
      }
      return null;
    case "status":
      if (typeof raw.phase === "string") {
        return {
          type: "status",
          phase: raw.phase,
          detail: typeof raw.detail === "string" ? raw.detail : "",
        };
      }
      return null;
    case "image":
      if (
        isNum(raw.image_id) &&
        isNum(raw.width) &&
        isNum(raw.height) &&
        typeof raw.pgm_base64 === "string" &&
        Array.isArray(raw.annotations) &&
        raw.annotations.every(isAnnotation)
      ) {
        return {
          type: "image",
          image_id: raw.image_id,
          width: raw.width,
          height: raw.height,
          pgm_base64: raw.pgm_base64,
          annotations: raw.annotations,
        };
      }
      return null;
    case "stats": {
      const msg: StatsMessage = { type: "stats" };
      for (const key of [
        "count",
        "total_bytes",
        "mean_rtt_ms",
        "ms_per_kb",
        "recv_datagrams",
        "recv_bytes",
      ] as const) {
        const v = raw[key];
        if (isNum(v)) msg[key] = v;
      }
      if (typeof raw.phase === "string") msg.phase = raw.phase;
      return msg;
    }
    default:
      return null;
  }
}

/** Problems with an outbound message; empty list means schema-valid. */
export function validateOperatorMessage(msg: unknown): string[] {
  if (!isObj(msg)) return ["message is not an object"];
  const problems: string[] = [];
  switch (msg.type) {
    case "coarse_task": {
      const t = msg.target;
      if (!Array.isArray(t) || t.length !== 3 || !t.every(isNum)) {
        problems.push("target must be [x, y, z] numbers");
      }
      if (!isNum(msg.preset) || !Number.isInteger(msg.preset) || msg.preset < 0 || msg.preset > 3) {
        problems.push("preset must be an integer in 0..3");
      }
      break;
    }
    case "fine_task": {
      const pairs = msg.pairs;
      if (!Array.isArray(pairs) || pairs.length < 1) {
        problems.push("pairs must be a non-empty array");
        break;
      }
      pairs.forEach((p, i) => {
        if (
          !isObj(p) ||
          !isNum(p.feature_id) ||
          !isNum(p.u) ||
          !isNum(p.v) ||
          !isNum(p.u_star) ||
          !isNum(p.v_star)
        ) {
          problems.push(`pair ${i} must carry feature_id, u, v, u_star, v_star`);
        }
      });
      break;
    }
    case "abort":
      break;
    default:
      problems.push(`unknown message type ${String(msg.type)}`);
  }
  return problems;
}

export function makeCoarseTask(target: [number, number, number], preset: number): CoarseTaskMessage {
  const msg: CoarseTaskMessage = { type: "coarse_task", target, preset };
  const problems = validateOperatorMessage(msg);
  if (problems.length) throw new Error(problems.join("; "));
  return msg;
}

export function makeFineTask(pairs: FinePair[]): FineTaskMessage {
  const msg: FineTaskMessage = { type: "fine_task", pairs };
  const problems = validateOperatorMessage(msg);
  if (problems.length) throw new Error(problems.join("; "));
  return msg;
}
