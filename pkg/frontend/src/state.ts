// Session state and the pure reducer the whole console hangs off.
// Replaying a recorded gateway session through applyRaw reproduces the
// exact final state, which is what the replay tests pin down.

import {
  FinePair,
  GatewayMessage,
  ImageMessage,
  StatsMessage,
  parseGatewayMessage,
} from "./schema.js";

export interface UiState {
  points: Record<string, { x: number; y: number; z: number }>;
  pointCount: number;
  phase: string;
  phaseDetail: string;
  phaseLog: { phase: string; detail: string }[];
  image: ImageMessage | null;
  stats: StatsMessage | null;
  selectedPointId: number | null;
  pendingPreset: number | null;
  pendingPairs: FinePair[];
  ignoredMessages: number;
}

export const initialUiState: UiState = {
  points: {},
  pointCount: 0,
  phase: "IDLE",
  phaseDetail: "",
  phaseLog: [],
  image: null,
  stats: null,
  selectedPointId: null,
  pendingPreset: null,
  pendingPairs: [],
  ignoredMessages: 0,
};

export function applyMessage(state: UiState, msg: GatewayMessage): UiState {
  switch (msg.type) {
    case "points": {
      const points = { ...state.points };
      for (const p of msg.points) {
        points[String(p.id)] = { x: p.x, y: p.y, z: p.z };
      }
      return { ...state, points, pointCount: Object.keys(points).length };
    }
    case "status": {
      const next: UiState = {
        ...state,
        phase: msg.phase,
        phaseDetail: msg.detail,
        phaseLog: [...state.phaseLog, { phase: msg.phase, detail: msg.detail }],
      };
      if (msg.phase === "FAILED") {
        // pending selections are meaningless once the session is dead
        next.selectedPointId = null;
        next.pendingPreset = null;
        next.pendingPairs = [];
      }
      return next;
    }
    case "image":
      return { ...state, image: msg };
    case "stats":
      return { ...state, stats: msg };
  }
}

/** Fold an arbitrary decoded JSON value in; malformed input is counted, not thrown. */
export function applyRaw(state: UiState, raw: unknown): UiState {
  const msg = parseGatewayMessage(raw);
  if (msg === null) {
    return { ...state, ignoredMessages: state.ignoredMessages + 1 };
  }
  return applyMessage(state, msg);
}

// --- local selection transitions (same reducer style, replayable) ---

export function selectPoint(state: UiState, id: number | null): UiState {
  if (id !== null && !(String(id) in state.points)) return state;
  return { ...state, selectedPointId: id };
}

export function choosePreset(state: UiState, preset: number): UiState {
  return { ...state, pendingPreset: preset };
}

export function addFinePair(state: UiState, pair: FinePair): UiState {
  if (state.pendingPairs.length >= 4) return state;
  return { ...state, pendingPairs: [...state.pendingPairs, pair] };
}

export function clearFinePairs(state: UiState): UiState {
  return { ...state, pendingPairs: [] };
}

/** Replay a recorded session (JSON lines) through the reducer. */
export function replaySession(lines: string[]): UiState {
  let state = initialUiState;
  for (const line of lines) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    let raw: unknown;
    try {
      raw = JSON.parse(trimmed);
    } catch {
      state = { ...state, ignoredMessages: state.ignoredMessages + 1 };
      continue;
    }
    state = applyRaw(state, raw);
  }
  return state;
}
