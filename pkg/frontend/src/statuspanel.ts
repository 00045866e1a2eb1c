// Status panel contents: phase, per-phase elapsed wall time, link totals.
// Time tracking lives outside the reducer so replays stay deterministic.

import { UiState } from "./state.js";

export class PhaseTimer {
  private current: string | null = null;
  private startedAt = 0;
  private elapsed: Record<string, number> = {};

  onPhase(phase: string, nowMs: number): void {
    if (phase === this.current) return;
    if (this.current !== null) {
      this.elapsed[this.current] = (this.elapsed[this.current] ?? 0) + (nowMs - this.startedAt);
    }
    this.current = phase;
    this.startedAt = nowMs;
  }

  snapshot(nowMs: number): Record<string, number> {
    const out = { ...this.elapsed };
    if (this.current !== null) {
      out[this.current] = (out[this.current] ?? 0) + (nowMs - this.startedAt);
    }
    return out;
  }
}

export interface StatusRow {
  label: string;
  value: string;
}

export function statusRows(state: UiState, phaseMs: Record<string, number>): StatusRow[] {
  const rows: StatusRow[] = [
    { label: "phase", value: state.phase + (state.phaseDetail ? ` (${state.phaseDetail})` : "") },
    { label: "points", value: String(state.pointCount) },
  ];
  for (const [phase, ms] of Object.entries(phaseMs)) {
    rows.push({ label: `${phase.toLowerCase()} time`, value: `${(ms / 1000).toFixed(1)} s` });
  }
  const s = state.stats;
  if (s) {
    if (s.recv_bytes !== undefined) rows.push({ label: "received", value: formatBytes(s.recv_bytes) });
    if (s.total_bytes !== undefined) rows.push({ label: "sent (acked)", value: formatBytes(s.total_bytes) });
    if (s.mean_rtt_ms !== undefined) rows.push({ label: "mean RTT", value: `${s.mean_rtt_ms.toFixed(1)} ms` });
    if (s.ms_per_kb !== undefined) rows.push({ label: "ms/KB", value: s.ms_per_kb.toFixed(1) });
  }
  return rows;
}

export function formatBytes(n: number): string {
  if (n < 1024) return `${n} B`;
  if (n < 1024 * 1024) return `${(n / 1024).toFixed(1)} KB`;
  return `${(n / (1024 * 1024)).toFixed(2)} MB`;
}
