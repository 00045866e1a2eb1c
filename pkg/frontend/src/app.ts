// Operator console wiring: WebSocket -> reducer -> views, clicks -> tasks.

import { OrbitCamera, ProjectedPoint } from "./camera.js";
import { FineTaskBuilder } from "./finetask.js";
import { decodePgmBase64 } from "./pgm.js";
import { PICK_RADIUS_PX, pickNearest } from "./pick.js";
import { drawPointCloud } from "./render.js";
import { makeCoarseTask } from "./schema.js";
import {
  UiState,
  applyRaw,
  choosePreset,
  initialUiState,
  selectPoint,
} from "./state.js";
import { PhaseTimer, statusRows } from "./statuspanel.js";
import { GatewayClient } from "./ws.js";

const PRESET_LABELS = ["0: top-down", "1: forward +X", "2: left -Y", "3: right +Y"];
const IMAGE_SCALE = 6; // displayed pixels per image pixel

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  state: UiState = initialUiState;
  camera = new OrbitCamera();
  timer = new PhaseTimer();
  fine = new FineTaskBuilder();
  client: GatewayClient;
  projected: ProjectedPoint[] = [];
  connected = false;
  fitted = false;
  lastImageId: number | null = null;

  cloud = el<HTMLCanvasElement>("cloud");
  imageCanvas = el<HTMLCanvasElement>("image");
  statusBody = el<HTMLTableSectionElement>("status-body");
  banner = el<HTMLDivElement>("banner");
  presetRow = el<HTMLDivElement>("presets");
  sendCoarse = el<HTMLButtonElement>("send-coarse");
  sendFine = el<HTMLButtonElement>("send-fine");
  clearFine = el<HTMLButtonElement>("clear-fine");
  abortBtn = el<HTMLButtonElement>("abort");
  phaseLog = el<HTMLUListElement>("phase-log");

  constructor() {
    const url = `ws://${location.hostname}:${
      new URLSearchParams(location.search).get("port") ?? "47100"
    }`;
    this.client = new GatewayClient(url, {
      onRaw: (raw) => {
        this.state = applyRaw(this.state, raw);
        this.afterMessage();
      },
      onConnection: (up) => {
        this.connected = up;
        this.banner.textContent = up ? "" : "reconnecting…";
        this.banner.style.display = up ? "none" : "block";
      },
    });
    this.wireCloud();
    this.wirePresets();
    this.wireImage();
    this.abortBtn.onclick = () => this.client.send({ type: "abort" });
    this.client.connect();
    this.redraw();
  }

  afterMessage(): void {
    this.timer.onPhase(this.state.phase, performance.now());
    if (!this.fitted && this.state.pointCount >= 10) {
      this.camera.fit(
        Object.values(this.state.points).map((p) => [p.x, p.y, p.z] as [number, number, number]),
      );
      this.fitted = true;
    }
    if (this.state.image && this.state.image.image_id !== this.lastImageId) {
      this.lastImageId = this.state.image.image_id;
      this.fine.reset();
    }
    this.redraw();
  }

  // --- point cloud interaction ---

  wireCloud(): void {
    let dragging = false;
    let panning = false;
    let moved = 0;
    let last: [number, number] = [0, 0];
    this.cloud.addEventListener("mousedown", (e) => {
      dragging = true;
      panning = e.button === 2 || e.shiftKey;
      moved = 0;
      last = [e.offsetX, e.offsetY];
    });
    this.cloud.addEventListener("contextmenu", (e) => e.preventDefault());
    window.addEventListener("mouseup", () => (dragging = false));
    this.cloud.addEventListener("mousemove", (e) => {
      if (!dragging) return;
      const dx = e.offsetX - last[0];
      const dy = e.offsetY - last[1];
      moved += Math.abs(dx) + Math.abs(dy);
      last = [e.offsetX, e.offsetY];
      if (panning) this.camera.pan(dx, dy, this.cloud.height);
      else this.camera.orbit(-dx * 0.008, dy * 0.008);
      this.redraw();
    });
    this.cloud.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.camera.zoom(e.deltaY > 0 ? 1.12 : 1 / 1.12);
      this.redraw();
    });
    this.cloud.addEventListener("click", (e) => {
      if (moved > 4) return; // a drag, not a pick
      const id = pickNearest(this.projected, e.offsetX, e.offsetY, PICK_RADIUS_PX);
      this.state = selectPoint(this.state, id);
      this.redraw();
    });
  }

  wirePresets(): void {
    PRESET_LABELS.forEach((label, i) => {
      const btn = document.createElement("button");
      btn.textContent = label;
      btn.onclick = () => {
        this.state = choosePreset(this.state, i);
        this.redraw();
      };
      this.presetRow.appendChild(btn);
    });
    this.sendCoarse.onclick = () => {
      const id = this.state.selectedPointId;
      const preset = this.state.pendingPreset;
      if (id === null || preset === null) return;
      const p = this.state.points[String(id)];
      if (!p) return;
      this.client.send(makeCoarseTask([p.x, p.y, p.z], preset));
    };
  }

  // --- fine-task image interaction ---

  wireImage(): void {
    this.imageCanvas.addEventListener("click", (e) => {
      const img = this.state.image;
      if (!img) return;
      const u = e.offsetX / IMAGE_SCALE;
      const v = e.offsetY / IMAGE_SCALE;
      this.fine.click(img.annotations, u, v);
      this.redraw();
    });
    this.sendFine.onclick = () => {
      if (!this.fine.canSend) return;
      this.client.send(this.fine.message());
      this.fine.reset();
      this.redraw();
    };
    this.clearFine.onclick = () => {
      this.fine.reset();
      this.redraw();
    };
  }

  // --- drawing ---

  redraw(): void {
    const ctx = this.cloud.getContext("2d")!;
    this.projected = drawPointCloud(ctx, this.state, this.camera, this.cloud.width, this.cloud.height);

    this.drawImagePanel();
    this.drawStatus();
    this.sendCoarse.disabled =
      this.state.selectedPointId === null || this.state.pendingPreset === null;
    this.sendFine.disabled = !this.fine.canSend;
  }

  drawImagePanel(): void {
    const ctx = this.imageCanvas.getContext("2d")!;
    const img = this.state.image;
    ctx.fillStyle = "#0b0e14";
    ctx.fillRect(0, 0, this.imageCanvas.width, this.imageCanvas.height);
    if (!img) {
      ctx.fillStyle = "#9aa4b2";
      ctx.font = "12px system-ui, sans-serif";
      ctx.fillText("no image yet", 10, 20);
      return;
    }
    const { width, height, gray } = decodePgmBase64(img.pgm_base64);
    this.imageCanvas.width = width * IMAGE_SCALE;
    this.imageCanvas.height = height * IMAGE_SCALE;
    const data = ctx.createImageData(width, height);
    for (let i = 0; i < gray.length; i++) {
      const g = gray[i] ?? 0;
      data.data[4 * i] = g;
      data.data[4 * i + 1] = g;
      data.data[4 * i + 2] = g;
      data.data[4 * i + 3] = 255;
    }
    const off = new OffscreenCanvas(width, height);
    off.getContext("2d")!.putImageData(data, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(off, 0, 0, width * IMAGE_SCALE, height * IMAGE_SCALE);

    ctx.strokeStyle = "#46b1ff";
    for (const a of img.annotations) {
      ctx.strokeRect(
        (a.u - 0.5) * IMAGE_SCALE,
        (a.v - 0.5) * IMAGE_SCALE,
        IMAGE_SCALE,
        IMAGE_SCALE,
      );
    }
    ctx.strokeStyle = "#ffcc33";
    if (this.fine.pending) {
      const p = this.fine.pending;
      ctx.beginPath();
      ctx.arc(p.u * IMAGE_SCALE, p.v * IMAGE_SCALE, 8, 0, 2 * Math.PI);
      ctx.stroke();
    }
    for (const pair of this.fine.pairs) {
      ctx.beginPath();
      ctx.moveTo(pair.u * IMAGE_SCALE, pair.v * IMAGE_SCALE);
      ctx.lineTo(pair.u_star * IMAGE_SCALE, pair.v_star * IMAGE_SCALE);
      ctx.stroke();
      ctx.strokeRect(pair.u_star * IMAGE_SCALE - 4, pair.v_star * IMAGE_SCALE - 4, 8, 8);
    }
  }

  drawStatus(): void {
    const rows = statusRows(this.state, this.timer.snapshot(performance.now()));
    this.statusBody.replaceChildren(
      ...rows.map((r) => {
        const tr = document.createElement("tr");
        const k = document.createElement("td");
        k.textContent = r.label;
        const v = document.createElement("td");
        v.textContent = r.value;
        tr.append(k, v);
        return tr;
      }),
    );
    this.phaseLog.replaceChildren(
      ...this.state.phaseLog.slice(-10).map((entry) => {
        const li = document.createElement("li");
        li.textContent = entry.detail ? `${entry.phase} — ${entry.detail}` : entry.phase;
        return li;
      }),
    );
  }
}

new App();
