"""The two long-running agents and the scripted operator harness.

Robot side: self-exploration -> calibration -> coarse servo -> image ->
fine servo, fully autonomous between the two operator commands, streaming
map points/poses/status over the datagram protocol.

Human side: a gateway that acknowledges and buffers everything the robot
sends, reassembles images, exposes a WebSocket bridge speaking
line-delimited JSON to the operator console, and forwards operator
commands back as task datagrams.

The scripted operator stands in for the human in tests and experiment
runs; it reads the same gateway messages a UI would and answers with the
same task JSON, using world ground truth as its "eyes".
"""
from __future__ import annotations

import base64
import json
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

import numpy as np

from .calibration import CalibrationDataset, calibrate, perturb_hand_eye
from .controllers import CoarseTask, FineTask, GainConfig, run_coarse_phase, run_fine_phase
from .errors import (
    AwaitTimeoutError,
    InvalidPresetError,
    OperatorAbortError,
    TeleopError,
)
from .geometry import Pose, matrix_to_quat, rotx, roty
from .netproto import (
    DelayStats,
    Endpoint,
    ImageReassembler,
    MAX_POINTS_PER_DATAGRAM,
    MAX_POSES_PER_DATAGRAM,
    MsgType,
    chunk_image,
    compute_stats,
    decode_annotations,
    decode_map_points,
    decode_poses,
    decode_status,
    decode_task_coarse,
    decode_task_fine,
    encode_annotations,
    encode_map_points,
    encode_poses,
    encode_status,
    encode_task_coarse,
    encode_task_fine,
    parse_image_chunk,
)
from .simworld import (
    DEFAULT_EE_FROM_CAM,
    DEFAULT_TOOL_OFFSET,
    RobotState,
    Scene,
    TeleopWorld,
    VoConfig,
    default_exploration_center,
    exploration_trajectory,
    pgm_to_pixels,
    simulate_vo,
)


class RobotPhase(IntEnum):
    IDLE = 0
    EXPLORING = 1
    CALIBRATING = 2
    AWAIT_COARSE_TASK = 3
    COARSE_MOVING = 4
    SENDING_IMAGE = 5
    AWAIT_FINE_TASK = 6
    FINE_SERVOING = 7
    DONE = 8
    FAILED = 9


def preset_to_rotation(preset: int) -> np.ndarray:
    """One of four fixed end-effector orientations (tool axis = ee z).

    0: tool down (-Z base), 1: forward (+X), 2: left (-Y), 3: right (+Y).
    """
    if preset == 0:
        return rotx(math.pi)
    if preset == 1:
        return roty(math.pi / 2)
    if preset == 2:
        return rotx(math.pi / 2)
    if preset == 3:
        return rotx(-math.pi / 2)
    raise InvalidPresetError(f"preset must be 0..3, got {preset}")


@dataclass(frozen=True)
class RobotAgentConfig:
    scene: Scene
    target_name: str
    vo_cfg: VoConfig
    gains: GainConfig = GainConfig()
    tool_offset: np.ndarray = field(default_factory=lambda: DEFAULT_TOOL_OFFSET.copy())
    ee_from_cam_true: Pose = DEFAULT_EE_FROM_CAM
    exploration_center: np.ndarray | None = None
    exploration_radius: float = 0.35
    exploration_poses: int = 24
    exploration_cone: float = math.radians(45.0)
    cap_axis: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    explore_dt: float = 0.5  # simulated seconds per keyframe
    map_batch_keyframes: int = 2
    standoff: float = 0.15
    pixel_noise_sigma: float = 0.0
    limits: tuple[float, float] = (0.25, 1.0)
    await_timeout: float | None = 60.0
    rng_seed: int = 0
    net_timeout: float = 0.5
    net_retries: int = 20
    # (degrees, scale fraction): degrade the calibration after solving it,
    # for fine-motion robustness experiments
    calib_perturb: tuple[float, float] | None = None


@dataclass
class SessionReport:
    success: bool
    final_error_mm: float | None
    failure_reason: str | None
    phase_durations: dict[str, float]  # simulated seconds
    sent_by_type: dict[str, tuple[int, int]]  # name -> (datagrams, bytes), physical
    recv_by_type: dict[str, tuple[int, int]]
    bytes_sent_total: int
    bytes_recv_total: int
    datagrams_sent_total: int
    delay_stats: DelayStats
    wall_seconds: float
    coarse: dict | None = None
    fine: dict | None = None

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock-derived quantities."""
        return {
            "success": self.success,
            "final_error_mm": self.final_error_mm,
            "failure_reason": self.failure_reason,
            "phase_durations": self.phase_durations,
            "sent_by_type": self.sent_by_type,
            "recv_by_type": self.recv_by_type,
            "bytes_sent_total": self.bytes_sent_total,
            "bytes_recv_total": self.bytes_recv_total,
            "datagrams_sent_total": self.datagrams_sent_total,
        }

    def to_dict(self) -> dict:
        out = self.deterministic_dict()
        out.update(
            {
                "wall_seconds": self.wall_seconds,
                "mean_rtt_ms": self.delay_stats.mean_rtt * 1000.0,
                "ms_per_kb": self.delay_stats.ms_per_kb,
                "coarse": self.coarse,
                "fine": self.fine,
            }
        )
        return out


class RobotAgent:
    """Runs the robot-side phase machine over one endpoint."""

    def __init__(self, cfg: RobotAgentConfig, endpoint: Endpoint):
        self.cfg = cfg
        self.endpoint = endpoint
        self.phase = RobotPhase.IDLE
        self.world: TeleopWorld | None = None
        self.calib = None
        self.report: SessionReport | None = None
        self._phase_durations: dict[str, float] = {}
        self._image_counter = 0

    # --- plumbing ---

    def _send(self, msg_type: MsgType, payload: bytes) -> None:
        self.endpoint.send_with_response(
            msg_type, payload, timeout=self.cfg.net_timeout, max_retries=self.cfg.net_retries
        )

    def _set_phase(self, phase: RobotPhase, detail: str = "") -> None:
        if phase != RobotPhase.FAILED and phase <= self.phase:
            raise TeleopError(f"illegal phase transition {self.phase.name} -> {phase.name}")
        self.phase = phase
        try:
            self._send(MsgType.STATUS, encode_status(int(phase), detail))
        except TeleopError:
            if phase != RobotPhase.FAILED:
                raise  # status delivery failure mid-session is a session failure

    def _await(self, wanted: MsgType):
        deadline = (
            None if self.cfg.await_timeout is None else time.monotonic() + self.cfg.await_timeout
        )
        while True:
            if deadline is not None and time.monotonic() > deadline:
                raise AwaitTimeoutError(f"no {wanted.name} within {self.cfg.await_timeout}s")
            d = self.endpoint.receive(timeout=0.2)
            if d is not None and d.msg_type == wanted:
                return d

    # --- phases ---

    def _explore(self):
        cfg = self.cfg
        center = (
            cfg.exploration_center
            if cfg.exploration_center is not None
            else default_exploration_center(cfg.scene)
        )
        ee_poses = exploration_trajectory(
            center,
            cfg.exploration_radius,
            cfg.exploration_poses,
            cfg.exploration_cone,
            cfg.rng_seed,
            ee_from_cam=cfg.ee_from_cam_true,
            cap_axis=cfg.cap_axis,
            workspace=cfg.scene.workspace,
        )
        true_cam = [p.compose(cfg.ee_from_cam_true) for p in ee_poses]
        vo = simulate_vo(true_cam, cfg.scene, cfg.vo_cfg)

        # stream poses and newly triangulated points in keyframe batches
        n_kf = len(vo.keyframe_indices)
        for start in range(0, n_kf, cfg.map_batch_keyframes):
            batch = range(start, min(start + cfg.map_batch_keyframes, n_kf))
            pose_items = []
            for j in batch:
                p = vo.cam_poses[j]
                pose_items.append(
                    (j, tuple(p.translation), tuple(matrix_to_quat(p.rotation)))
                )
            for k in range(0, len(pose_items), MAX_POSES_PER_DATAGRAM):
                self._send(MsgType.POSE, encode_poses(pose_items[k : k + MAX_POSES_PER_DATAGRAM]))
            fresh = [
                mp for mp in vo.map_points if vo.triangulated_at[mp.id] in batch
            ]
            for k in range(0, len(fresh), MAX_POINTS_PER_DATAGRAM):
                self._send(
                    MsgType.MAP_POINTS,
                    encode_map_points(fresh[k : k + MAX_POINTS_PER_DATAGRAM]),
                )

        self._phase_durations["exploration"] = n_kf * cfg.explore_dt
        dataset = CalibrationDataset(
            [(vo.cam_poses[j], ee_poses[i]) for j, i in enumerate(vo.keyframe_indices)]
        )
        state = RobotState(ee_poses[-1], n_kf * cfg.explore_dt)
        return dataset, state, true_cam[0]

    def _send_image(self, image) -> None:
        pgm = image.to_pgm()
        pgm_id = 2 * self._image_counter
        ann_id = pgm_id + 1
        self._image_counter += 1
        for payload in chunk_image(pgm_id, image.width, image.height, pgm):
            self._send(MsgType.IMAGE_CHUNK, payload)
        blob = encode_annotations(image.feature_annotations)
        for payload in chunk_image(ann_id, image.width, image.height, blob):
            self._send(MsgType.IMAGE_CHUNK, payload)

    def run(self) -> SessionReport:
        cfg = self.cfg
        t_wall = time.monotonic()
        success = False
        final_mm: float | None = None
        reason: str | None = None
        coarse_dict = fine_dict = None
        try:
            self._send(MsgType.HELLO, b"")
            self._set_phase(RobotPhase.EXPLORING)
            dataset, state, base_from_c0_true = self._explore()

            self._set_phase(RobotPhase.CALIBRATING)
            self.calib = calibrate(dataset)
            if cfg.calib_perturb is not None:
                deg, frac = cfg.calib_perturb
                self.calib = perturb_hand_eye(self.calib, deg, frac, cfg.rng_seed)
            self.world = TeleopWorld(
                cfg.scene,
                state,
                base_from_c0_true=base_from_c0_true,
                vo_cfg=cfg.vo_cfg,
                ee_from_cam_true=cfg.ee_from_cam_true,
                limits=cfg.limits,
                pixel_noise_sigma=cfg.pixel_noise_sigma,
                rng_seed=cfg.rng_seed + 1,
            )

            self._set_phase(RobotPhase.AWAIT_COARSE_TASK)
            d = self._await(MsgType.TASK_COARSE)
            target, preset = decode_task_coarse(d.payload)
            task = CoarseTask(
                np.array(target), preset_to_rotation(preset), standoff=cfg.standoff
            )

            self._set_phase(RobotPhase.COARSE_MOVING)
            creport = run_coarse_phase(self.world, task, self.calib, cfg.gains)
            coarse_dict = creport.to_dict()
            self._phase_durations["coarse"] = creport.sim_seconds

            self._set_phase(RobotPhase.SENDING_IMAGE)
            self._send_image(self.world.render())

            self._set_phase(RobotPhase.AWAIT_FINE_TASK)
            d = self._await(MsgType.TASK_FINE)
            wire_pairs = decode_task_fine(d.payload)
            ids = [int(p[0]) for p in wire_pairs]
            tracked = self.world.tracked_pixels(ids)
            pairs = []
            for fid, u, v, us, vs in wire_pairs:
                current = tracked.get(int(fid), (u, v))  # fall back to operator's click
                pairs.append((int(fid), current, (us, vs)))
            fine = FineTask(pairs, [self.world.feature_depth(fid) for fid in ids])

            self._set_phase(RobotPhase.FINE_SERVOING)
            freport = run_fine_phase(
                self.world,
                fine,
                self.world.intrinsics,
                cfg.gains,
                ee_from_cam_cmd=self.calib.ee_from_cam(),
                measure_target=cfg.target_name,
                tool_offset=cfg.tool_offset,
            )
            fine_dict = freport.to_dict()
            self._phase_durations["fine"] = freport.sim_seconds

            final_mm, success = self.world.final_error(cfg.target_name, cfg.tool_offset)
            self._set_phase(
                RobotPhase.DONE, detail=f"error_mm={final_mm:.3f};success={success}"
            )
        except TeleopError as exc:
            reason = f"{type(exc).__name__}: {exc}"
            try:
                self._set_phase(RobotPhase.FAILED, detail=reason)
            except TeleopError:
                pass
        ep = self.endpoint
        self.report = SessionReport(
            success=success,
            final_error_mm=final_mm,
            failure_reason=reason,
            phase_durations=dict(self._phase_durations),
            sent_by_type={k: (v[0], v[1]) for k, v in sorted(ep.sent_by_type.items())},
            recv_by_type={k: (v[0], v[1]) for k, v in sorted(ep.recv_by_type.items())},
            bytes_sent_total=ep.physical_sent_bytes(),
            bytes_recv_total=ep.physical_recv_bytes(),
            datagrams_sent_total=sum(v[0] for v in ep.sent_by_type.values()),
            delay_stats=ep.stats(),
            wall_seconds=time.monotonic() - t_wall,
            coarse=coarse_dict,
            fine=fine_dict,
        )
        return self.report


def run_robot_agent(cfg: RobotAgentConfig, endpoint: Endpoint) -> SessionReport:
    return RobotAgent(cfg, endpoint).run()


# --- human gateway ------------------------------------------------------------


class HumanGateway:
    """Receives/acknowledges robot traffic, bridges to the operator console.

    Gateway -> UI messages (one JSON object per line over the WebSocket):
      {"type":"points","points":[{"id","x","y","z"},...]}       incremental
      {"type":"status","phase":"...","detail":"..."}
      {"type":"image","image_id",w,h,"pgm_base64","annotations":[{"id","u","v"}]}
      {"type":"stats", ...}
    UI -> Gateway: {"type":"coarse_task","target":[x,y,z],"preset":p},
      {"type":"fine_task","pairs":[{"feature_id","u","v","u_star","v_star"}]},
      {"type":"abort"}.
    """

    def __init__(
        self,
        endpoint: Endpoint,
        ui_port: int | None = None,
        record_path=None,
        net_timeout: float = 0.5,
        net_retries: int = 20,
    ):
        self.endpoint = endpoint
        self.net_timeout = net_timeout
        self.net_retries = net_retries
        self.points: dict[int, tuple[float, float, float]] = {}
        self.poses: list[tuple[int, tuple, tuple]] = []
        self.phase: str = RobotPhase.IDLE.name
        self.phase_detail: str = ""
        self.latest_image: dict | None = None
        self.aborted = False
        self.history: list[dict] = []
        self._reassembler = ImageReassembler()
        self._streams: dict[int, tuple[int, int, bytes]] = {}
        self._subs: list[queue.Queue] = []
        self._lock = threading.Lock()
        self._done = threading.Event()
        self._closed = threading.Event()
        self._record = open(record_path, "w", encoding="utf-8") if record_path else None
        self._rx = threading.Thread(target=self._rx_loop, daemon=True)
        self._rx.start()
        self._ws_server = None
        self._ws_thread = None
        if ui_port is not None:
            self._start_ws(ui_port)

    # --- pub/sub ---

    def subscribe(self) -> queue.Queue:
        """Queue of UI messages; primed with a snapshot of the current state."""
        q: queue.Queue = queue.Queue()
        with self._lock:
            if self.points:
                q.put(self._points_message(list(self.points.items())))
            q.put({"type": "status", "phase": self.phase, "detail": self.phase_detail})
            if self.latest_image is not None:
                q.put(self.latest_image)
            q.put(self._stats_message())
            self._subs.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subs:
                self._subs.remove(q)

    def _broadcast(self, msg: dict) -> None:
        with self._lock:
            self.history.append(msg)
            if self._record:
                self._record.write(json.dumps(msg) + "\n")
                self._record.flush()
            for q in self._subs:
                q.put(msg)

    @staticmethod
    def _points_message(items) -> dict:
        return {
            "type": "points",
            "points": [
                {"id": int(i), "x": float(x), "y": float(y), "z": float(z)}
                for i, (x, y, z) in items
            ],
        }

    def _stats_message(self) -> dict:
        s = compute_stats(self.endpoint.delay_log)
        return {
            "type": "stats",
            "count": s.count,
            "total_bytes": s.total_bytes,
            "mean_rtt_ms": s.mean_rtt * 1000.0,
            "ms_per_kb": s.ms_per_kb,
            "recv_datagrams": sum(v[0] for v in self.endpoint.recv_by_type.values()),
            "recv_bytes": self.endpoint.physical_recv_bytes(),
            "phase": self.phase,
        }

    # --- inbound robot traffic ---

    def _rx_loop(self) -> None:
        while not self._closed.is_set():
            d = self.endpoint.receive(timeout=0.2)
            if d is None:
                continue
            if d.msg_type == MsgType.MAP_POINTS:
                fresh = []
                for pid, x, y, z in decode_map_points(d.payload):
                    if pid not in self.points:
                        self.points[pid] = (x, y, z)
                        fresh.append((pid, (x, y, z)))
                if fresh:
                    self._broadcast(self._points_message(fresh))
            elif d.msg_type == MsgType.POSE:
                self.poses.extend(decode_poses(d.payload))
            elif d.msg_type == MsgType.STATUS:
                code, detail = decode_status(d.payload)
                self.phase = RobotPhase(code).name
                self.phase_detail = detail
                self._broadcast({"type": "status", "phase": self.phase, "detail": detail})
                self._broadcast(self._stats_message())
                if self.phase in (RobotPhase.DONE.name, RobotPhase.FAILED.name):
                    self._done.set()
            elif d.msg_type == MsgType.IMAGE_CHUNK:
                done = self._reassembler.add(parse_image_chunk(d.payload))
                if done is not None:
                    stream_id, w, h, data = done
                    self._streams[stream_id] = (w, h, data)
                    self._try_emit_image(stream_id)

    def _try_emit_image(self, stream_id: int) -> None:
        # even stream ids carry the PGM, odd ids the annotation blob of the
        # same logical image (id = stream_id // 2)
        base = stream_id - (stream_id % 2)
        if base not in self._streams or base + 1 not in self._streams:
            return
        w, h, pgm = self._streams.pop(base)
        _, _, blob = self._streams.pop(base + 1)
        annotations = decode_annotations(blob)
        msg = {
            "type": "image",
            "image_id": base // 2,
            "width": w,
            "height": h,
            "pgm_base64": base64.b64encode(pgm).decode("ascii"),
            "annotations": [
                {"id": int(a), "u": float(u), "v": float(v)} for a, u, v in annotations
            ],
        }
        self.latest_image = msg
        self._broadcast(msg)

    # --- outbound operator commands ---

    def send_coarse_task(self, target, preset: int) -> None:
        payload = encode_task_coarse((float(target[0]), float(target[1]), float(target[2])), preset)
        self.endpoint.send_with_response(
            MsgType.TASK_COARSE, payload, timeout=self.net_timeout, max_retries=self.net_retries
        )

    def send_fine_task(self, pairs) -> None:
        """pairs: iterable of (feature_id, u, v, u_star, v_star)."""
        self.endpoint.send_with_response(
            MsgType.TASK_FINE,
            encode_task_fine(pairs),
            timeout=self.net_timeout,
            max_retries=self.net_retries,
        )

    def handle_ui_message(self, msg: dict) -> None:
        kind = msg.get("type")
        if kind == "coarse_task":
            self.send_coarse_task(msg["target"], int(msg["preset"]))
        elif kind == "fine_task":
            self.send_fine_task(
                [
                    (int(p["feature_id"]), p["u"], p["v"], p["u_star"], p["v_star"])
                    for p in msg["pairs"]
                ]
            )
        elif kind == "abort":
            self.aborted = True
            self._done.set()
        else:
            raise ValueError(f"unknown UI message type {kind!r}")

    # --- websocket bridge ---

    def _start_ws(self, port: int) -> None:
        from websockets.sync.server import serve

        ready = threading.Event()

        def main():
            with serve(self._ws_handler, "127.0.0.1", port) as server:
                self._ws_server = server
                ready.set()
                server.serve_forever()

        self._ws_thread = threading.Thread(target=main, daemon=True)
        self._ws_thread.start()
        if not ready.wait(timeout=5.0):
            raise TeleopError(f"websocket bridge failed to start on port {port}")

    def _ws_handler(self, conn) -> None:
        q = self.subscribe()
        stop = threading.Event()

        def writer():
            while not stop.is_set():
                try:
                    msg = q.get(timeout=0.2)
                except queue.Empty:
                    continue
                try:
                    conn.send(json.dumps(msg) + "\n")
                except Exception:
                    return

        wt = threading.Thread(target=writer, daemon=True)
        wt.start()
        try:
            for raw in conn:
                if isinstance(raw, bytes):
                    raw = raw.decode("utf-8")
                for line in raw.splitlines():
                    if line.strip():
                        self.handle_ui_message(json.loads(line))
        except Exception:
            pass
        finally:
            stop.set()
            self.unsubscribe(q)

    # --- lifecycle ---

    def wait_done(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)

    def image_pixels(self) -> np.ndarray | None:
        if self.latest_image is None:
            return None
        return pgm_to_pixels(base64.b64decode(self.latest_image["pgm_base64"]))

    def close(self) -> None:
        self._closed.set()
        self._rx.join(timeout=2.0)
        if self._ws_server is not None:
            self._ws_server.shutdown()
        if self._record:
            self._record.close()
        self.endpoint.close()


# --- scripted operator ---------------------------------------------------------


@dataclass(frozen=True)
class OperatorPolicy:
    """What the stand-in operator wants: which target, how to orient, how
    many feature pairs to specify on the send-back image."""

    target_name: str
    preset: int = 1
    max_pairs: int = 4
    tool_offset: np.ndarray = field(default_factory=lambda: DEFAULT_TOOL_OFFSET.copy())


class ScriptedOperator:
    """Headless operator: reacts to gateway messages exactly as the UI would.

    It consults the world's ground truth to decide *where* to click (the
    human's perception); everything it sends travels through the same
    gateway/datagram path as a real operator's commands.
    """

    def __init__(
        self,
        gateway: HumanGateway,
        policy: OperatorPolicy,
        world_supplier: Callable[[], TeleopWorld | None],
    ):
        self.gateway = gateway
        self.policy = policy
        self._world_supplier = world_supplier
        self.sent_coarse = False
        self.sent_fine = False
        self.error: Exception | None = None

    def _world(self) -> TeleopWorld:
        world = self._world_supplier()
        if world is None:
            raise OperatorAbortError("world oracle unavailable")
        return world

    def pick_coarse_target(self) -> tuple[int, tuple[float, float, float]]:
        """Nearest stored map point to the task target, as the click would."""
        world = self._world()
        points = dict(self.gateway.points)  # snapshot; the rx thread keeps writing
        if not points:
            raise OperatorAbortError("no map points to pick from")
        target_vo = world.base_point_to_vo(world.scene.targets[self.policy.target_name])
        pid, xyz = min(
            points.items(),
            key=lambda kv: float(np.linalg.norm(np.array(kv[1]) - target_vo)),
        )
        return pid, xyz

    def build_fine_pairs(self, annotations: list[dict]) -> list[tuple[int, float, float, float, float]]:
        world = self._world()
        planned = world.plan_goal_view_pairs(
            self.policy.target_name,
            preset_to_rotation(self.policy.preset),
            self.policy.tool_offset,
            self.policy.max_pairs,
        )
        ann_uv = {a["id"]: (a["u"], a["v"]) for a in annotations}
        pairs = []
        for fid, _, (gu, gv) in planned:
            if fid in ann_uv:
                u, v = ann_uv[fid]
                pairs.append((fid, float(u), float(v), float(gu), float(gv)))
        if not pairs:
            raise OperatorAbortError("no usable features on the received image")
        return pairs

    def run(self, timeout: float = 300.0) -> None:
        q = self.gateway.subscribe()
        deadline = time.monotonic() + timeout
        try:
            while time.monotonic() < deadline:
                try:
                    msg = q.get(timeout=0.2)
                except queue.Empty:
                    continue
                kind = msg.get("type")
                if kind == "status":
                    if msg["phase"] in (RobotPhase.DONE.name, RobotPhase.FAILED.name):
                        return
                    if msg["phase"] == RobotPhase.AWAIT_COARSE_TASK.name and not self.sent_coarse:
                        _, xyz = self.pick_coarse_target()
                        self.gateway.send_coarse_task(xyz, self.policy.preset)
                        self.sent_coarse = True
                elif kind == "image" and not self.sent_fine:
                    pairs = self.build_fine_pairs(msg["annotations"])
                    self.gateway.send_fine_task(pairs)
                    self.sent_fine = True
            raise OperatorAbortError(f"operator timed out after {timeout}s")
        except Exception as exc:
            self.error = exc
        finally:
            self.gateway.unsubscribe(q)


def run_human_gateway(endpoint: Endpoint, ui_bridge_port: int | None = None, **kwargs) -> HumanGateway:
    return HumanGateway(endpoint, ui_port=ui_bridge_port, **kwargs)
