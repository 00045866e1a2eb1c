import json
import math
import threading
import time

import numpy as np
import pytest
from helpers import CAP_AXIS

from teleop.calibration import CalibrationDataset
from teleop.errors import InvalidPresetError, OperatorAbortError
from teleop.geometry import Pose, geodesic_distance, is_rotation
from teleop.netproto import (
    Datagram,
    Endpoint,
    ImpairmentConfig,
    MsgType,
    decode_task_coarse,
    encode,
    encode_map_points,
    impaired_link,
    queue_pair,
)
from teleop.sessions import (
    HumanGateway,
    OperatorPolicy,
    RobotAgent,
    RobotAgentConfig,
    RobotPhase,
    ScriptedOperator,
    preset_to_rotation,
)
from teleop.simworld import VoConfig, scenario_scene

DEFAULT_SCALE = (2.0, 2.4, 2.8)


def make_agent_cfg(scenario="press_button", seed=0, **overrides) -> RobotAgentConfig:
    scene = scenario_scene(scenario)
    target = "button_center" if scenario == "press_button" else "handle_grasp"
    vo_keys = {"pose_noise_sigma", "point_noise_sigma"}
    vo_kwargs = {k: overrides.pop(k) for k in list(overrides) if k in vo_keys}
    return RobotAgentConfig(
        scene=scene,
        target_name=target,
        vo_cfg=VoConfig(scale_per_axis=np.array(DEFAULT_SCALE), rng_seed=seed, **vo_kwargs),
        rng_seed=seed,
        **overrides,
    )


def run_session(cfg: RobotAgentConfig, impairment: ImpairmentConfig | None = None,
                operator_policy: OperatorPolicy | None = None, record_path=None):
    """Full in-process session over a queue-pair link; returns (report, gateway)."""
    ta, tb = queue_pair()
    if impairment is not None:
        ta = impaired_link(ta, impairment)
        tb = impaired_link(tb, ImpairmentConfig(**{**impairment.__dict__, "rng_seed": impairment.rng_seed + 1}))
    ep_robot, ep_human = Endpoint(ta), Endpoint(tb)
    agent = RobotAgent(cfg, ep_robot)
    gateway = HumanGateway(ep_human, net_timeout=cfg.net_timeout, net_retries=cfg.net_retries,
                           record_path=record_path)
    policy = operator_policy or OperatorPolicy(target_name=cfg.target_name)
    operator = ScriptedOperator(gateway, policy, world_supplier=lambda: agent.world)
    op_thread = threading.Thread(target=operator.run, daemon=True)
    op_thread.start()
    try:
        report = agent.run()
        gateway.wait_done(timeout=10.0)
        op_thread.join(timeout=10.0)
        return report, gateway, operator
    finally:
        gateway.close()
        ep_robot.close()


# --- presets -------------------------------------------------------------------


def test_preset_definitions():
    ez = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(preset_to_rotation(0) @ ez, [0, 0, -1], atol=1e-12)
    np.testing.assert_allclose(preset_to_rotation(1) @ ez, [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(preset_to_rotation(2) @ ez, [0, -1, 0], atol=1e-12)
    np.testing.assert_allclose(preset_to_rotation(3) @ ez, [0, 1, 0], atol=1e-12)


def test_presets_valid_and_mutually_distant():
    rots = [preset_to_rotation(i) for i in range(4)]
    for r in rots:
        assert is_rotation(r, tol=1e-12)
    for i in range(4):
        for j in range(i + 1, 4):
            assert geodesic_distance(rots[i], rots[j]) >= math.pi / 2 - 1e-12


def test_preset_out_of_range():
    with pytest.raises(InvalidPresetError):
        preset_to_rotation(4)
    with pytest.raises(InvalidPresetError):
        preset_to_rotation(-1)


# --- full sessions ---------------------------------------------------------------


def test_full_session_noiseless_reaches_done():
    cfg = make_agent_cfg(seed=1)
    report, gateway, operator = run_session(cfg)
    assert operator.error is None
    assert report.failure_reason is None
    assert report.success is True
    assert report.final_error_mm is not None and report.final_error_mm <= 10.0
    assert gateway.phase == RobotPhase.DONE.name
    # the gateway saw every phase in order
    phases = [m["phase"] for m in gateway.history if m["type"] == "status"]
    order = [RobotPhase[p] for p in phases]
    assert order == sorted(order)
    assert order[-1] == RobotPhase.DONE
    # points arrived and match the robot's VO payloads
    assert len(gateway.points) > 10
    # image was reassembled with annotations
    assert gateway.latest_image is not None
    assert gateway.latest_image["annotations"]
    pixels = gateway.image_pixels()
    assert pixels is not None and pixels.shape == (64, 64)


def test_full_session_hold_handler():
    cfg = make_agent_cfg(scenario="hold_handler", seed=2)
    report, gateway, operator = run_session(cfg)
    assert operator.error is None
    assert report.success is True


def test_session_deterministic_reports():
    a, _, _ = run_session(make_agent_cfg(seed=3))
    b, _, _ = run_session(make_agent_cfg(seed=3))
    assert a.deterministic_dict() == b.deterministic_dict()


def test_session_with_noise_and_perturbation():
    cfg = make_agent_cfg(
        seed=4,
        pose_noise_sigma=(0.001, 0.001),
        point_noise_sigma=0.0024,
        pixel_noise_sigma=0.5,
        calib_perturb=(2.0, 0.05),
    )
    report, _, operator = run_session(cfg)
    assert operator.error is None
    assert report.success is True
    assert report.final_error_mm <= 10.0


def test_session_await_timeout_fails():
    cfg = make_agent_cfg(seed=5, await_timeout=0.5)
    ta, tb = queue_pair()
    ep_robot, ep_human = Endpoint(ta), Endpoint(tb)
    agent = RobotAgent(cfg, ep_robot)
    gateway = HumanGateway(ep_human)  # no operator: nobody answers
    try:
        report = agent.run()
        assert report.success is False
        assert "AwaitTimeout" in report.failure_reason
        assert gateway.wait_done(timeout=5.0)
        assert gateway.phase == RobotPhase.FAILED.name
    finally:
        gateway.close()
        ep_robot.close()


def test_session_degenerate_calibration_fails_before_coarse():
    class StaticCameraAgent(RobotAgent):
        def _explore(self):
            dataset, state, anchor = super()._explore()
            frozen = [(Pose(c.rotation, dataset.samples[0][0].translation), e)
                      for c, e in dataset.samples]
            return CalibrationDataset(frozen), state, anchor

    cfg = make_agent_cfg(seed=6)
    ta, tb = queue_pair()
    ep_robot, ep_human = Endpoint(ta), Endpoint(tb)
    agent = StaticCameraAgent(cfg, ep_robot)
    gateway = HumanGateway(ep_human)
    try:
        report = agent.run()
        assert report.success is False
        assert "Degenerate" in report.failure_reason
        gateway.wait_done(timeout=5.0)
        phases = [m["phase"] for m in gateway.history if m["type"] == "status"]
        assert RobotPhase.COARSE_MOVING.name not in phases
        assert phases[-1] == RobotPhase.FAILED.name
    finally:
        gateway.close()
        ep_robot.close()


def test_session_loss_robustness_matches_clean_run():
    clean_cfg = make_agent_cfg(seed=7, net_timeout=0.15)
    clean_report, clean_gateway, op_a = run_session(clean_cfg)

    lossy_cfg = make_agent_cfg(seed=7, net_timeout=0.15)
    lossy = ImpairmentConfig(
        one_way_latency=0.01, loss_probability=0.3, rng_seed=99
    )
    lossy_report, lossy_gateway, op_b = run_session(lossy_cfg, impairment=lossy)

    assert op_a.error is None and op_b.error is None
    assert clean_report.success and lossy_report.success
    assert clean_report.final_error_mm == pytest.approx(lossy_report.final_error_mm, abs=1e-9)
    assert clean_gateway.points == lossy_gateway.points
    # retransmissions cost bytes: the lossy run must not be cheaper
    assert lossy_report.bytes_sent_total >= clean_report.bytes_sent_total


# --- gateway unit behavior -------------------------------------------------------


def test_gateway_deduplicates_retransmitted_points():
    ta, tb = queue_pair()
    gateway = HumanGateway(Endpoint(tb))
    try:
        payload = encode_map_points([(i, float(i), 0.0, 0.0) for i in range(10)])
        frame = encode(Datagram(MsgType.MAP_POINTS, 5, payload))
        for _ in range(3):  # original + 2 retransmits
            ta.send(frame)
        deadline = time.monotonic() + 2.0
        while len(gateway.points) < 10 and time.monotonic() < deadline:
            time.sleep(0.01)
        time.sleep(0.1)
        assert len(gateway.points) == 10
        point_msgs = [m for m in gateway.history if m["type"] == "points"]
        assert sum(len(m["points"]) for m in point_msgs) == 10
    finally:
        gateway.close()


def test_gateway_point_store_unique_under_overlapping_batches():
    ta, tb = queue_pair()
    gateway = HumanGateway(Endpoint(tb))
    try:
        ids = list(range(500))
        for start in range(0, 500, 50):
            batch = [(i, float(i), 1.0, 2.0) for i in ids[start : start + 50]]
            ta.send(encode(Datagram(MsgType.MAP_POINTS, start + 1, encode_map_points(batch))))
            # duplicate datagram id of the previous frame sneaks in too
            ta.send(encode(Datagram(MsgType.MAP_POINTS, start + 1, encode_map_points(batch))))
        deadline = time.monotonic() + 3.0
        while len(gateway.points) < 500 and time.monotonic() < deadline:
            time.sleep(0.01)
        assert len(gateway.points) == 500
    finally:
        gateway.close()


def test_gateway_reassembles_image_byte_identical():
    from teleop.netproto import chunk_image, encode_annotations
    from teleop.simworld import DEFAULT_INTRINSICS, make_button_scene, render_image
    from teleop.simworld import exploration_trajectory, default_exploration_center

    scene = make_button_scene()
    cam = exploration_trajectory(
        default_exploration_center(scene), 0.3, 4, 0.6, rng_seed=1, cap_axis=CAP_AXIS
    )[0]
    image = render_image(scene, cam, DEFAULT_INTRINSICS)
    pgm = image.to_pgm()

    ta, tb = queue_pair()
    gateway = HumanGateway(Endpoint(tb))
    try:
        did = 1
        for payload in chunk_image(0, image.width, image.height, pgm):
            ta.send(encode(Datagram(MsgType.IMAGE_CHUNK, did, payload)))
            did += 1
        blob = encode_annotations(image.feature_annotations)
        for payload in chunk_image(1, image.width, image.height, blob):
            ta.send(encode(Datagram(MsgType.IMAGE_CHUNK, did, payload)))
            did += 1
        deadline = time.monotonic() + 3.0
        while gateway.latest_image is None and time.monotonic() < deadline:
            time.sleep(0.01)
        assert gateway.latest_image is not None
        import base64

        delivered = base64.b64decode(gateway.latest_image["pgm_base64"])
        assert delivered == pgm  # byte-identical to the sent PGM
        got_ann = [
            (a["id"], a["u"], a["v"]) for a in gateway.latest_image["annotations"]
        ]
        expect_ann = [(i, pytest.approx(u, abs=1e-5), pytest.approx(v, abs=1e-5))
                      for i, u, v in image.feature_annotations]
        assert got_ann == expect_ann
    finally:
        gateway.close()


def test_stop_and_wait_retransmits_until_peer_appears():
    from teleop.netproto import UdpTransport

    placeholder = UdpTransport(("127.0.0.1", 0), ("127.0.0.1", 1))
    human_port = placeholder.local_address[1]
    placeholder.close()  # free the port; the robot targets it before it exists

    t_robot = UdpTransport(("127.0.0.1", 0), ("127.0.0.1", human_port))
    ep_robot = Endpoint(t_robot)
    result: list = []

    def sender():
        entry = ep_robot.send_with_response(
            MsgType.HELLO, b"", timeout=0.1, max_retries=50
        )
        result.append(entry)

    th = threading.Thread(target=sender, daemon=True)
    th.start()
    time.sleep(0.5)  # several retransmissions happen into the void
    t_human = UdpTransport(("127.0.0.1", human_port), t_robot.local_address)
    ep_human = Endpoint(t_human)
    try:
        th.join(timeout=5.0)
        assert result, "send_with_response never completed"
        entry = result[0]
        assert entry.t_response_received is not None
        assert entry.attempts > 1  # it really was retransmitting
        assert ep_human.receive(timeout=1.0).msg_type == MsgType.HELLO
    finally:
        ep_human.close()
        ep_robot.close()


def test_gateway_forwards_coarse_task_with_f32_round_trip():
    ta, tb = queue_pair()
    robot_ep = Endpoint(ta)
    gateway = HumanGateway(Endpoint(tb))
    try:
        target = [0.123456, -0.654321, 1.25]
        gateway.handle_ui_message({"type": "coarse_task", "target": target, "preset": 2})
        got = robot_ep.receive(timeout=2.0)
        assert got is not None and got.msg_type == MsgType.TASK_COARSE
        wire_target, preset = decode_task_coarse(got.payload)
        assert preset == 2
        np.testing.assert_allclose(wire_target, np.array(target, dtype=np.float32), rtol=0, atol=0)
    finally:
        gateway.close()
        robot_ep.close()


def test_gateway_abort_message():
    ta, tb = queue_pair()
    gateway = HumanGateway(Endpoint(tb))
    try:
        gateway.handle_ui_message({"type": "abort"})
        assert gateway.aborted
        assert gateway.wait_done(timeout=1.0)
    finally:
        gateway.close()


# --- scripted operator -----------------------------------------------------------


def test_operator_aborts_on_empty_point_cloud():
    cfg = make_agent_cfg(seed=8)
    ta, tb = queue_pair()
    ep_robot, ep_human = Endpoint(ta), Endpoint(tb)
    gateway = HumanGateway(ep_human)
    agent = RobotAgent(cfg, ep_robot)
    # world exists but no points ever arrived
    from teleop.simworld import RobotState, TeleopWorld

    agent.world = TeleopWorld(
        cfg.scene,
        RobotState(Pose.identity()),
        base_from_c0_true=Pose.identity(),
        vo_cfg=cfg.vo_cfg,
    )
    operator = ScriptedOperator(gateway, OperatorPolicy(cfg.target_name), lambda: agent.world)
    try:
        with pytest.raises(OperatorAbortError):
            operator.pick_coarse_target()
    finally:
        gateway.close()
        ep_robot.close()


def test_operator_task_determinism():
    reports = []
    for _ in range(2):
        cfg = make_agent_cfg(seed=9)
        ta, tb = queue_pair()
        ep_robot, ep_human = Endpoint(ta), Endpoint(tb)
        agent = RobotAgent(cfg, ep_robot)
        gateway = HumanGateway(ep_human)
        operator = ScriptedOperator(gateway, OperatorPolicy(cfg.target_name), lambda: agent.world)
        wire: list[tuple] = []
        orig_coarse, orig_fine = gateway.send_coarse_task, gateway.send_fine_task
        gateway.send_coarse_task = lambda t, p: (wire.append(("coarse", tuple(t), p)), orig_coarse(t, p))[1]
        gateway.send_fine_task = lambda pairs: (wire.append(("fine", tuple(map(tuple, pairs)))), orig_fine(pairs))[1]
        th = threading.Thread(target=operator.run, daemon=True)
        th.start()
        agent.run()
        th.join(timeout=10.0)
        gateway.close()
        ep_robot.close()
        reports.append(wire)
    assert reports[0] == reports[1]


# --- websocket bridge ------------------------------------------------------------


def test_websocket_bridge_round_trip():
    from websockets.sync.client import connect

    ta, tb = queue_pair()
    robot_ep = Endpoint(ta)
    gateway = HumanGateway(Endpoint(tb), ui_port=0)  # port 0: pick a free one
    try:
        port = gateway._ws_server.socket.getsockname()[1]
        with connect(f"ws://127.0.0.1:{port}") as ws:
            # robot-side traffic becomes JSON lines
            ta.send(encode(Datagram(MsgType.MAP_POINTS, 1, encode_map_points([(4, 1.0, 2.0, 3.0)]))))
            got_points = None
            deadline = time.monotonic() + 3.0
            while time.monotonic() < deadline and got_points is None:
                for line in ws.recv(timeout=2.0).splitlines():
                    msg = json.loads(line)
                    if msg["type"] == "points" and msg["points"]:
                        got_points = msg
                        break
            assert got_points is not None
            assert got_points["points"][0] == {"id": 4, "x": 1.0, "y": 2.0, "z": 3.0}
            # operator command forwarded to the robot side as a task datagram
            ws.send(json.dumps({"type": "coarse_task", "target": [0.5, 0.25, 1.0], "preset": 1}) + "\n")
            got = robot_ep.receive(timeout=3.0)
            assert got is not None and got.msg_type == MsgType.TASK_COARSE
            target, preset = decode_task_coarse(got.payload)
            assert preset == 1
            np.testing.assert_allclose(target, [0.5, 0.25, 1.0], atol=1e-6)
    finally:
        gateway.close()
        robot_ep.close()


def test_session_report_byte_accounting_consistency():
    cfg = make_agent_cfg(seed=10)
    ta, tb = queue_pair()
    ep_robot, ep_human = Endpoint(ta), Endpoint(tb)
    agent = RobotAgent(cfg, ep_robot)
    gateway = HumanGateway(ep_human)
    operator = ScriptedOperator(gateway, OperatorPolicy(cfg.target_name), lambda: agent.world)
    th = threading.Thread(target=operator.run, daemon=True)
    th.start()
    try:
        report = agent.run()
        gateway.wait_done(timeout=10.0)
        th.join(timeout=10.0)
        log = list(ep_robot.delay_log)
    finally:
        gateway.close()
        ep_robot.close()
    assert report.bytes_sent_total == sum(b for _, b in report.sent_by_type.values())
    assert report.datagrams_sent_total == sum(c for c, _ in report.sent_by_type.values())
    assert report.delay_stats.count > 0
    # conservation: bytes on the wire = logged transmissions + response echoes
    logged = sum(e.size_bytes * e.attempts for e in log)
    responses = report.sent_by_type.get("RESPONSE", (0, 0))[1]
    assert report.bytes_sent_total == logged + responses


def test_full_session_driven_through_websocket_ui():
    # emulates the browser console byte-for-byte: the session is steered
    # exclusively by JSON lines over the websocket bridge
    from websockets.sync.client import connect

    from teleop.sessions import preset_to_rotation

    cfg = make_agent_cfg(seed=12)
    ta, tb = queue_pair()
    ep_robot, ep_human = Endpoint(ta), Endpoint(tb)
    agent = RobotAgent(cfg, ep_robot)
    gateway = HumanGateway(ep_human, ui_port=0)
    port = gateway._ws_server.socket.getsockname()[1]
    ui_error: list[Exception] = []

    def ui_console():
        points: dict[int, tuple] = {}
        sent_coarse = sent_fine = False
        try:
            with connect(f"ws://127.0.0.1:{port}") as ws:
                while True:
                    for line in ws.recv(timeout=30.0).splitlines():
                        if not line.strip():
                            continue
                        msg = json.loads(line)
                        if msg["type"] == "points":
                            for p in msg["points"]:
                                points[p["id"]] = (p["x"], p["y"], p["z"])
                        elif msg["type"] == "status":
                            if msg["phase"] in ("DONE", "FAILED"):
                                return
                            if msg["phase"] == "AWAIT_COARSE_TASK" and not sent_coarse:
                                world = agent.world
                                target_vo = world.base_point_to_vo(
                                    world.scene.targets[cfg.target_name]
                                )
                                pid = min(
                                    points,
                                    key=lambda i: float(
                                        np.linalg.norm(np.array(points[i]) - target_vo)
                                    ),
                                )
                                ws.send(
                                    json.dumps(
                                        {
                                            "type": "coarse_task",
                                            "target": list(points[pid]),
                                            "preset": 1,
                                        }
                                    )
                                    + "\n"
                                )
                                sent_coarse = True
                        elif msg["type"] == "image" and not sent_fine:
                            world = agent.world
                            planned = world.plan_goal_view_pairs(
                                cfg.target_name,
                                preset_to_rotation(1),
                                cfg.tool_offset,
                                max_pairs=4,
                            )
                            ann = {a["id"]: (a["u"], a["v"]) for a in msg["annotations"]}
                            pairs = [
                                {
                                    "feature_id": fid,
                                    "u": ann[fid][0],
                                    "v": ann[fid][1],
                                    "u_star": gu,
                                    "v_star": gv,
                                }
                                for fid, _, (gu, gv) in planned
                                if fid in ann
                            ]
                            ws.send(json.dumps({"type": "fine_task", "pairs": pairs}) + "\n")
                            sent_fine = True
        except Exception as exc:  # surfaced below
            ui_error.append(exc)

    th = threading.Thread(target=ui_console, daemon=True)
    th.start()
    try:
        report = agent.run()
        th.join(timeout=20.0)
        assert not ui_error, f"ui console failed: {ui_error}"
        assert report.success is True
        assert report.final_error_mm <= 10.0
    finally:
        gateway.close()
        ep_robot.close()
