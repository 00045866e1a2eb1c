"""Headless experiment runner and live-serving entry points.

    teleop run        - scripted trials over an impaired in-process UDP link,
                        writing trials.csv / summary.json / delays.csv
    teleop serve-robot / serve-human
                      - the two agents on real UDP sockets for interactive use
    teleop calibrate  - run the calibration pipeline on a dataset file
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .calibration import load_dataset, calibrate
from .controllers import GainConfig
from .errors import ConfigError, StartupError, TeleopError
from .netproto import (
    Endpoint,
    ImpairmentConfig,
    UdpTransport,
    compute_stats,
    impaired_link,
)
from .sessions import (
    HumanGateway,
    OperatorPolicy,
    RobotAgent,
    RobotAgentConfig,
    ScriptedOperator,
    SessionReport,
)
from .simworld import (
    SCENE_BUILDERS,
    SCENE_TARGETS,
    Scene,
    VoConfig,
    scenario_scene,
)

DEFAULT_SCALE = (2.0, 2.4, 2.8)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "press_button"
    trials: int = 1
    seeds: tuple[int, ...] = (0,)
    impairment: ImpairmentConfig = ImpairmentConfig()
    vo_noise: float = 0.0  # meters-equivalent sigma; also used as rad sigma
    pixel_noise: float = 0.0
    gains: GainConfig = GainConfig()
    out_dir: str = "out"
    parallel: int = 1
    exploration_poses: int = 24
    net_timeout: float = 0.5
    net_retries: int = 40
    calib_perturb: tuple[float, float] | None = None  # (degrees, scale fraction)

    def __post_init__(self):
        if self.scenario not in SCENE_BUILDERS:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; choices: {sorted(SCENE_BUILDERS)}"
            )
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if len(self.seeds) != self.trials:
            raise ConfigError(f"{self.trials} trials need {self.trials} seeds, got {len(self.seeds)}")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")


# csv columns; wall-clock-derived ones carry the wall_ prefix and sit last
TRIAL_COLUMNS = [
    "seed",
    "success",
    "final_error_mm",
    "failure",
    "explore_s",
    "coarse_s",
    "fine_s",
    "robot_datagrams",
    "robot_bytes",
    "human_datagrams",
    "human_bytes",
    "wall_seconds",
    "wall_ms_per_kb",
]


def _vo_config(cfg: ExperimentConfig, seed: int) -> VoConfig:
    sigma = cfg.vo_noise
    return VoConfig(
        scale_per_axis=np.array(DEFAULT_SCALE),
        pose_noise_sigma=(sigma, sigma),
        point_noise_sigma=sigma * float(np.mean(DEFAULT_SCALE)),
        rng_seed=seed,
    )


def run_trial(cfg: ExperimentConfig, seed: int) -> tuple[dict, list, SessionReport]:
    """One full scripted session over in-process loopback UDP."""
    scene = scenario_scene(cfg.scenario)
    t_robot = UdpTransport(("127.0.0.1", 0), ("127.0.0.1", 0))
    t_human = UdpTransport(("127.0.0.1", 0), t_robot.local_address)
    t_robot.set_peer(t_human.local_address)

    ep_robot = Endpoint(impaired_link(t_robot, replace(cfg.impairment, rng_seed=2 * seed + 1)))
    ep_human = Endpoint(impaired_link(t_human, replace(cfg.impairment, rng_seed=2 * seed + 2)))

    agent_cfg = RobotAgentConfig(
        scene=scene,
        target_name=SCENE_TARGETS[cfg.scenario],
        vo_cfg=_vo_config(cfg, seed),
        gains=cfg.gains,
        exploration_poses=cfg.exploration_poses,
        pixel_noise_sigma=cfg.pixel_noise,
        rng_seed=seed,
        net_timeout=cfg.net_timeout,
        net_retries=cfg.net_retries,
        calib_perturb=cfg.calib_perturb,
    )
    agent = RobotAgent(agent_cfg, ep_robot)
    gateway = HumanGateway(
        ep_human, net_timeout=cfg.net_timeout, net_retries=cfg.net_retries
    )
    operator = ScriptedOperator(
        gateway,
        OperatorPolicy(target_name=SCENE_TARGETS[cfg.scenario]),
        world_supplier=lambda: agent.world,
    )
    report: SessionReport | None = None
    try:
        op_thread = threading.Thread(target=operator.run, daemon=True)
        op_thread.start()
        report = agent.run()
        gateway.wait_done(timeout=10.0)
        op_thread.join(timeout=10.0)
    finally:
        g_log = list(gateway.endpoint.delay_log)
        r_log = list(ep_robot.delay_log)
        gateway.close()
        ep_robot.close()

    row = {
        "seed": seed,
        "success": report.success,
        "final_error_mm": (
            "" if report.final_error_mm is None else f"{report.final_error_mm:.6f}"
        ),
        "failure": report.failure_reason or "",
        "explore_s": f"{report.phase_durations.get('exploration', 0.0):.6f}",
        "coarse_s": f"{report.phase_durations.get('coarse', 0.0):.6f}",
        "fine_s": f"{report.phase_durations.get('fine', 0.0):.6f}",
        "robot_datagrams": report.datagrams_sent_total,
        "robot_bytes": report.bytes_sent_total,
        "human_datagrams": sum(v[0] for v in gateway.endpoint.sent_by_type.values()),
        "human_bytes": gateway.endpoint.physical_sent_bytes(),
        "wall_seconds": f"{report.wall_seconds:.3f}",
        "wall_ms_per_kb": f"{report.delay_stats.ms_per_kb:.3f}",
    }
    delay_rows = [("robot", e) for e in r_log] + [("human", e) for e in g_log]
    return row, delay_rows, report


def _summary_from_rows(rows: list[dict]) -> dict:
    n = len(rows)
    successes = sum(1 for r in rows if str(r["success"]) == "True")
    errors = [float(r["final_error_mm"]) for r in rows if r["final_error_mm"] != ""]
    return {
        "trials": n,
        "success_rate": successes / n,
        "mean_final_error_mm": (sum(errors) / len(errors)) if errors else None,
        "mean_explore_s": sum(float(r["explore_s"]) for r in rows) / n,
        "mean_coarse_s": sum(float(r["coarse_s"]) for r in rows) / n,
        "mean_fine_s": sum(float(r["fine_s"]) for r in rows) / n,
        "mean_robot_bytes": sum(int(r["robot_bytes"]) for r in rows) / n,
        "mean_human_bytes": sum(int(r["human_bytes"]) for r in rows) / n,
        "mean_wall_seconds": sum(float(r["wall_seconds"]) for r in rows) / n,
    }


def cmd_run(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    results: list[tuple[dict, list, SessionReport]] = [None] * cfg.trials  # type: ignore
    if cfg.parallel > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            futures = {
                pool.submit(run_trial, cfg, seed): i for i, seed in enumerate(cfg.seeds)
            }
            for fut, i in futures.items():
                results[i] = fut.result()
    else:
        for i, seed in enumerate(cfg.seeds):
            results[i] = run_trial(cfg, seed)

    rows = [r[0] for r in results]
    with open(out / "trials.csv", "w", newline="", encoding="ascii") as f:
        writer = csv.DictWriter(f, fieldnames=TRIAL_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    # recompute the summary from the file so it cannot drift from trials.csv
    with open(out / "trials.csv", newline="", encoding="ascii") as f:
        reread = list(csv.DictReader(f))
    all_delays = [e for _, entries, _ in results for e in entries]
    stats = compute_stats([e for _, e in all_delays])
    summary = _summary_from_rows(reread)
    summary["delay"] = {
        "count": stats.count,
        "total_bytes": stats.total_bytes,
        "mean_rtt_ms": stats.mean_rtt * 1000.0,
        "ms_per_kb": stats.ms_per_kb,
    }
    with open(out / "summary.json", "w", encoding="ascii") as f:
        json.dump(summary, f, indent=2)

    with open(out / "delays.csv", "w", encoding="ascii") as f:
        f.write("side,datagram_id,type,size_bytes,t_sent,t_resp,rtt_ms,attempts\n")
        for side, e in all_delays:
            t_resp = "" if e.t_response_received is None else f"{e.t_response_received:.6f}"
            rtt_ms = "" if e.rtt is None else f"{e.rtt * 1000.0:.3f}"
            f.write(
                f"{side},{e.datagram_id},{e.msg_type.name},{e.size_bytes},"
                f"{e.t_sent:.6f},{t_resp},{rtt_ms},{e.attempts}\n"
            )
    return summary


# --- live serving --------------------------------------------------------------


def cmd_serve_robot(args) -> None:
    scene = (
        Scene.from_json(Path(args.scene).read_text())
        if args.scene
        else scenario_scene(args.scenario)
    )
    try:
        transport = UdpTransport((args.bind, args.robot_port), (args.human_host, args.human_port))
    except OSError as exc:
        raise StartupError(f"cannot bind UDP {args.bind}:{args.robot_port}: {exc}") from exc
    endpoint = Endpoint(transport)
    cfg = RobotAgentConfig(
        scene=scene,
        target_name=args.target or SCENE_TARGETS.get(args.scenario, next(iter(scene.targets))),
        vo_cfg=_vo_config(_base_config(args), args.seed),
        gains=GainConfig(),
        pixel_noise_sigma=args.pixel_noise,
        rng_seed=args.seed,
        await_timeout=None,
        net_retries=10_000,
    )
    print(f"robot agent up on udp {args.bind}:{args.robot_port} -> "
          f"{args.human_host}:{args.human_port}", flush=True)
    report = RobotAgent(cfg, endpoint).run()
    print(json.dumps(report.to_dict(), indent=2))
    endpoint.close()


def cmd_serve_human(args) -> None:
    try:
        transport = UdpTransport((args.bind, args.human_port), (args.robot_host, args.robot_port))
    except OSError as exc:
        raise StartupError(f"cannot bind UDP {args.bind}:{args.human_port}: {exc}") from exc
    endpoint = Endpoint(transport)
    gateway = HumanGateway(
        endpoint, ui_port=args.ui_port, record_path=args.record, net_retries=10_000
    )
    print(f"human gateway up on udp {args.bind}:{args.human_port}, "
          f"websocket ws://127.0.0.1:{args.ui_port}", flush=True)
    last_phase = None
    try:
        while not gateway.wait_done(timeout=0.5):
            if gateway.phase != last_phase:
                last_phase = gateway.phase
                print(f"phase: {last_phase}", flush=True)
        print(f"phase: {gateway.phase} ({gateway.phase_detail})", flush=True)
        stats = gateway._stats_message()
        print(json.dumps(stats, indent=2))
    except KeyboardInterrupt:
        pass
    finally:
        gateway.close()


def cmd_calibrate(args) -> dict:
    dataset = load_dataset(args.dataset)
    result = calibrate(dataset, refine_t0=args.refine_t0)
    out = {
        "n_samples": dataset.n,
        "base_from_c0": {
            "rotation": result.base_from_c0.rotation.tolist(),
            "translation": result.base_from_c0.translation.tolist(),
        },
        "cam_from_ee_rotation": result.cam_from_ee_rotation.tolist(),
        "t0": result.t0.tolist(),
        "scale": result.scale.alpha.tolist(),
        "residuals": {
            "translation_rms_m": result.residual_stats.translation_rms_m,
            "rotation_rms_rad": result.residual_stats.rotation_rms_rad,
        },
    }
    print(json.dumps(out, indent=2))
    return out


# --- argument plumbing ----------------------------------------------------------


def _base_config(args) -> ExperimentConfig:
    """Merge config file (if any) with command-line overrides."""
    raw: dict = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())

    def pick(flag, key, default):
        v = getattr(args, flag, None)
        if v is not None:
            return v
        return raw.get(key, default)

    trials = int(pick("trials", "trials", 1))
    seeds = raw.get("seeds")
    base_seed = getattr(args, "seed", None)
    if base_seed is not None or seeds is None:
        base = int(base_seed) if base_seed is not None else 0
        seeds = [base + i for i in range(trials)]
    imp_raw = raw.get("impairment", {})
    impairment = ImpairmentConfig(
        one_way_latency=float(pick("latency_ms", "_", imp_raw.get("latency_ms", 0.0))) / 1000.0,
        jitter=float(pick("jitter_ms", "_", imp_raw.get("jitter_ms", 0.0))) / 1000.0,
        loss_probability=float(pick("loss", "_", imp_raw.get("loss", 0.0))),
        bandwidth_cap=float(pick("bandwidth_bps", "_", imp_raw.get("bandwidth_bps", 0.0))),
    )
    gains = GainConfig(**raw["gains"]) if "gains" in raw else GainConfig()
    return ExperimentConfig(
        scenario=pick("scenario", "scenario", "press_button"),
        trials=trials,
        seeds=tuple(int(s) for s in seeds),
        impairment=impairment,
        vo_noise=float(pick("vo_noise", "vo_noise", 0.0)),
        pixel_noise=float(pick("pixel_noise", "pixel_noise", 0.0)),
        gains=gains,
        out_dir=str(pick("out", "out_dir", "out")),
        parallel=int(pick("parallel", "parallel", 1)),
        exploration_poses=int(raw.get("exploration_poses", 24)),
        net_timeout=float(raw.get("net_timeout", 0.5)),
        net_retries=int(raw.get("net_retries", 40)),
        calib_perturb=(
            tuple(raw["calib_perturb"]) if raw.get("calib_perturb") else None
        ),
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teleop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="scripted trials over an impaired loopback link")
    run.add_argument("--config", help="JSON config file mirroring ExperimentConfig")
    run.add_argument("--scenario", choices=sorted(SCENE_BUILDERS))
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int, help="base seed; trial i uses seed+i")
    run.add_argument("--latency-ms", dest="latency_ms", type=float)
    run.add_argument("--jitter-ms", dest="jitter_ms", type=float)
    run.add_argument("--loss", type=float)
    run.add_argument("--bandwidth-bps", dest="bandwidth_bps", type=float)
    run.add_argument("--vo-noise", dest="vo_noise", type=float,
                     help="VO pose noise sigma (m and rad); point noise scales with it")
    run.add_argument("--pixel-noise", dest="pixel_noise", type=float)
    run.add_argument("--out")
    run.add_argument("--parallel", type=int)

    sr = sub.add_parser("serve-robot", help="robot agent on real UDP sockets")
    sr.add_argument("--scenario", default="press_button", choices=sorted(SCENE_BUILDERS))
    sr.add_argument("--scene", help="scene JSON file (overrides --scenario)")
    sr.add_argument("--target", help="target name for final-error measurement")
    sr.add_argument("--bind", default="127.0.0.1")
    sr.add_argument("--robot-port", dest="robot_port", type=int, default=47001)
    sr.add_argument("--human-host", dest="human_host", default="127.0.0.1")
    sr.add_argument("--human-port", dest="human_port", type=int, default=47002)
    sr.add_argument("--vo-noise", dest="vo_noise", type=float)
    sr.add_argument("--pixel-noise", dest="pixel_noise", type=float, default=0.0)
    sr.add_argument("--seed", type=int, default=0)

    sh = sub.add_parser("serve-human", help="human gateway + websocket UI bridge")
    sh.add_argument("--bind", default="127.0.0.1")
    sh.add_argument("--human-port", dest="human_port", type=int, default=47002)
    sh.add_argument("--robot-host", dest="robot_host", default="127.0.0.1")
    sh.add_argument("--robot-port", dest="robot_port", type=int, default=47001)
    sh.add_argument("--ui-port", dest="ui_port", type=int, default=47100)
    sh.add_argument("--record", help="write gateway->UI messages to this JSONL file")

    cal = sub.add_parser("calibrate", help="calibrate from a dataset text file")
    cal.add_argument("dataset")
    cal.add_argument("--refine-t0", dest="refine_t0", action="store_true")

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = cmd_run(_base_config(args))
            print(json.dumps(summary, indent=2))
        elif args.command == "serve-robot":
            cmd_serve_robot(args)
        elif args.command == "serve-human":
            cmd_serve_human(args)
        elif args.command == "calibrate":
            cmd_calibrate(args)
        return 0
    except TeleopError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
