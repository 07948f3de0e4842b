"""Command-line front end.

Subcommands cover the whole workflow: simulate an excitation mission,
identify parameters and noise covariances from a log, tune tracking gains,
run the live teach/repeat loop (serving the wire protocol, or headless with
a scripted control source), replay a log against a parameter set, and
export tidy CSV for external plotting. Every pipeline is deterministic
given its seeds; no output file ever contains wall-clock time.

Exit codes: 0 success, 1 domain error (bad config, unreadable log,
infeasible trajectory, port in use, missing trajectory), 2 usage error,
3 tracking abort during a headless repeat.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from gncbench.config import WorkbenchConfig
from gncbench.control import (
    InfeasibleTrajectory, PdGains, check_feasibility, max_speeds, tune_gains,
)
from gncbench.dynamics import ConfigError, DynamicParams, InvalidTimestep, \
    NonFiniteState
from gncbench.guidance import TrackingDiverged
from gncbench.missionlog import (
    EstimateTrace, LogFormatError, MissionLog, ReferenceTrajectory,
)
from gncbench.runtime import Runtime, parse_script
from gncbench.server import WireServer
from gncbench.simulator import EmptyChannelMask, NoiseModel, excitation_signal, \
    run_mission
from gncbench.sysid import (
    FitOptions, InsufficientSamples, estimate_covariances, fit_dynamic,
    predict_measurements,
)

_USAGE_ERRORS = (
    ConfigError, InvalidTimestep, LogFormatError, InsufficientSamples,
    InfeasibleTrajectory, EmptyChannelMask, NonFiniteState, FileNotFoundError,
    IsADirectoryError, PermissionError,
)


def _channels(text: str):
    names = [c.strip() for c in text.split(",") if c.strip()]
    if not names:
        raise argparse.ArgumentTypeError("need at least one channel (x, y, psi)")
    return names


def _outfile(path):
    # output targets may name directories that do not exist yet
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _vec(values) -> str:
    return "(" + ", ".join(_fmt(v) for v in values) + ")"


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = WorkbenchConfig.load(args.config)
    seed = cfg.seeds.simulate if args.seed is None else args.seed
    noise = NoiseModel.zero() if args.noiseless else cfg.noise
    _, u = excitation_signal(args.duration, cfg.dt, args.channels, seed)
    log = run_mission(cfg.params, noise, u, cfg.dt, seed)
    log.save(_outfile(args.out))
    print(f"wrote {args.out}: {len(log)} samples over {_fmt(log.t[-1])} s "
          f"(dt {_fmt(cfg.dt)}, seed {seed})")
    print(f"  control rms {_vec(np.sqrt(np.mean(log.u ** 2, axis=0)))} "
          f"on channels {','.join(args.channels)}")
    print(f"  sensor rms {_vec(np.sqrt(np.mean(log.sensor ** 2, axis=0)))}")
    return 0


def cmd_identify(args) -> int:
    log = MissionLog.load(args.log)
    init = DynamicParams.load(args.init) if args.init else None
    opts = FitOptions(huber_delta=None) if args.plain else FitOptions()
    fit = fit_dynamic(log, (args.m, args.inertia), init=init, opts=opts)
    print(f"converged: {fit.converged} after {fit.iterations} iterations, "
          f"cost {_fmt(fit.cost)}")
    print(f"  dl {_vec(fit.params.dl)}")
    print(f"  dc {_vec(fit.params.dc)}")
    print(f"  T diag {_vec(np.diag(fit.params.torque_map))}")
    print(f"  residual rms {_vec(fit.residual_rms)}")
    if fit.unidentifiable:
        print(f"note: not identifiable from this log (unexcited direction): "
              f"{', '.join(fit.unidentifiable)}", file=sys.stderr)
    if args.out_params:
        fit.params.save(_outfile(args.out_params))
        print(f"wrote {args.out_params}")
    if args.out_noise:
        noise = estimate_covariances(log, fit.params)
        noise.save(_outfile(args.out_noise))
        print(f"wrote {args.out_noise}: Q diag {_vec(np.diag(noise.q_meas))}")
    return 0


def cmd_estimate_cov(args) -> int:
    log = MissionLog.load(args.log)
    params = DynamicParams.load(args.params)
    noise = estimate_covariances(log, params)
    noise.save(_outfile(args.out))
    print(f"wrote {args.out}")
    print(f"  Q diag {_vec(np.diag(noise.q_meas))}")
    print(f"  R diag {_vec(np.diag(noise.r_model))}")
    return 0


def cmd_tune(args) -> int:
    params = DynamicParams.load(args.params)
    ref = ReferenceTrajectory.load(args.trajectory)
    margins = check_feasibility(params, ref)
    report = tune_gains(params, ref, dt=args.dt, points=args.grid_points,
                        max_rounds=args.max_rounds)
    report.gains.save(_outfile(args.out))
    v_max, w_max = max_speeds(params)
    print(f"wrote {args.out}: alpha {_fmt(report.gains.alpha)}, "
          f"beta {_fmt(report.gains.beta)}, gamma {_fmt(report.gains.gamma)}")
    print(f"  tracking cost {_fmt(report.cost)} "
          f"({report.evaluations} evaluations), "
          f"step response bounded: {report.step_bounded}")
    print(f"  envelope: surge demand {_fmt(margins['surge_demand'])} of "
          f"{_fmt(v_max)} m/s, yaw {_fmt(margins['yaw_demand'])} of "
          f"{_fmt(w_max)} rad/s")
    return 0


def cmd_run(args) -> int:
    cfg = WorkbenchConfig.load(args.config)
    server = None
    if not args.headless:
        server = WireServer(cfg.port)
        try:
            server.start()
        except OSError as exc:
            print(f"error: cannot serve on port {cfg.port}: {exc}",
                  file=sys.stderr)
            return 1
        print(f"serving wire protocol on port {cfg.port}")
    script = parse_script(args.script, cfg.dt) if args.script else None
    data_dir = Path(cfg.data_dir)
    log_path = args.log or data_dir / "run_log.csv"
    trace_path = args.trace or data_dir / "run_trace.csv"
    try:
        runtime = Runtime(cfg, server=server, mode=args.mode, script=script,
                          save_name=args.save, trajectory=args.trajectory,
                          loop=args.loop, laps=args.laps)
        try:
            runtime.run(max_ticks=args.ticks)
            code = 0
        except KeyboardInterrupt:
            code = 0
        except TrackingDiverged as exc:
            print(f"repeat aborted: {exc}", file=sys.stderr)
            code = 3
        runtime.write_artifacts(log_path=_outfile(log_path),
                                trace_path=_outfile(trace_path))
        print(f"wrote {log_path} and {trace_path}")
        if args.mode == "teach" and args.save:
            print(f"saved trajectory '{args.save}' "
                  f"({runtime.saved_names()} available)")
        return code
    finally:
        if server is not None:
            server.stop()


def cmd_replay(args) -> int:
    log = MissionLog.load(args.log)
    params = DynamicParams.load(args.params)
    residual = log.sensor - predict_measurements(params, log)
    print(f"replayed {len(log)} samples")
    print(f"  residual rms {_vec(np.sqrt(np.mean(residual ** 2, axis=0)))}")
    print(f"  residual max {_vec(np.max(np.abs(residual), axis=0))}")
    return 0


def cmd_plot_export(args) -> int:
    if args.trace:
        trace = EstimateTrace.load(args.trace)
        log = trace.log
        header = ["t", "est_x", "est_y", "est_psi",
                  "mu_vx", "mu_vy", "mu_vpsi", "sig_vx", "sig_vy", "sig_vpsi"]
        blocks = [log.t[:, None], trace.est_pose, trace.mu[:, :3],
                  trace.sigma_diag[:, :3]]
        if log.has_truth:
            header += ["truth_x", "truth_y", "truth_psi"]
            blocks.append(log.truth_pose)
    else:
        log = MissionLog.load(args.log)
        header = ["t", "ux", "uy", "upsi", "ax", "ay", "gyro"]
        blocks = [log.t[:, None], log.u, log.sensor]
        if log.has_truth:
            header += ["truth_x", "truth_y", "truth_psi"]
            blocks.append(log.truth_pose)
    if args.trajectory:
        ref = ReferenceTrajectory.load(args.trajectory)
        samples = np.array([ref.sample(t)[0] for t in log.t])
        header += ["ref_x", "ref_y", "ref_psi"]
        blocks.append(samples)
    table = np.hstack(blocks)
    with open(_outfile(args.out), "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {args.out}: {len(table)} rows, columns {','.join(header)}")
    return 0


# -- argument wiring ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gncbench",
        description="planar-vehicle GNC workbench: simulate, identify, "
                    "estimate, tune, teach, repeat")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="record an excitation mission log")
    p.add_argument("--config", required=True)
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--channels", type=_channels, default=["x", "psi"],
                   help="comma-separated excited channels (x, y, psi)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="fit drag/torque parameters to a log")
    p.add_argument("--log", required=True)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--inertia", type=float, required=True)
    p.add_argument("--init", default=None, help="starting parameter file")
    p.add_argument("--plain", action="store_true",
                   help="plain least squares instead of the robust loss")
    p.add_argument("--out-params", default=None)
    p.add_argument("--out-noise", default=None)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("estimate-cov",
                       help="estimate sensor/model covariances given parameters")
    p.add_argument("--log", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_cov)

    p = sub.add_parser("tune", help="tune PD gains against a trajectory")
    p.add_argument("--params", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--grid-points", type=int, default=9,
                   help="multipliers per coordinate-descent round")
    p.add_argument("--max-rounds", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("run", help="live closed loop: teach or repeat")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("teach", "repeat"), required=True)
    p.add_argument("--script", default=None,
                   help="headless control source: lines of 'duration ux uy upsi'")
    p.add_argument("--save", default=None,
                   help="trajectory name to save when a scripted teach ends")
    p.add_argument("--trajectory", default=None, help="name to repeat")
    p.add_argument("--loop", action="store_true")
    p.add_argument("--laps", type=int, default=1)
    p.add_argument("--ticks", type=int, default=None)
    p.add_argument("--headless", action="store_true",
                   help="no wire server (scripted runs only)")
    p.add_argument("--log", default=None)
    p.add_argument("--trace", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay",
                       help="check a log against a parameter set")
    p.add_argument("--log", required=True)
    p.add_argument("--params", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("plot-export", help="tidy CSV for external plotting")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--log")
    group.add_argument("--trace")
    p.add_argument("--trajectory", default=None,
                   help="overlay reference (trajectory file path)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
