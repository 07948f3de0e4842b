"""Deterministic tick loop serving teach/repeat sessions over the wire.

One Runtime owns a closed-loop session and advances it one tick at a time.
Per tick it drains the network endpoint (if any), applies mode logic to
pick a control, steps the session, records the mission log and estimate
trace, and broadcasts a decimated StateUpdate stream. Every timestamp that
reaches a file or a wire message is tick_index * dt off the session clock,
never wall time, so scripted runs are byte-reproducible. Wall time is used
only to pace the loop when a teleop client is attached; headless runs tick
flat out.

Teleop commands hold between ticks (zero-order hold) and expire through a
dead-man window: a command older than `deadman` seconds of tick time drops
the control to zero on the next tick. Repeat mode mirrors the guidance
loop, including the estimated cross-track abort; with a server attached an
abort broadcasts an Error and falls back to idle instead of raising.
"""

from __future__ import annotations

import math
import re
import time
from pathlib import Path

import numpy as np

from gncbench.config import WorkbenchConfig
from gncbench.control import pd_control
from gncbench.dynamics import ConfigError
from gncbench.guidance import ClosedLoopSession, TrackingDiverged, looped_sample
from gncbench.missionlog import EstimateTrace, MissionLog, ReferenceTrajectory
from gncbench.protocol import (
    Ack, Command, Error, ModeSwitch, StateUpdate, TeachControl,
)

DEADMAN_SECONDS = 0.5
ABORT_CROSS = 0.5
BROADCAST_HZ = 20.0
TRAJECTORY_SUFFIX = ".traj"

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_-]*$")


def parse_script(path, dt: float) -> np.ndarray:
    """Piecewise-constant control schedule from a script file.

    Each non-blank, non-comment line reads `duration ux uy upsi`; segments
    expand to the tick grid in order. Returns an (N, 3) array.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'duration ux uy upsi'")
            try:
                duration, ux, uy, upsi = (float(p) for p in parts)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
            if not (math.isfinite(duration) and duration > 0.0):
                raise ConfigError(f"{path}:{lineno}: duration must be positive")
            n = int(round(duration / dt))
            if n < 1:
                raise ConfigError(f"{path}:{lineno}: segment shorter than one tick")
            rows.append(np.tile([ux, uy, upsi], (n, 1)))
    if not rows:
        raise ConfigError(f"{path}: no control segments")
    u = np.vstack(rows)
    if len(u) < 2:
        raise ConfigError(f"{path}: schedule must span at least 2 ticks")
    return np.clip(u, -1.0, 1.0)


class Runtime:
    """Mode-switched closed loop: idle, teleop/scripted teach, or repeat."""

    def __init__(self, config: WorkbenchConfig, server=None, mode: str = "idle",
                 script: np.ndarray | None = None, save_name: str | None = None,
                 trajectory: str | None = None, loop: bool = False, laps: int = 1,
                 deadman: float = DEADMAN_SECONDS, abort_cross: float = ABORT_CROSS,
                 estimate: bool | None = None):
        if mode not in ("idle", "teach", "repeat"):
            raise ConfigError(f"unknown mode {mode!r}")
        if mode == "teach" and script is None and server is None:
            raise ConfigError("teach mode needs a teleop client or a script")
        self.config = config
        self.server = server
        noisy = bool(np.any(config.noise.q_meas) or np.any(config.noise.r_model))
        # a zero noise model cannot run the filter (singular innovation)
        self.session = ClosedLoopSession(
            config.params, config.noise, dt=config.dt,
            seed=config.seeds.session,
            estimate=noisy if estimate is None else estimate)
        self.data_dir = Path(config.data_dir)
        self.deadman = float(deadman)
        self.abort_cross = float(abort_cross)
        self.decimation = max(1, int(round(1.0 / (BROADCAST_HZ * config.dt))))
        self.save_name = save_name
        self.loop = bool(loop)
        self.laps = int(laps)
        if self.laps < 1:
            raise ConfigError(f"laps must be >= 1, got {laps}")

        self.mode = "idle"
        self.script = script
        self._script_idx = 0
        self.done = False
        self._k = 0
        self._last_u = np.zeros(3)
        self._last_cmd_tick: int | None = None
        self.recording = False
        self._rec: list = []
        self._trajectories: dict[str, ReferenceTrajectory] = {}
        self._repeat: ReferenceTrajectory | None = None
        self._repeat_start = 0
        self._rows: list = []

        if mode == "teach":
            self.mode = "teach"
            if script is not None:
                self.recording = True   # scripted teach records the whole run
        elif mode == "repeat":
            self._enter_repeat(trajectory)

    # -- trajectory store --

    def _trajectory_path(self, name: str) -> Path:
        return self.data_dir / f"{name}{TRAJECTORY_SUFFIX}"

    def load_trajectory(self, name: str) -> ReferenceTrajectory:
        if name not in self._trajectories:
            path = self._trajectory_path(name)
            if not path.exists():
                raise ConfigError(f"no trajectory named {name!r} in {self.data_dir}")
            self._trajectories[name] = ReferenceTrajectory.load(path)
        return self._trajectories[name]

    def saved_names(self) -> list[str]:
        names = set(self._trajectories)
        if self.data_dir.is_dir():
            names.update(p.stem for p in self.data_dir.glob(f"*{TRAJECTORY_SUFFIX}"))
        return sorted(names)

    def _enter_repeat(self, name: str | None) -> None:
        if not name:
            raise ConfigError("repeat mode needs a trajectory name")
        self._repeat = self.load_trajectory(name)
        self.recording = False
        self.mode = "repeat"
        self._repeat_start = self._k

    # -- wire message handling --

    def _reply(self, msg) -> None:
        if self.server is not None:
            # tick-time stamp so clients can bound handling latency
            if isinstance(msg, (Ack, Error)) and msg.t is None:
                msg = type(msg)(code=msg.code, text=msg.text,
                                t=self._k * self.config.dt)
            self.server.broadcast(msg)

    def _handle(self, msg) -> None:
        if isinstance(msg, Command):
            if self.mode != "teach":
                self._reply(Error(code="not-teaching",
                                  text=f"command dropped: mode is {self.mode}"))
                return
            if self.script is not None:
                self._reply(Error(code="scripted",
                                  text="command dropped: scripted teach"))
                return
            u = np.asarray(msg.u, dtype=float)
            clipped = np.clip(u, -1.0, 1.0)
            self._last_u = clipped
            self._last_cmd_tick = self._k
            if np.any(clipped != u):
                self._reply(Ack(code="command", text="clamped to [-1, 1]"))
        elif isinstance(msg, TeachControl):
            self._handle_teach_control(msg)
        elif isinstance(msg, ModeSwitch):
            self._handle_mode_switch(msg)
        else:
            # StateUpdate/Ack/Error are server-to-client only
            self._reply(Error(code="unexpected",
                              text=f"client may not send {type(msg).__name__}"))

    def _handle_teach_control(self, msg: TeachControl) -> None:
        if self.mode != "teach":
            self._reply(Error(code="bad-mode",
                              text=f"teach control in mode {self.mode}"))
            return
        if msg.action == "start":
            self.recording = True
            self._rec = []
            self._reply(Ack(code="recording"))
        elif msg.action == "stop":
            self.recording = False
            self._reply(Ack(code="stopped", text=f"{len(self._rec)} samples"))
        else:
            self._save_recording(msg.name)

    def _save_recording(self, name: str) -> None:
        if not _NAME_RE.match(name):
            self._reply(Error(code="bad-name",
                              text="names are letters, digits, '-', '_'"))
            return
        if len(self._rec) < 2:
            self._reply(Error(code="empty-recording",
                              text="record at least 2 samples before saving"))
            return
        rec = np.asarray(self._rec)
        trajectory = ReferenceTrajectory(t=rec[:, 0], pose=rec[:, 1:4],
                                         vel=rec[:, 4:7])
        self.data_dir.mkdir(parents=True, exist_ok=True)
        trajectory.save(self._trajectory_path(name))
        self._trajectories[name] = trajectory
        self._reply(Ack(code="saved", text=name))

    def _handle_mode_switch(self, msg: ModeSwitch) -> None:
        if msg.mode == "repeat":
            try:
                self._enter_repeat(msg.trajectory)
            except ConfigError as exc:
                self._reply(Error(code="missing-trajectory", text=str(exc)))
                return
        else:
            self.mode = msg.mode
            self.recording = self.recording and msg.mode == "teach"
            if msg.mode != "teach":
                self._last_u = np.zeros(3)
                self._last_cmd_tick = None
        self._reply(Ack(code="mode", text=self.mode))

    # -- per-tick control sources --

    def _teach_control(self) -> np.ndarray:
        if self.script is not None:
            u = self.script[self._script_idx]
            self._script_idx += 1
            return u
        if self._last_cmd_tick is None:
            return np.zeros(3)
        age = (self._k - self._last_cmd_tick) * self.config.dt
        if age > self.deadman:
            return np.zeros(3)   # dead-man: stale teleop decays to zero
        return self._last_u

    def _finish_script(self) -> None:
        self.recording = False
        if self.save_name is not None and len(self._rec) >= 2:
            rec = np.asarray(self._rec)
            trajectory = ReferenceTrajectory(t=rec[:, 0], pose=rec[:, 1:4],
                                             vel=rec[:, 4:7])
            self.data_dir.mkdir(parents=True, exist_ok=True)
            trajectory.save(self._trajectory_path(self.save_name))
            self._trajectories[self.save_name] = trajectory
        self.mode = "idle"
        self.done = True

    def _repeat_control(self) -> tuple[np.ndarray, np.ndarray]:
        tau = (self._k - self._repeat_start) * self.config.dt
        if tau > self.laps * self._repeat.duration:
            self.mode = "idle"
            self._repeat = None
            self._reply(Ack(code="repeat-done"))
            if self.server is None:
                self.done = True
            return np.zeros(3), None
        ref_pose, ref_vel = looped_sample(self._repeat, tau, self.loop)
        u = pd_control(self.config.gains, ref_pose, self.session.est_pose,
                       est_rate_psi=self.session.est_vel[2],
                       ref_rate_psi=ref_vel[2])
        return np.asarray(u.as_array()), ref_pose

    # -- tick loop --

    def tick(self) -> None:
        if self.server is not None:
            for msg, _receipt in self.server.poll():
                self._handle(msg)

        ref_pose = None
        if self.mode == "teach":
            u = self._teach_control()
        elif self.mode == "repeat":
            u, ref_pose = self._repeat_control()
        else:
            u = np.zeros(3)

        rec = self.session.step(u)
        self._rows.append(np.concatenate([
            [rec.t], rec.u, rec.sensor, rec.truth_pose, rec.truth_vel,
            rec.truth_accel, rec.mu, rec.sigma_diag, rec.est_pose,
        ]))
        if self.recording:
            self._rec.append(np.concatenate([[rec.t], rec.est_pose, rec.est_vel]))
        # finish after the append so the last scripted tick is recorded too
        if (self.mode == "teach" and self.script is not None
                and self._script_idx >= len(self.script)):
            self._finish_script()

        if ref_pose is not None:
            cr, sr = math.cos(ref_pose[2]), math.sin(ref_pose[2])
            cross = (-sr * (ref_pose[0] - rec.est_pose[0])
                     + cr * (ref_pose[1] - rec.est_pose[1]))
            if abs(cross) > self.abort_cross:
                message = (f"estimated cross-track {cross:.3f} m exceeds "
                           f"{self.abort_cross} m at t = {rec.t:.2f} s")
                self.mode = "idle"
                self._repeat = None
                if self.server is None:
                    raise TrackingDiverged(message)
                self._reply(Error(code="diverged", text=message))

        if self._k % self.decimation == 0:
            self._reply(StateUpdate(t=rec.t, pose=tuple(rec.est_pose),
                                    mu=tuple(rec.mu),
                                    diag_sigma=tuple(rec.sigma_diag)))
        self._k += 1

    def run(self, max_ticks: int | None = None) -> None:
        """Tick until the script or repeat finishes, or max_ticks elapse.

        Paces to real time only while a teleop client is connected; a slow
        client cannot stall the loop (the endpoint queues are bounded), it
        only sees a sparser StateUpdate stream.
        """
        deadline = None
        while not self.done:
            if max_ticks is not None and self._k >= max_ticks:
                break
            self.tick()
            if self.server is not None and self.server.has_client:
                now = time.monotonic()
                deadline = now if deadline is None else deadline
                deadline += self.config.dt
                if deadline > now:
                    time.sleep(deadline - now)
                else:
                    deadline = now   # fell behind; re-anchor instead of bursting
            else:
                deadline = None

    # -- artifacts --

    def mission_log(self) -> MissionLog:
        rows = np.asarray(self._rows)
        return MissionLog(t=rows[:, 0], u=rows[:, 1:4], sensor=rows[:, 4:7],
                          truth_pose=rows[:, 7:10], truth_vel=rows[:, 10:13],
                          truth_accel=rows[:, 13:16])

    def estimate_trace(self) -> EstimateTrace:
        rows = np.asarray(self._rows)
        return EstimateTrace(log=self.mission_log(), mu=rows[:, 16:22],
                             sigma_diag=rows[:, 22:28], est_pose=rows[:, 28:31])

    def write_artifacts(self, log_path=None, trace_path=None) -> None:
        if len(self._rows) < 2:
            return
        if log_path is not None:
            self.mission_log().save(log_path)
        if trace_path is not None:
            self.estimate_trace().save(trace_path)
