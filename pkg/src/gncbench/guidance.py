"""Teach-and-repeat guidance over the estimated-state closed loop.

A ClosedLoopSession advances the plant one control tick at a time while
running the on-board chain: model-implied sensors, filter update, and
dead-reckoned pose. teach() drives a scripted control stream through a
session and records the estimated trajectory; repeat() closes the loop
guidance -> pd_control -> plant -> filter against a recorded reference,
looked up by elapsed time with linear interpolation. Looped repeats blend
the lap-closure gap over the first second of each new lap so the commanded
control stays continuous through the wrap.

Per-tick arithmetic matches the batch pipeline (run_mission + run_filter):
the process disturbance is drawn per step and held across the RK4 stages,
the sensed acceleration includes it, and the filter sees the control of the
interval that produced the measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gncbench.dynamics import (
    MAX_TIMESTEP, ConfigError, DynamicParams, InvalidTimestep, NonFiniteState,
    VehicleState, acceleration, rk4_step, wrap_angle,
)
from gncbench.ekf import EkfState, dead_reckon, predict, update
from gncbench.control import PdGains, pd_control
from gncbench.missionlog import ReferenceTrajectory
from gncbench.simulator import NoiseModel, psd_factor

BLEND_SECONDS = 1.0   # lap-closure gap fades over this window after a wrap


class TrackingDiverged(RuntimeError):
    """Estimated cross-track error exceeded the abort bound."""


@dataclass(frozen=True)
class SessionTick:
    t: float
    u: np.ndarray           # saturated command actually applied
    est_pose: np.ndarray
    est_vel: np.ndarray
    truth_pose: np.ndarray
    truth_vel: np.ndarray
    truth_accel: np.ndarray  # plant acceleration, process disturbance included
    sensor: np.ndarray      # (ax, ay, gyro) as the filter saw them
    mu: np.ndarray          # (6,) filter mean; truth (vel, accel) if no filter
    sigma_diag: np.ndarray  # (6,) posterior variance diagonal; zeros if no filter


class ClosedLoopSession:
    """Plant, sensors, and estimator advanced one control tick at a time.

    With estimate=True the recorded state is the filter output (velocity
    from the filter, pose dead-reckoned from it); the filter runs on
    est_params/est_noise, which default to the plant's own, so model
    mismatch studies just pass a different pair. With estimate=False the
    truth state is reported directly, which is also the only valid mode for
    a zero noise model (a noise-free filter has a singular innovation).
    """

    def __init__(self, params: DynamicParams, noise: NoiseModel | None = None,
                 est_params: DynamicParams | None = None,
                 est_noise: NoiseModel | None = None, dt: float = 0.01,
                 seed: int = 0, initial_state: VehicleState | None = None,
                 estimate: bool = True):
        if not (isinstance(dt, (int, float)) and math.isfinite(dt)
                and 0.0 < dt <= MAX_TIMESTEP):
            raise InvalidTimestep(f"dt must lie in (0, {MAX_TIMESTEP}], got {dt!r}")
        self.params = params
        self.noise = noise or NoiseModel.zero()
        self.est_params = est_params or params
        self.est_noise = est_noise or self.noise
        self.dt = float(dt)
        self.seed = int(seed)
        self.initial_state = initial_state or VehicleState.at_rest()
        self.estimate = bool(estimate)
        self._l_proc = psd_factor(self.noise.r_model[3:, 3:] * self.dt)
        self._l_meas = psd_factor(self.noise.q_meas)
        self.reset()

    def reset(self) -> None:
        self._s = self.initial_state.as_array()
        self._rng = np.random.default_rng(self.seed)
        self._ekf: EkfState | None = None
        self._pose = self._s[:3].copy()          # estimate starts at the known pose
        self._vel = self._s[3:].copy()
        self._k = 0

    @property
    def t(self) -> float:
        return self._k * self.dt

    @property
    def est_pose(self) -> np.ndarray:
        return self._pose.copy()

    @property
    def est_vel(self) -> np.ndarray:
        return self._vel.copy()

    @property
    def truth_state(self) -> np.ndarray:
        return self._s.copy()

    def step(self, u) -> SessionTick:
        """Apply one control tick; returns the post-measurement estimates."""
        u = np.clip(np.asarray(getattr(u, "as_array", lambda: u)(),
                               dtype=float).reshape(3), -1.0, 1.0)
        if not np.all(np.isfinite(u)):
            raise NonFiniteState("non-finite control")
        p = self.params
        # draw order mirrors the batch simulator: disturbance, then sensor
        proc = self._l_proc @ self._rng.standard_normal(3)
        meas = self._l_meas @ self._rng.standard_normal(3)
        acc = acceleration(self._s[3:], u, p.dl, p.dc, p.torque_map,
                           p.m, p.inertia) + proc
        z = np.array([acc[0] + meas[0], acc[1] + meas[1], self._s[5] + meas[2]])

        if self.estimate:
            if self._ekf is None:
                mu0 = np.concatenate([self.initial_state.as_array()[3:], np.zeros(3)])
                self._ekf = update(EkfState(mu=mu0, sigma=np.zeros((6, 6))),
                                   z, self.est_noise)
            else:
                prev_vel = self._ekf.mu[:3]
                bar = predict(self._ekf, u, self.est_params, self.est_noise, self.dt)
                self._ekf = update(bar, z, self.est_noise)
                self._pose = dead_reckon(self._pose, prev_vel, self._ekf.mu[:3],
                                         self.dt)
            self._vel = self._ekf.mu[:3].copy()
            mu = self._ekf.mu.copy()
            sigma_diag = np.diag(self._ekf.sigma).copy()
        else:
            self._pose = self._s[:3].copy()
            self._vel = self._s[3:].copy()
            mu = np.concatenate([self._s[3:], acc])
            sigma_diag = np.zeros(6)

        tick = SessionTick(
            t=self.t, u=u, est_pose=self._pose.copy(), est_vel=self._vel.copy(),
            truth_pose=self._s[:3].copy(), truth_vel=self._s[3:].copy(),
            truth_accel=acc.copy(), sensor=z, mu=mu, sigma_diag=sigma_diag,
        )
        s_next = rk4_step(self._s, u, p.dl, p.dc, p.torque_map, p.m, p.inertia,
                          self.dt, accel_bias=proc)
        if not np.all(np.isfinite(s_next)):
            raise NonFiniteState(f"simulation diverged at t = {self.t:.3f}")
        self._s = s_next
        self._k += 1
        return tick


def _control_schedule(controls, dt: float):
    """Normalize a control stream to (t, u) with timestamps k*dt."""
    if isinstance(controls, np.ndarray):
        u = np.asarray(controls, dtype=float)
        if u.ndim != 2 or u.shape[1] != 3 or len(u) < 2:
            raise ConfigError("controls must be an (N, 3) schedule with N >= 2")
        return np.arange(len(u)) * dt, u
    t_list, u_list = [], []
    for entry in controls:
        t_k, u_k = entry
        t_list.append(float(t_k))
        u_list.append(np.asarray(getattr(u_k, "as_array", lambda: u_k)(),
                                 dtype=float).reshape(3))
    if len(u_list) < 2:
        raise ConfigError("control stream must hold at least 2 samples")
    t = np.asarray(t_list)
    if np.abs(t - np.arange(len(t)) * dt).max() > 1e-9:
        raise ConfigError(f"control timestamps must advance by dt = {dt}")
    return t, np.asarray(u_list)


def teach(session: ClosedLoopSession, controls, path=None) -> ReferenceTrajectory:
    """Drive a scripted control stream and record the estimated trajectory.

    controls is an (N, 3) array at the session tick rate or a sequence of
    (t, ControlAction) pairs on the same grid; the recorded timestamps equal
    the control timestamps. The session is reset first, so a teach is always
    a fresh mission from the session's initial state.
    """
    t, u = _control_schedule(controls, session.dt)
    session.reset()
    pose = np.empty((len(u), 3))
    vel = np.empty((len(u), 3))
    for k in range(len(u)):
        tick = session.step(u[k])
        pose[k] = tick.est_pose
        vel[k] = tick.est_vel
    trajectory = ReferenceTrajectory(t=t, pose=pose, vel=vel)
    if path is not None:
        trajectory.save(path)
    return trajectory


def looped_sample(trajectory: ReferenceTrajectory, tau: float, loop: bool):
    """Reference at elapsed time tau, blending the closure gap after a wrap."""
    t0 = float(trajectory.t[0])
    period = trajectory.duration
    if not loop or tau < period:
        return trajectory.sample(t0 + tau)
    lap_tau = tau % period
    pose, vel = trajectory.sample(t0 + lap_tau)
    if lap_tau < BLEND_SECONDS:
        w = 1.0 - lap_tau / BLEND_SECONDS
        p_end, v_end = trajectory.sample(t0 + period)
        p_start, v_start = trajectory.sample(t0)
        gap = p_end - p_start
        gap[2] = wrap_angle(gap[2])
        pose = pose + w * gap
        pose[2] = wrap_angle(pose[2])
        vel = vel + w * (v_end - v_start)
    return pose, vel


@dataclass
class RepeatOutcome:
    t: np.ndarray
    u: np.ndarray             # (N, 3) applied commands
    ref_pose: np.ndarray      # (N, 3) sampled (blended) reference
    ref_vel: np.ndarray
    est_pose: np.ndarray
    est_vel: np.ndarray
    truth_pose: np.ndarray
    truth_vel: np.ndarray
    cross_est: np.ndarray     # (N,) reference-frame lateral error of the estimate
    cross_truth: np.ndarray   # (N,) same for the truth pose
    heading_err: np.ndarray   # (N,) truth heading vs reference
    vel_rmse_est: np.ndarray  # (3,) RMS of ref_vel - est_vel
    vel_rmse_truth: np.ndarray
    cross_rms_est: float
    cross_rms_truth: float
    drift: float              # final estimated-vs-truth position gap
    laps: int


def repeat(session: ClosedLoopSession, trajectory: ReferenceTrajectory,
           gains: PdGains, loop: bool = False, laps: int = 1,
           abort_cross: float = 0.5) -> RepeatOutcome:
    """Track a recorded trajectory with the estimated-state PD loop.

    The reference is looked up by elapsed time; loop=True repeats it for
    `laps` periods with closure blending. Raises TrackingDiverged as soon
    as the estimated cross-track error exceeds abort_cross (the estimate is
    what a vehicle can actually monitor; truth-based drift is reported, not
    bounded).
    """
    if trajectory.duration <= 0.0:
        raise ConfigError("reference trajectory spans no time")
    laps = int(laps) if loop else 1
    if laps < 1:
        raise ConfigError(f"laps must be >= 1, got {laps}")
    session.reset()
    dt = session.dt
    n = int(round(laps * trajectory.duration / dt)) + 1

    out = {name: np.empty((n, 3)) for name in
           ("u", "ref_pose", "ref_vel", "est_pose", "est_vel",
            "truth_pose", "truth_vel")}
    cross_est = np.empty(n)
    cross_truth = np.empty(n)
    heading_err = np.empty(n)

    for k in range(n):
        tau = k * dt
        ref_pose, ref_vel = looped_sample(trajectory, tau, loop)
        u = pd_control(gains, ref_pose, session.est_pose,
                       est_rate_psi=session.est_vel[2], ref_rate_psi=ref_vel[2])
        tick = session.step(u)
        cr, sr = math.cos(ref_pose[2]), math.sin(ref_pose[2])
        cross_est[k] = (-sr * (ref_pose[0] - tick.est_pose[0])
                        + cr * (ref_pose[1] - tick.est_pose[1]))
        cross_truth[k] = (-sr * (ref_pose[0] - tick.truth_pose[0])
                          + cr * (ref_pose[1] - tick.truth_pose[1]))
        heading_err[k] = wrap_angle(ref_pose[2] - tick.truth_pose[2])
        out["u"][k] = tick.u
        out["ref_pose"][k] = ref_pose
        out["ref_vel"][k] = ref_vel
        out["est_pose"][k] = tick.est_pose
        out["est_vel"][k] = tick.est_vel
        out["truth_pose"][k] = tick.truth_pose
        out["truth_vel"][k] = tick.truth_vel
        if abs(cross_est[k]) > abort_cross:
            raise TrackingDiverged(
                f"estimated cross-track {cross_est[k]:.3f} m exceeds "
                f"{abort_cross} m at t = {tau:.2f} s")

    return RepeatOutcome(
        t=np.arange(n) * dt, cross_est=cross_est, cross_truth=cross_truth,
        heading_err=heading_err,
        vel_rmse_est=np.sqrt(np.mean((out["ref_vel"] - out["est_vel"]) ** 2, axis=0)),
        vel_rmse_truth=np.sqrt(np.mean((out["ref_vel"] - out["truth_vel"]) ** 2,
                                       axis=0)),
        cross_rms_est=float(np.sqrt(np.mean(cross_est ** 2))),
        cross_rms_truth=float(np.sqrt(np.mean(cross_truth ** 2))),
        drift=float(np.hypot(*(out["est_pose"][-1, :2] - out["truth_pose"][-1, :2]))),
        laps=laps, **out)
