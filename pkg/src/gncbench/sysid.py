"""Identification of drag and torque-map parameters from mission logs.

The estimator is a shooting method: a candidate parameter vector is scored by
forward-simulating the velocity dynamics from rest under the logged controls
and comparing the model-implied sensor stream against the recorded one. The
robust cost is a Huber sum over per-channel-normalized residuals, minimized
by Gauss-Newton with iteratively reweighted residuals, central-difference
Jacobians, and Levenberg damping. Mass and yaw inertia are taken as known;
the free vector is

    p = (dl_x, dl_y, dl_psi, dc_x, dc_y, dc_psi, T row-major)      (15,)

Parameters the log cannot inform (an unexcited body DOF or an unused input
channel) are detected up front, frozen at their initial values, and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gncbench.dynamics import DynamicParams
from gncbench.missionlog import MissionLog
from gncbench.simulator import NoiseModel

PARAM_NAMES = (
    "dl_x", "dl_y", "dl_psi", "dc_x", "dc_y", "dc_psi",
    "T00", "T01", "T02", "T10", "T11", "T12", "T20", "T21", "T22",
)

_DOF_PARAMS = {0: ("dl_x", "dc_x"), 1: ("dl_y", "dc_y"), 2: ("dl_psi", "dc_psi")}
_INPUT_PARAMS = {0: ("T00", "T10", "T20"), 1: ("T01", "T11", "T21"), 2: ("T02", "T12", "T22")}

MIN_SAMPLES = 100


class InsufficientSamples(ValueError):
    """Log too short to say anything (fewer than MIN_SAMPLES records)."""


class NonFiniteSimulation(RuntimeError):
    """Candidate model diverged while replaying the log."""


class DivergedSimulation(RuntimeError):
    """The fit cannot proceed (divergent start or no acceptable step)."""


class SingularNormalEquations(RuntimeError):
    """Damped normal equations singular; reports the near-null columns."""


def huber(r, delta: float = 1.0):
    """Elementwise Huber loss: r^2/2 inside delta, linear growth outside."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def pack_params(params: DynamicParams) -> np.ndarray:
    return np.concatenate([params.dl, params.dc, params.torque_map.reshape(9)])


def unpack_params(vec, m: float, inertia: float) -> DynamicParams:
    vec = np.asarray(vec, dtype=float).reshape(15)
    return DynamicParams(m=m, inertia=inertia, dl=vec[:3], dc=vec[3:6],
                         torque_map=vec[6:].reshape(3, 3))


@dataclass(frozen=True)
class FitOptions:
    huber_delta: float | None = 1.0   # None selects plain least squares
    max_iterations: int = 200
    cost_tol: float = 1e-8            # relative cost decrease per accepted step
    step_tol: float = 1e-10           # relative step norm
    damping0: float = 1e-6
    damping_max: float = 1e12
    fd_rel: float = 1e-6
    fd_abs: float = 1e-8
    excitation_floor: float = 0.02    # DOF velocity RMS fraction of the largest
    input_floor: float = 1e-3         # input-channel RMS, absolute (u is unit-box)
    nullcol_floor: float = 1e-9


@dataclass
class FitReport:
    params: DynamicParams
    packed: np.ndarray
    cost: float
    iterations: int
    converged: bool
    unidentifiable: tuple[str, ...]
    residual_rms: np.ndarray
    channel_scales: np.ndarray
    cost_history: list = field(default_factory=list)


def _simulate_sensor_batch(pmat: np.ndarray, u: np.ndarray, dt: float,
                           m: float, inertia: float) -> np.ndarray:
    """Model-implied (ax, ay, gyro) for B candidate vectors over one log.

    pmat is (B, 15); u is (N, 3). Velocity-only RK4 from rest, control held
    over each step, identical stage arithmetic to the plant integrator so a
    true-parameter replay of a noiseless log reproduces its sensor stream.
    Returns (N, B, 3); rows go non-finite instead of raising.
    """
    pmat = np.atleast_2d(np.asarray(pmat, dtype=float))
    b = pmat.shape[0]
    n = len(u)
    dl = pmat[:, :3]
    dc = pmat[:, 3:6]
    tmap = pmat[:, 6:].reshape(b, 3, 3)
    tau_all = np.einsum("bij,nj->nbi", tmap, u)

    def acc(vel, tau):
        drag = (dl + dc * np.abs(vel)) * vel
        axy = (drag[:, :2] + tau[:, :2]) / m
        out = np.empty_like(vel)
        out[:, 0] = axy[:, 0] + vel[:, 1] * vel[:, 2]
        out[:, 1] = axy[:, 1] - vel[:, 0] * vel[:, 2]
        out[:, 2] = (drag[:, 2] + tau[:, 2]) / inertia
        return out

    vel = np.zeros((b, 3))
    out = np.empty((n, b, 3))
    sixth = dt / 6.0
    half = 0.5 * dt
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            tau = tau_all[k]
            k1 = acc(vel, tau)
            out[k, :, 0] = k1[:, 0]
            out[k, :, 1] = k1[:, 1]
            out[k, :, 2] = vel[:, 2]
            k2 = acc(vel + half * k1, tau)
            k3 = acc(vel + half * k2, tau)
            k4 = acc(vel + dt * k3, tau)
            vel = vel + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~np.isfinite(vel).all(axis=1)
            if bad.any():
                vel[bad] = np.nan
    return out


def predict_measurements(params: DynamicParams, log: MissionLog) -> np.ndarray:
    """Model-implied sensor stream (N, 3) for one parameter set.

    Raises NonFiniteSimulation if the candidate model diverges on the log.
    """
    out = _simulate_sensor_batch(pack_params(params)[None, :], log.u, log.dt,
                                 params.m, params.inertia)[:, 0, :]
    if not np.all(np.isfinite(out)):
        raise NonFiniteSimulation("candidate parameters diverge on this log")
    return out


def _excitation_screen(log: MissionLog, init: np.ndarray, m: float, inertia: float,
                       opts: FitOptions):
    """Frozen-parameter mask from what the log actually excited."""
    if log.has_truth:
        vel = log.truth_vel
    else:
        preds = _simulate_sensor_batch(init[None, :], log.u, log.dt, m, inertia)
        # gyro column is the simulated yaw rate; reconstruct vx, vy by
        # integrating the simulated accelerations (adequate for a screen)
        vel = np.column_stack([
            np.cumsum(preds[:, 0, 0]) * log.dt,
            np.cumsum(preds[:, 0, 1]) * log.dt,
            preds[:, 0, 2],
        ])
    vel_rms = np.sqrt(np.mean(vel**2, axis=0))
    u_rms = np.sqrt(np.mean(log.u**2, axis=0))
    frozen = set()
    ref = float(vel_rms.max())
    for dof in range(3):
        if ref == 0.0 or vel_rms[dof] < opts.excitation_floor * ref:
            frozen.update(_DOF_PARAMS[dof])
    for ch in range(3):
        if u_rms[ch] < opts.input_floor:
            frozen.update(_INPUT_PARAMS[ch])
    return frozen


@dataclass
class SolveResult:
    p: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_history: list
    null_columns: tuple


def solve_robust_least_squares(residual_batch, p0: np.ndarray, free: np.ndarray,
                               opts: FitOptions, param_names=None) -> SolveResult:
    """Damped Gauss-Newton with Huber reweighting over a batch residual map.

    residual_batch maps a (B, K) stack of parameter rows to (B, n) residuals
    (already normalized); non-finite rows mean the candidate diverged. The
    Jacobian is central-difference with per-parameter steps
    max(fd_rel*|p_i|, fd_abs), evaluated in one batched call. Damping starts
    at opts.damping0, divides by 10 on acceptance, multiplies by 10 on
    rejection. Near-null Jacobian columns are frozen and reported.
    """
    names = param_names or [f"p{i}" for i in range(len(p0))]
    p = np.asarray(p0, dtype=float).copy()
    free = np.asarray(free, dtype=bool).copy()
    delta = opts.huber_delta

    def total_cost(r):
        if not np.all(np.isfinite(r)):
            return math.inf
        if delta is None:
            return float(0.5 * np.sum(r * r))
        return float(np.sum(huber(r, delta)))

    r = residual_batch(p[None, :])[0]
    cost = total_cost(r)
    if not math.isfinite(cost):
        raise DivergedSimulation("initial parameter vector diverges on this log")

    lam = opts.damping0
    history = [cost]
    null_cols: set = set()
    iterations = 0
    converged = False

    for _ in range(opts.max_iterations):
        idx = np.flatnonzero(free)
        if idx.size == 0:
            converged = True
            break
        h = np.maximum(opts.fd_rel * np.abs(p[idx]), opts.fd_abs)
        stack = np.repeat(p[None, :], 2 * idx.size, axis=0)
        rows = np.arange(idx.size)
        stack[2 * rows, idx] += h
        stack[2 * rows + 1, idx] -= h
        fd = residual_batch(stack)
        if not np.all(np.isfinite(fd)):
            raise DivergedSimulation("finite-difference probe diverged")
        jac = (fd[0::2] - fd[1::2]).T / (2.0 * h)

        colnorm = np.linalg.norm(jac, axis=0)
        floor = opts.nullcol_floor * max(float(colnorm.max()), np.finfo(float).tiny)
        dead = colnorm < floor
        if dead.any():
            for j in idx[dead]:
                null_cols.add(names[j])
            free[idx[dead]] = False
            keep = ~dead
            idx, jac, h = idx[keep], jac[:, keep], h[keep]
            if idx.size == 0:
                converged = True
                break

        if delta is None:
            w = np.ones_like(r)
        else:
            a = np.abs(r)
            w = np.where(a <= delta, 1.0, delta / np.maximum(a, np.finfo(float).tiny))
        grad = jac.T @ (w * r)
        normal = (jac * w[:, None]).T @ jac

        accepted = False
        while lam <= opts.damping_max:
            try:
                step = np.linalg.solve(normal + lam * np.eye(idx.size), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(step)):
                lam *= 10.0
                continue
            trial = p.copy()
            trial[idx] += step
            r_trial = residual_batch(trial[None, :])[0]
            c_trial = total_cost(r_trial)
            if c_trial < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            if lam > opts.damping_max and not math.isfinite(cost):
                raise SingularNormalEquations(
                    f"no finite step found; near-null columns: {sorted(null_cols)}"
                )
            # descent exhausted at the numerical floor; call it converged
            converged = True
            break

        prev = cost
        p, r, cost = trial, r_trial, c_trial
        lam = max(lam / 10.0, 1e-15)
        iterations += 1
        history.append(cost)
        if prev - cost <= opts.cost_tol * max(prev, np.finfo(float).tiny):
            converged = True
            break
        if np.linalg.norm(step) <= opts.step_tol * (1.0 + np.linalg.norm(p)):
            converged = True
            break

    return SolveResult(p=p, cost=cost, iterations=iterations, converged=converged,
                       cost_history=history, null_columns=tuple(sorted(null_cols)))


def fit_dynamic(log: MissionLog, known, init=None, opts: FitOptions | None = None) -> FitReport:
    """Fit drag and torque-map parameters to a mission log.

    known is (m, inertia). init is a DynamicParams, a packed 15-vector, or
    None for the default start (dl = dc = -1, torque map = identity).
    Residuals are normalized per channel by a robust scale (MAD of the
    initial residuals), so the Huber threshold is in comparable units across
    accelerometers and gyro.
    """
    opts = opts or FitOptions()
    if len(log) < MIN_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_SAMPLES} records, got {len(log)}")
    m, inertia = float(known[0]), float(known[1])
    if init is None:
        p0 = np.concatenate([-np.ones(6), np.eye(3).reshape(9)])
    elif isinstance(init, DynamicParams):
        p0 = pack_params(init)
    else:
        p0 = np.asarray(init, dtype=float).reshape(15).copy()

    frozen_names = _excitation_screen(log, p0, m, inertia, opts)
    free = np.array([name not in frozen_names for name in PARAM_NAMES])

    z = log.sensor
    dt = log.dt
    base = _simulate_sensor_batch(p0[None, :], log.u, dt, m, inertia)[:, 0, :]
    if not np.all(np.isfinite(base)):
        raise DivergedSimulation("initial parameter vector diverges on this log")
    r0 = z - base
    mad = np.median(np.abs(r0 - np.median(r0, axis=0)), axis=0)
    scales = np.maximum(mad / 0.6745, 1e-12)

    def residual_batch(pstack):
        preds = _simulate_sensor_batch(pstack, log.u, dt, m, inertia)
        res = (z[:, None, :] - preds) / scales
        return res.transpose(1, 0, 2).reshape(pstack.shape[0], -1)

    result = solve_robust_least_squares(residual_batch, p0, free, opts,
                                        param_names=PARAM_NAMES)
    unidentifiable = tuple(sorted(frozen_names | set(result.null_columns)))
    final = _simulate_sensor_batch(result.p[None, :], log.u, dt, m, inertia)[:, 0, :]
    residual_rms = np.sqrt(np.mean((z - final) ** 2, axis=0))
    return FitReport(
        params=unpack_params(result.p, m, inertia),
        packed=result.p,
        cost=result.cost,
        iterations=result.iterations,
        converged=result.converged,
        unidentifiable=unidentifiable,
        residual_rms=residual_rms,
        channel_scales=scales,
        cost_history=result.cost_history,
    )


def _one_step_predictions(vel: np.ndarray, u: np.ndarray, dt: float,
                          params: DynamicParams):
    """Plant-consistent one-step prediction from each state in a series.

    Given velocities at k = 0..N-1 and the logged controls, returns the
    model's predicted velocity at k+1 (RK4, control held) and predicted
    acceleration at k+1 (instantaneous model acceleration at the arrived
    velocity under the next interval's control). Vectorized over k.
    """
    dl, dc, tmap = params.dl, params.dc, params.torque_map
    m, inertia = params.m, params.inertia

    def acc(v, tau):
        drag = (dl + dc * np.abs(v)) * v
        out = np.empty_like(v)
        out[:, 0] = (drag[:, 0] + tau[:, 0]) / m + v[:, 1] * v[:, 2]
        out[:, 1] = (drag[:, 1] + tau[:, 1]) / m - v[:, 0] * v[:, 2]
        out[:, 2] = (drag[:, 2] + tau[:, 2]) / inertia
        return out

    v0 = vel[:-1]
    tau0 = u[:-1] @ tmap.T
    k1 = acc(v0, tau0)
    k2 = acc(v0 + 0.5 * dt * k1, tau0)
    k3 = acc(v0 + 0.5 * dt * k2, tau0)
    k4 = acc(v0 + dt * k3, tau0)
    v_pred = v0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    a_pred = acc(v_pred, u[1:] @ tmap.T)
    return v_pred, a_pred


def _surrogate_state(log: MissionLog):
    """Zero-phase smoothed sensor-derived (vel, accel) series for real logs."""
    from scipy.signal import butter, filtfilt

    fs = 1.0 / log.dt
    b, a = butter(4, min(5.0 / (0.5 * fs), 0.99))
    smooth = filtfilt(b, a, log.sensor, axis=0)
    acc = np.column_stack([
        smooth[:, 0],
        smooth[:, 1],
        np.gradient(smooth[:, 2], log.dt),
    ])
    vel = np.column_stack([
        np.concatenate([[0.0], np.cumsum(0.5 * (smooth[1:, 0] + smooth[:-1, 0]))]) * log.dt,
        np.concatenate([[0.0], np.cumsum(0.5 * (smooth[1:, 1] + smooth[:-1, 1]))]) * log.dt,
        smooth[:, 2],
    ])
    return vel, acc


def estimate_covariances(log: MissionLog, params: DynamicParams) -> NoiseModel:
    """Sensor covariance Q and model-error covariance R from one log.

    Q is the sample covariance of (recorded sensor - noise-free implied
    measurement); with truth available the implied measurement is the logged
    true (ax, ay, vpsi). R is the sample covariance of the one-step
    prediction error of the stacked (velocity, acceleration) state under the
    plant-consistent propagation. Without truth, a zero-phase smoothed
    sensor-derived state stands in for the reference (a surrogate; the
    caller should surface that). Sample covariances use the 1/n convention.

    The returned r_model is a rate covariance: the per-step model-error
    covariance is r_model * dt, matching both the simulator's injection and
    the filter's prediction inflation. With acceleration-only process noise
    the velocity block comes back near zero (integrated noise is O(dt^2)).
    """
    if len(log) < MIN_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_SAMPLES} records, got {len(log)}")
    if log.has_truth:
        implied = np.column_stack([
            log.truth_accel[:, 0], log.truth_accel[:, 1], log.truth_vel[:, 2],
        ])
        vel_ref, acc_ref = log.truth_vel, log.truth_accel
    else:
        implied = predict_measurements(params, log)
        vel_ref, acc_ref = _surrogate_state(log)

    dq = log.sensor - implied
    dq = dq - dq.mean(axis=0)
    q = (dq.T @ dq) / len(dq)

    v_pred, a_pred = _one_step_predictions(vel_ref, log.u, log.dt, params)
    err = np.hstack([vel_ref[1:] - v_pred, acc_ref[1:] - a_pred])
    err = err - err.mean(axis=0)
    r = (err.T @ err) / (len(err) * log.dt)
    return NoiseModel(q_meas=0.5 * (q + q.T), r_model=0.5 * (r + r.T))
