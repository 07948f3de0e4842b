"""Extended Kalman filtering of body velocity and acceleration.

The filter state is mu = (vx, vy, vpsi, ax, ay, apsi): body velocity plus
its rate, so the accelerometer channels are direct observations. Prediction
integrates velocity with the current acceleration state over one step and
replaces the acceleration block with the model value at the freshly
integrated velocity (evaluating it at the stale velocity instead leaves an
O(dt) lag, A*vdot*dt, that no reasonable noise budget covers). The Jacobian
is exact for that map:

    G = [[I,   dt*I],
         [A, dt*A ]],   A = d(accel)/d(velocity) at the integrated velocity.

Per-step process covariance is r_model * dt. Pose is not part of the state;
it is dead-reckoned from the velocity estimates with a midpoint-heading
rule and carried alongside the trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gncbench.dynamics import DynamicParams, acceleration, wrap_angle
from gncbench.missionlog import EstimateTrace, MissionLog
from gncbench.simulator import NoiseModel

# measurement rows: ax, ay, gyro (= vpsi)
H_MEAS = np.array([
    [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
])

COND_LIMIT = 1e12


class SingularInnovation(RuntimeError):
    """Innovation covariance is numerically singular; gains are meaningless."""


@dataclass
class EkfState:
    mu: np.ndarray       # (6,)
    sigma: np.ndarray    # (6, 6)
    t: float = 0.0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(6)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(6, 6)


def accel_jacobian(params: DynamicParams, vel) -> np.ndarray:
    """Exact d(body acceleration)/d(body velocity) at one velocity."""
    vx, vy, vpsi = np.asarray(vel, dtype=float)
    m, inertia = params.m, params.inertia
    dl, dc = params.dl, params.dc
    return np.array([
        [(dl[0] + 2.0 * dc[0] * abs(vx)) / m, vpsi, vy],
        [-vpsi, (dl[1] + 2.0 * dc[1] * abs(vy)) / m, -vx],
        [0.0, 0.0, (dl[2] + 2.0 * dc[2] * abs(vpsi)) / inertia],
    ])


def propagation_jacobian(params: DynamicParams, vel_next, dt: float) -> np.ndarray:
    """Exact Jacobian of the prediction map, with A at the integrated velocity."""
    a = accel_jacobian(params, vel_next)
    g = np.zeros((6, 6))
    g[:3, :3] = np.eye(3)
    g[:3, 3:] = dt * np.eye(3)
    g[3:, :3] = a
    g[3:, 3:] = dt * a
    return g


def predict(state: EkfState, u, params: DynamicParams, noise: NoiseModel,
            dt: float) -> EkfState:
    """One prediction step.

    u is the control active over the interval STARTING at the destination
    sample: the velocity integral rides on the acceleration state, and the
    new acceleration block must describe what the destination measurement
    will see. Passing the previous interval's control instead biases the
    predicted acceleration by (T/m) * du at every control change.
    """
    u = np.asarray(u, dtype=float)
    mu_bar = np.empty(6)
    mu_bar[:3] = state.mu[:3] + state.mu[3:] * dt
    mu_bar[3:] = acceleration(mu_bar[:3], u, params.dl, params.dc,
                              params.torque_map, params.m, params.inertia)
    g = propagation_jacobian(params, mu_bar[:3], dt)
    sigma_bar = g @ state.sigma @ g.T + noise.r_model * dt
    sigma_bar = 0.5 * (sigma_bar + sigma_bar.T)
    return EkfState(mu=mu_bar, sigma=sigma_bar, t=state.t + dt)


def _gain(state: EkfState, noise: NoiseModel) -> np.ndarray:
    s = H_MEAS @ state.sigma @ H_MEAS.T + noise.q_meas
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > COND_LIMIT:
        raise SingularInnovation(
            "innovation covariance is singular; check q_meas and sigma")
    return state.sigma @ H_MEAS.T @ np.linalg.inv(s)


def update(state: EkfState, z, noise: NoiseModel) -> EkfState:
    z = np.asarray(z, dtype=float).reshape(3)
    k = _gain(state, noise)
    mu = state.mu + k @ (z - H_MEAS @ state.mu)
    sigma = (np.eye(6) - k @ H_MEAS) @ state.sigma
    sigma = 0.5 * (sigma + sigma.T)
    return EkfState(mu=mu, sigma=sigma, t=state.t)


def joseph_update(state: EkfState, z, noise: NoiseModel) -> EkfState:
    """Numerically conservative update form; same gain, same estimate."""
    z = np.asarray(z, dtype=float).reshape(3)
    k = _gain(state, noise)
    mu = state.mu + k @ (z - H_MEAS @ state.mu)
    ikh = np.eye(6) - k @ H_MEAS
    sigma = ikh @ state.sigma @ ikh.T + k @ noise.q_meas @ k.T
    return EkfState(mu=mu, sigma=0.5 * (sigma + sigma.T), t=state.t)


def dead_reckon(pose, vel_a, vel_b, dt: float) -> np.ndarray:
    """One pose step from two consecutive body-velocity estimates.

    Midpoint rule: average the velocities, advance the position along the
    heading at the half-step, then wrap the heading.
    """
    pose = np.asarray(pose, dtype=float)
    v = 0.5 * (np.asarray(vel_a, dtype=float) + np.asarray(vel_b, dtype=float))
    psi_mid = pose[2] + 0.5 * v[2] * dt
    c, s = np.cos(psi_mid), np.sin(psi_mid)
    return np.array([
        pose[0] + (c * v[0] - s * v[1]) * dt,
        pose[1] + (s * v[0] + c * v[1]) * dt,
        wrap_angle(pose[2] + v[2] * dt),
    ])


@dataclass
class FilterResult:
    trace: EstimateTrace
    innovations: np.ndarray          # (N, 3) pre-update residuals
    nees: np.ndarray | None = None   # (N,) when the log carries truth


def run_filter(log: MissionLog, params: DynamicParams, noise: NoiseModel,
               mu0=None, sigma0=None, initial_pose=(0.0, 0.0, 0.0)) -> FilterResult:
    """Filter a whole log; returns the trace plus consistency diagnostics.

    The state is updated with the first record's measurement, then each later
    step predicts with the control held over the preceding interval and
    updates with that record's measurement. Defaults assume an exactly known
    start at rest (zero mean, zero covariance). NEES entries are NaN where
    the posterior covariance is singular (the first steps of an exact start).
    """
    n = len(log)
    dt = log.dt
    mu0 = np.zeros(6) if mu0 is None else np.asarray(mu0, dtype=float).reshape(6)
    sigma0 = np.zeros((6, 6)) if sigma0 is None \
        else np.asarray(sigma0, dtype=float).reshape(6, 6)

    mu = np.empty((n, 6))
    sigma_diag = np.empty((n, 6))
    est_pose = np.empty((n, 3))
    innovations = np.empty((n, 3))
    truth = None
    nees = None
    if log.has_truth:
        truth = np.hstack([log.truth_vel, log.truth_accel])
        nees = np.full(n, np.nan)

    state = EkfState(mu=mu0, sigma=sigma0, t=float(log.t[0]))
    est_pose[0] = np.asarray(initial_pose, dtype=float)

    for k in range(n):
        if k > 0:
            state = predict(state, log.u[k], params, noise, dt)
        innovations[k] = log.sensor[k] - H_MEAS @ state.mu
        state = update(state, log.sensor[k], noise)
        mu[k] = state.mu
        sigma_diag[k] = np.diag(state.sigma)
        if k > 0:
            est_pose[k] = dead_reckon(est_pose[k - 1], mu[k - 1, :3], mu[k, :3], dt)
        if truth is not None:
            err = state.mu - truth[k]
            try:
                nees[k] = float(err @ np.linalg.solve(state.sigma, err))
            except np.linalg.LinAlgError:
                pass

    trace = EstimateTrace(log=log, mu=mu, sigma_diag=sigma_diag, est_pose=est_pose)
    return FilterResult(trace=trace, innovations=innovations, nees=nees)
