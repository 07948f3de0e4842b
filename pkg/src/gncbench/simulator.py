"""Deterministic mission simulator and sensor model.

The plant integrates the rigid-body model with fixed-step RK4. The sensor
suite is a body-frame accelerometer pair plus a z-axis gyro, sampled every
step with additive Gaussian noise. Process noise, when enabled, is a
per-step-constant body-acceleration perturbation drawn from the model-error
covariance's acceleration block scaled by dt, so one simulated step and one
filter prediction step describe the same stochastic increment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from gncbench.dynamics import (
    ConfigError,
    ControlAction,
    DynamicParams,
    InvalidTimestep,
    MAX_TIMESTEP,
    NonFiniteState,
    VehicleState,
    acceleration,
    derivative,
    rk4_step,
)
from gncbench.missionlog import MissionLog

CHANNEL_NAMES = ("x", "y", "psi")

# multisine bands per channel, chosen against the drag time constants so the
# plant actually responds (yaw is an order of magnitude slower than surge)
_SINE_BANDS = {"x": (0.05, 0.6), "y": (0.05, 0.6), "psi": (0.02, 0.15)}
_SINE_COUNT = 6
_STEP_MAGNITUDES = np.array([0.3, 0.6, 1.0])


class EmptyChannelMask(ValueError):
    """Excitation requested with no channel enabled."""


def _check_cov(name: str, cov: np.ndarray, dim: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dim, dim):
        raise ConfigError(f"{name} must be {dim}x{dim}, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ConfigError(f"{name} has non-finite entries")
    scale = 1.0 + float(np.max(np.abs(cov)))
    if np.max(np.abs(cov - cov.T)) > 1e-9 * scale:
        raise ConfigError(f"{name} is not symmetric")
    if float(np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T)))) < -1e-9 * scale:
        raise ConfigError(f"{name} is not positive semidefinite")
    return cov


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """L with L L^T = cov for symmetric PSD cov (rank-deficient allowed)."""
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class NoiseModel:
    """Sensor covariance q_meas (3x3, over ax/ay/gyro) and model-error
    covariance r_model (6x6, over the stacked velocity+acceleration state)."""

    q_meas: np.ndarray
    r_model: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_meas", _check_cov("q_meas", self.q_meas, 3).copy())
        object.__setattr__(self, "r_model", _check_cov("r_model", self.r_model, 6).copy())

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(q_meas=np.zeros((3, 3)), r_model=np.zeros((6, 6)))

    def to_dict(self) -> dict:
        return {
            "Q": {"shape": [3, 3], "data": [float(v) for v in self.q_meas.reshape(9)]},
            "R": {"shape": [6, 6], "data": [float(v) for v in self.r_model.reshape(36)]},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseModel":
        if not isinstance(doc, dict) or set(doc) != {"Q", "R"}:
            raise ConfigError("noise document must have exactly the keys Q and R")
        mats = {}
        for key, dim in (("Q", 3), ("R", 6)):
            entry = doc[key]
            if not isinstance(entry, dict) or set(entry) != {"shape", "data"}:
                raise ConfigError(f"{key} must carry 'shape' and 'data'")
            if list(entry["shape"]) != [dim, dim]:
                raise ConfigError(f"{key} shape must be [{dim}, {dim}]")
            data = np.asarray(entry["data"], dtype=float)
            if data.shape != (dim * dim,):
                raise ConfigError(f"{key} data must hold {dim * dim} row-major values")
            mats[key] = data.reshape(dim, dim)
        return cls(q_meas=mats["Q"], r_model=mats["R"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NoiseModel":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"unparseable noise document {path}: {exc}") from exc
        return cls.from_dict(doc)


@dataclass(frozen=True)
class SensorSample:
    """One timestamped reading: body accelerations plus yaw-rate gyro."""

    t: float
    ax: float
    ay: float
    gyro: float

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.gyro])


def sense(params: DynamicParams, state: VehicleState, u: ControlAction,
          noise: NoiseModel, rng, t: float = 0.0) -> SensorSample:
    """Instantaneous sensor reading at one state under control u.

    The accelerometers report the model body acceleration; the gyro reports
    the yaw rate. Additive zero-mean noise with covariance q_meas; rng is a
    numpy Generator or a seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    _, acc = derivative(params, state, u)
    mean = np.array([acc.ax, acc.ay, state.vel.vpsi])
    if np.any(noise.q_meas != 0.0):
        mean = mean + psd_factor(noise.q_meas) @ rng.standard_normal(3)
    return SensorSample(float(t), *(float(v) for v in mean))


def excitation_signal(duration: float, dt: float, channels, seed: int):
    """Persistently exciting control schedule on the enabled channels.

    Each enabled channel carries a jittered six-tone multisine over a band
    matched to that DOF's drag time constant, summed with an alternating-sign
    random-magnitude step train (dwell 2-6 s) so the plant visits several
    distinct speed plateaus; the sum is clipped to [-1, 1]. Draws for all
    three channels are consumed in fixed order, so the signal on an enabled
    channel does not depend on which other channels are enabled.

    Returns (t, u) with t = k*dt and u of shape (N, 3).
    """
    channels = frozenset(channels)
    if not channels:
        raise EmptyChannelMask("no excitation channel enabled")
    unknown = channels - set(CHANNEL_NAMES)
    if unknown:
        raise ConfigError(f"unknown excitation channels: {sorted(unknown)}")
    if not (0.0 < dt <= MAX_TIMESTEP):
        raise InvalidTimestep(f"dt must lie in (0, {MAX_TIMESTEP}], got {dt!r}")
    n = int(round(duration / dt))
    if n < 2:
        raise ConfigError("excitation shorter than two samples")
    t = np.arange(n) * dt
    rng = np.random.default_rng(seed)
    u = np.zeros((n, 3))
    for idx, name in enumerate(CHANNEL_NAMES):
        lo, hi = _SINE_BANDS[name]
        freqs = np.geomspace(lo, hi, _SINE_COUNT) * rng.uniform(0.93, 1.07, _SINE_COUNT)
        phases = rng.uniform(0.0, 2.0 * math.pi, _SINE_COUNT)
        sine = np.sin(2.0 * math.pi * freqs[:, None] * t[None, :] + phases[:, None])
        sine = sine.sum(axis=0) / _SINE_COUNT
        steps = np.empty(n)
        filled = 0
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        while filled < n:
            dwell = max(1, int(round(rng.uniform(2.0, 6.0) / dt)))
            mag = float(rng.choice(_STEP_MAGNITUDES))
            steps[filled:filled + dwell] = sign * mag
            filled += dwell
            sign = -sign
        if name in channels:
            u[:, idx] = np.clip(0.45 * sine + 0.6 * steps, -1.0, 1.0)
    return t, u


def run_mission(params: DynamicParams, noise: NoiseModel, controls, dt: float,
                seed: int, initial_state: VehicleState | None = None) -> MissionLog:
    """Simulate the plant over a control schedule, recording truth and sensors.

    controls is (N, 3); commands saturate to [-1, 1] like ControlAction.
    Process noise (if r_model's acceleration block is nonzero) is drawn once
    per step with covariance r_model[3:, 3:] * dt and held constant across
    the step's RK4 stages; the recorded truth acceleration and the sensed
    acceleration both include it. Bit-identical output for identical inputs
    and seed. Raises NonFiniteState with the failing index if the model
    diverges.
    """
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and 0.0 < dt <= MAX_TIMESTEP):
        raise InvalidTimestep(f"dt must lie in (0, {MAX_TIMESTEP}], got {dt!r}")
    u_all = np.clip(np.asarray(controls, dtype=float), -1.0, 1.0)
    if u_all.ndim != 2 or u_all.shape[1] != 3 or len(u_all) < 2:
        raise ConfigError("controls must be an (N, 3) schedule with N >= 2")
    if not np.all(np.isfinite(u_all)):
        raise NonFiniteState("non-finite control schedule")
    n = len(u_all)
    rng = np.random.default_rng(seed)
    z_proc = rng.standard_normal((n, 3))
    z_meas = rng.standard_normal((n, 3))
    w_acc = noise.r_model[3:, 3:] * dt
    proc = z_proc @ psd_factor(w_acc).T if np.any(w_acc != 0.0) else np.zeros((n, 3))
    meas = z_meas @ psd_factor(noise.q_meas).T if np.any(noise.q_meas != 0.0) else np.zeros((n, 3))

    dl, dc, tmap = params.dl, params.dc, params.torque_map
    m, inertia = params.m, params.inertia
    s = (initial_state or VehicleState.at_rest()).as_array()
    sensor = np.empty((n, 3))
    truth_pose = np.empty((n, 3))
    truth_vel = np.empty((n, 3))
    truth_accel = np.empty((n, 3))
    # divergence surfaces as a typed error, not a numpy overflow warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            uk = u_all[k]
            acc = acceleration(s[3:], uk, dl, dc, tmap, m, inertia) + proc[k]
            truth_pose[k] = s[:3]
            truth_vel[k] = s[3:]
            truth_accel[k] = acc
            sensor[k, 0] = acc[0] + meas[k, 0]
            sensor[k, 1] = acc[1] + meas[k, 1]
            sensor[k, 2] = s[5] + meas[k, 2]
            s = rk4_step(s, uk, dl, dc, tmap, m, inertia, dt, accel_bias=proc[k])
            if not np.all(np.isfinite(s)):
                raise NonFiniteState(f"simulation diverged at index {k} (t = {k * dt:.3f})")
    return MissionLog(
        t=np.arange(n) * dt, u=u_all, sensor=sensor,
        truth_pose=truth_pose, truth_vel=truth_vel, truth_accel=truth_accel,
    )
