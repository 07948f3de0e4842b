"""Planar rigid-body vehicle model.

World pose eta = (x, y, psi), body velocity nu = (vx, vy, vpsi). The model is
the standard 3-DOF form

    M nu_dot + C(nu) nu + D(nu) nu = tau,      eta_dot = J(psi) nu,

with diagonal mass matrix M = diag(m, m, inertia), rigid-body Coriolis C(nu),
speed-dependent diagonal drag D(nu) = diag(-dl_i - dc_i*|nu_i|), and actuator
wrench tau = T u for a 3x3 torque map T and commanded u in [-1, 1]^3.
Friction coefficients dl, dc are negative for a dissipative vehicle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Fixed-step integration only; anything above 0.1 s is outside the regime
# the drag linearization and the sensor model were checked in.
MAX_TIMESTEP = 0.1


class NonFiniteState(ValueError):
    """A state, input, or derivative stopped being finite."""


class InvalidTimestep(ValueError):
    """Integration step outside (0, MAX_TIMESTEP]."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration document."""


def wrap_angle(psi):
    """Wrap an angle (scalar or ndarray) to (-pi, pi]."""
    return np.pi - (np.pi - psi) % TWO_PI


def rotation(psi: float) -> np.ndarray:
    """World-from-body rotation J(psi) acting on (vx, vy, vpsi)."""
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """World-frame pose; heading stored wrapped to (-pi, pi]."""

    x: float
    y: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", float(wrap_angle(float(self.psi))))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi])

    @classmethod
    def from_array(cls, a) -> "Pose":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class BodyVelocity:
    vx: float
    vy: float
    vpsi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vpsi])

    @classmethod
    def from_array(cls, a) -> "BodyVelocity":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class BodyAccel:
    ax: float
    ay: float
    apsi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.apsi])

    @classmethod
    def from_array(cls, a) -> "BodyAccel":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class ControlAction:
    """Commanded actuator triple; components saturate to [-1, 1]."""

    ux: float
    uy: float
    upsi: float

    def __post_init__(self):
        for name in ("ux", "uy", "upsi"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise NonFiniteState(f"non-finite control component {name}")
            object.__setattr__(self, name, min(1.0, max(-1.0, v)))

    def as_array(self) -> np.ndarray:
        return np.array([self.ux, self.uy, self.upsi])

    @classmethod
    def from_array(cls, a) -> "ControlAction":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class VehicleState:
    pose: Pose
    vel: BodyVelocity

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.pose.as_array(), self.vel.as_array()])

    @classmethod
    def from_array(cls, a) -> "VehicleState":
        return cls(Pose.from_array(a[:3]), BodyVelocity.from_array(a[3:]))

    @classmethod
    def at_rest(cls) -> "VehicleState":
        return cls(Pose(0.0, 0.0, 0.0), BodyVelocity(0.0, 0.0, 0.0))


_PARAM_KEYS = {"m", "inertia", "dl", "dc", "T"}


@dataclass(frozen=True)
class DynamicParams:
    """Model parameter set: mass, yaw inertia, drag coefficients, torque map.

    dl and dc hold the linear and speed-proportional drag coefficients per
    body DOF (surge, sway, yaw); both negative for dissipation. torque_map
    maps the commanded triple u to the body wrench tau = torque_map @ u.
    """

    m: float
    inertia: float
    dl: np.ndarray
    dc: np.ndarray
    torque_map: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dl", np.asarray(self.dl, dtype=float).reshape(3).copy())
        object.__setattr__(self, "dc", np.asarray(self.dc, dtype=float).reshape(3).copy())
        object.__setattr__(
            self, "torque_map", np.asarray(self.torque_map, dtype=float).reshape(3, 3).copy()
        )
        if not (math.isfinite(self.m) and self.m > 0.0):
            raise ConfigError(f"mass must be finite and positive, got {self.m}")
        if not (math.isfinite(self.inertia) and self.inertia > 0.0):
            raise ConfigError(f"inertia must be finite and positive, got {self.inertia}")
        for name in ("dl", "dc", "torque_map"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"non-finite entries in {name}")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "inertia": self.inertia,
            "dl": [float(v) for v in self.dl],
            "dc": [float(v) for v in self.dc],
            "T": [float(v) for v in self.torque_map.reshape(9)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DynamicParams":
        if not isinstance(doc, dict):
            raise ConfigError("parameter document must be a mapping")
        unknown = set(doc) - _PARAM_KEYS
        if unknown:
            raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
        missing = _PARAM_KEYS - set(doc)
        if missing:
            raise ConfigError(f"missing parameter keys: {sorted(missing)}")
        dl = np.asarray(doc["dl"], dtype=float)
        dc = np.asarray(doc["dc"], dtype=float)
        tmap = np.asarray(doc["T"], dtype=float)
        if dl.shape != (3,) or dc.shape != (3,):
            raise ConfigError("dl and dc must each hold exactly 3 values")
        if tmap.shape != (9,):
            raise ConfigError("T must hold exactly 9 values, row-major")
        return cls(float(doc["m"]), float(doc["inertia"]), dl, dc, tmap.reshape(3, 3))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DynamicParams":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"unparseable parameter document {path}: {exc}") from exc
        return cls.from_dict(doc)


def coriolis(params: DynamicParams, vel: BodyVelocity) -> np.ndarray:
    """Rigid-body Coriolis matrix C(nu) for diagonal M."""
    mvx = params.m * vel.vx
    mvy = params.m * vel.vy
    return np.array([[0.0, 0.0, -mvy], [0.0, 0.0, mvx], [mvy, -mvx, 0.0]])


def damping(params: DynamicParams, vel: BodyVelocity) -> np.ndarray:
    """Drag matrix D(nu) = diag(-dl_i - dc_i*|nu_i|); PSD for dissipative signs."""
    v = vel.as_array()
    return np.diag(-params.dl - params.dc * np.abs(v))


def acceleration(vel, u, dl, dc, tmap, m, inertia):
    """Body acceleration nu_dot for (..., 3) velocity/control stacks.

    Equivalent to M^-1 (T u - C(nu) nu - D(nu) nu); the yaw Coriolis moment
    cancels identically for diagonal M, so it never appears here. Parameter
    arrays broadcast, which lets one call evaluate a whole batch of candidate
    models against a shared input.
    """
    vel = np.asarray(vel, dtype=float)
    u = np.asarray(u, dtype=float)
    tau = np.einsum("...ij,...j->...i", np.asarray(tmap, dtype=float), u)
    drag = (dl + dc * np.abs(vel)) * vel
    vx, vy, vpsi = vel[..., 0], vel[..., 1], vel[..., 2]
    ax = (drag[..., 0] + tau[..., 0]) / m + vy * vpsi
    ay = (drag[..., 1] + tau[..., 1]) / m - vx * vpsi
    apsi = (drag[..., 2] + tau[..., 2]) / inertia
    return np.stack([ax, ay, apsi], axis=-1)


def state_derivative(state, u, dl, dc, tmap, m, inertia, accel_bias=None):
    """Time derivative of the packed state (x, y, psi, vx, vy, vpsi).

    accel_bias, when given, is added to the body acceleration; the simulator
    uses it to hold a process-noise draw constant across one step.
    """
    state = np.asarray(state, dtype=float)
    vel = state[..., 3:6]
    acc = acceleration(vel, u, dl, dc, tmap, m, inertia)
    if accel_bias is not None:
        acc = acc + accel_bias
    psi = state[..., 2]
    c, s = np.cos(psi), np.sin(psi)
    xd = c * vel[..., 0] - s * vel[..., 1]
    yd = s * vel[..., 0] + c * vel[..., 1]
    return np.concatenate(
        [np.stack([xd, yd, vel[..., 2]], axis=-1), acc], axis=-1
    )


def rk4_step(state, u, dl, dc, tmap, m, inertia, dt, accel_bias=None):
    """One classical RK4 step of the packed state; heading re-wrapped after."""
    k1 = state_derivative(state, u, dl, dc, tmap, m, inertia, accel_bias)
    k2 = state_derivative(state + 0.5 * dt * k1, u, dl, dc, tmap, m, inertia, accel_bias)
    k3 = state_derivative(state + 0.5 * dt * k2, u, dl, dc, tmap, m, inertia, accel_bias)
    k4 = state_derivative(state + dt * k3, u, dl, dc, tmap, m, inertia, accel_bias)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def derivative(params: DynamicParams, state: VehicleState, u: ControlAction):
    """Pose rate eta_dot = J(psi) nu and body acceleration at one state.

    Returns (pose_rate, BodyAccel) with pose_rate a length-3 ndarray.
    """
    s = state.as_array()
    uarr = u.as_array()
    if not np.all(np.isfinite(s)):
        raise NonFiniteState("non-finite vehicle state")
    ds = state_derivative(s, uarr, params.dl, params.dc, params.torque_map,
                          params.m, params.inertia)
    if not np.all(np.isfinite(ds)):
        raise NonFiniteState("non-finite state derivative")
    return ds[:3], BodyAccel.from_array(ds[3:])


def step(params: DynamicParams, state: VehicleState, u: ControlAction, dt: float) -> VehicleState:
    """Advance the state one fixed RK4 step of length dt."""
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and 0.0 < dt <= MAX_TIMESTEP):
        raise InvalidTimestep(f"dt must lie in (0, {MAX_TIMESTEP}], got {dt!r}")
    s = state.as_array()
    if not np.all(np.isfinite(s)):
        raise NonFiniteState("non-finite vehicle state")
    out = rk4_step(s, u.as_array(), params.dl, params.dc, params.torque_map,
                   params.m, params.inertia, float(dt))
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("integration produced a non-finite state")
    return VehicleState.from_array(out)
