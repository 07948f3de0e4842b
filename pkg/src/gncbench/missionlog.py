"""Line-oriented text formats for logs, trajectories, and estimate traces.

All files share one shape: a single header line naming comma-separated
columns, then one record per line with floats printed in shortest
round-trip form (locale-independent, '.' decimal point). Deterministic
byte-for-byte given identical arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_COLUMNS = ("t", "ux", "uy", "upsi", "ax", "ay", "gyro")
TRUTH_COLUMNS = ("x", "y", "psi", "vx", "vy", "vpsi", "axt", "ayt", "apsit")
TRAJECTORY_COLUMNS = ("t", "x", "y", "psi", "vx", "vy", "vpsi")
ESTIMATE_COLUMNS = (
    "mu_vx", "mu_vy", "mu_vpsi", "mu_ax", "mu_ay", "mu_apsi",
    "sig_vx", "sig_vy", "sig_vpsi", "sig_ax", "sig_ay", "sig_apsi",
    "est_x", "est_y", "est_psi",
)

# sample spacing may wobble by at most this fraction of the median period
UNIFORMITY_TOL = 0.01


class LogFormatError(ValueError):
    """Unreadable or internally inconsistent log/trajectory file."""


def _format_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _write_table(path, columns, rows: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(_format_row(row) + "\n")


def _read_table(path):
    """Returns (columns, (N, C) float array); raises LogFormatError."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise LogFormatError(f"{path}: empty file")
        columns = tuple(header.split(","))
        data = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                raise LogFormatError(
                    f"{path}:{lineno}: expected {len(columns)} fields, got {len(parts)}"
                )
            try:
                data.append([float(p) for p in parts])
            except ValueError as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from exc
    if not data:
        raise LogFormatError(f"{path}: no records")
    return columns, np.asarray(data, dtype=float)


def _check_time_axis(t: np.ndarray, what: str) -> None:
    if t.ndim != 1 or len(t) < 2:
        raise LogFormatError(f"{what}: need at least 2 records")
    dts = np.diff(t)
    if np.any(dts <= 0.0):
        raise LogFormatError(f"{what}: timestamps not strictly increasing")
    med = float(np.median(dts))
    if np.max(np.abs(dts - med)) > UNIFORMITY_TOL * med:
        raise LogFormatError(f"{what}: sample period not uniform within 1%")


@dataclass
class MissionLog:
    """Recorded mission: controls and sensor stream, plus truth if simulated.

    sensor columns are (ax, ay, gyro): measured body accelerations and the
    measured yaw rate. Truth arrays are all present or all absent.
    """

    t: np.ndarray
    u: np.ndarray
    sensor: np.ndarray
    truth_pose: np.ndarray | None = None
    truth_vel: np.ndarray | None = None
    truth_accel: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.sensor = np.asarray(self.sensor, dtype=float)
        for name in ("truth_pose", "truth_vel", "truth_accel"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        self.validate()

    def __len__(self) -> int:
        return len(self.t)

    @property
    def has_truth(self) -> bool:
        return self.truth_pose is not None

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    def validate(self) -> None:
        _check_time_axis(self.t, "mission log")
        n = len(self.t)
        if self.u.shape != (n, 3) or self.sensor.shape != (n, 3):
            raise LogFormatError("mission log: control/sensor arrays must be (N, 3)")
        truth = [self.truth_pose, self.truth_vel, self.truth_accel]
        present = [v is not None for v in truth]
        if any(present) and not all(present):
            raise LogFormatError("mission log: truth columns must be all present or absent")
        if all(present):
            for v in truth:
                if v.shape != (n, 3):
                    raise LogFormatError("mission log: truth arrays must be (N, 3)")
        arrays = [self.t, self.u, self.sensor] + [v for v in truth if v is not None]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise LogFormatError("mission log: non-finite values")

    def save(self, path) -> None:
        cols = LOG_COLUMNS + (TRUTH_COLUMNS if self.has_truth else ())
        blocks = [self.t[:, None], self.u, self.sensor]
        if self.has_truth:
            blocks += [self.truth_pose, self.truth_vel, self.truth_accel]
        _write_table(path, cols, np.hstack(blocks))

    @classmethod
    def load(cls, path) -> "MissionLog":
        columns, data = _read_table(path)
        if columns == LOG_COLUMNS:
            return cls(t=data[:, 0], u=data[:, 1:4], sensor=data[:, 4:7])
        if columns == LOG_COLUMNS + TRUTH_COLUMNS:
            return cls(
                t=data[:, 0], u=data[:, 1:4], sensor=data[:, 4:7],
                truth_pose=data[:, 7:10], truth_vel=data[:, 10:13],
                truth_accel=data[:, 13:16],
            )
        raise LogFormatError(f"{path}: unrecognized column set {columns}")


@dataclass
class ReferenceTrajectory:
    """Time-stamped pose and body-velocity reference recorded in teach mode."""

    t: np.ndarray
    pose: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        from gncbench.dynamics import wrap_angle

        self.t = np.asarray(self.t, dtype=float)
        self.pose = np.asarray(self.pose, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        if self.pose.ndim == 2 and self.pose.shape[1] == 3:
            self.pose = self.pose.copy()
            self.pose[:, 2] = wrap_angle(self.pose[:, 2])
        _check_time_axis(self.t, "trajectory")
        n = len(self.t)
        if self.pose.shape != (n, 3) or self.vel.shape != (n, 3):
            raise LogFormatError("trajectory: pose/vel arrays must be (N, 3)")
        if not (np.all(np.isfinite(self.pose)) and np.all(np.isfinite(self.vel))):
            raise LogFormatError("trajectory: non-finite values")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def path_length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.pose[:, :2], axis=0).T)))

    def sample(self, t: float):
        """Linear interpolation at time t (clamped to the recorded span).

        Heading interpolates along the shortest arc so a wrap crossing does
        not produce a spurious full-turn sweep. Returns (pose, vel) arrays.
        """
        from gncbench.dynamics import wrap_angle

        t = float(np.clip(t, self.t[0], self.t[-1]))
        k = int(np.searchsorted(self.t, t, side="right") - 1)
        k = min(max(k, 0), len(self.t) - 2)
        span = self.t[k + 1] - self.t[k]
        frac = (t - self.t[k]) / span if span > 0 else 0.0
        p0, p1 = self.pose[k], self.pose[k + 1]
        pose = p0 + frac * (p1 - p0)
        pose[2] = wrap_angle(p0[2] + frac * wrap_angle(p1[2] - p0[2]))
        vel = self.vel[k] + frac * (self.vel[k + 1] - self.vel[k])
        return pose, vel

    def save(self, path) -> None:
        _write_table(path, TRAJECTORY_COLUMNS,
                     np.hstack([self.t[:, None], self.pose, self.vel]))

    @classmethod
    def load(cls, path) -> "ReferenceTrajectory":
        columns, data = _read_table(path)
        if columns != TRAJECTORY_COLUMNS:
            raise LogFormatError(f"{path}: unrecognized column set {columns}")
        return cls(t=data[:, 0], pose=data[:, 1:4], vel=data[:, 4:7])


@dataclass
class EstimateTrace:
    """A mission log extended with the filter trace that was run over it."""

    log: MissionLog
    mu: np.ndarray
    sigma_diag: np.ndarray
    est_pose: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma_diag = np.asarray(self.sigma_diag, dtype=float)
        self.est_pose = np.asarray(self.est_pose, dtype=float)
        n = len(self.log)
        if self.mu.shape != (n, 6) or self.sigma_diag.shape != (n, 6):
            raise LogFormatError("estimate trace: mu/sigma arrays must be (N, 6)")
        if self.est_pose.shape != (n, 3):
            raise LogFormatError("estimate trace: est_pose must be (N, 3)")

    def save(self, path) -> None:
        log = self.log
        cols = LOG_COLUMNS + (TRUTH_COLUMNS if log.has_truth else ()) + ESTIMATE_COLUMNS
        blocks = [log.t[:, None], log.u, log.sensor]
        if log.has_truth:
            blocks += [log.truth_pose, log.truth_vel, log.truth_accel]
        blocks += [self.mu, self.sigma_diag, self.est_pose]
        _write_table(path, cols, np.hstack(blocks))

    @classmethod
    def load(cls, path) -> "EstimateTrace":
        columns, data = _read_table(path)
        if columns == LOG_COLUMNS + ESTIMATE_COLUMNS:
            log = MissionLog(t=data[:, 0], u=data[:, 1:4], sensor=data[:, 4:7])
            base = 7
        elif columns == LOG_COLUMNS + TRUTH_COLUMNS + ESTIMATE_COLUMNS:
            log = MissionLog(
                t=data[:, 0], u=data[:, 1:4], sensor=data[:, 4:7],
                truth_pose=data[:, 7:10], truth_vel=data[:, 10:13],
                truth_accel=data[:, 13:16],
            )
            base = 16
        else:
            raise LogFormatError(f"{path}: unrecognized column set {columns}")
        return cls(log=log, mu=data[:, base:base + 6],
                   sigma_diag=data[:, base + 6:base + 12],
                   est_pose=data[:, base + 12:base + 15])
