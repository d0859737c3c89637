"""Planar trajectories and the kinematic quantities derived from them.

A trajectory is an ordered sequence of 2-D positions sampled at a fixed
time step ``dt``. Positions are the only stored state: speed, acceleration,
and jerk are always derived from them, never carried alongside.

All types here are immutable after construction and safe to share across
threads; every operation is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Trajectory", "KinematicProfile", "Scenario", "derive_kinematics"]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled sequence of (x, y) positions in meters.

    Attributes:
        states: (N, 2) float array of positions, N >= 2.
        dt: spacing between consecutive states, in seconds (> 0).
    """

    states: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"states must be an (N, 2) array, got shape {arr.shape}")
        if len(arr) < 2:
            raise ValueError(f"trajectory needs at least 2 states, got {len(arr)}")
        if not np.isfinite(arr).all():
            raise ValueError("trajectory contains non-finite coordinates")
        dt = float(self.dt)
        if not (np.isfinite(dt) and dt > 0):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "states", arr)
        object.__setattr__(self, "dt", dt)

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.states, other.states)

    def translated(self, offset) -> "Trajectory":
        """Return a copy rigidly shifted by a constant (x, y) offset."""
        return Trajectory(self.states + np.asarray(offset, dtype=float), self.dt)

    def flat(self) -> np.ndarray:
        """Positions flattened to [x0, y0, x1, y1, ...] (length 2N)."""
        return self.states.reshape(-1).copy()


@dataclass(frozen=True, eq=False)
class KinematicProfile:
    """Derived per-step kinematics of a trajectory of N states.

    Attributes:
        speed: (N-1,) scalar speeds of each transition, m/s, all >= 0.
        accel_lon: (N-2,) acceleration along the local heading, m/s^2.
        accel_lat: (N-2,) acceleration perpendicular to the heading, m/s^2.
        jerk_lon: (N-3,) step differences of accel_lon over dt, m/s^3.
        jerk_lat: (N-3,) step differences of accel_lat over dt, m/s^3.

    Arrays are empty when the trajectory is too short to support them.
    """

    speed: np.ndarray
    accel_lon: np.ndarray
    accel_lat: np.ndarray
    jerk_lon: np.ndarray
    jerk_lat: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "speed": self.speed,
            "accel_lon": self.accel_lon,
            "accel_lat": self.accel_lat,
            "jerk_lon": self.jerk_lon,
            "jerk_lat": self.jerk_lat,
        }


@dataclass(frozen=True, eq=False)
class Scenario:
    """One prediction test case: an observed past and its true future.

    The future trajectory continues the past one on the same clock, so
    both must share the same dt.
    """

    past: Trajectory
    future_truth: Trajectory
    id: str

    def __post_init__(self) -> None:
        if self.past.dt != self.future_truth.dt:
            raise ValueError(
                f"scenario {self.id!r}: past dt {self.past.dt} != future dt {self.future_truth.dt}"
            )


def _profile_scalar(states: np.ndarray, dt: float) -> dict[str, np.ndarray]:
    # Plain-float kernel; numpy's per-call overhead dominates at the short
    # lengths the projection search probes, so the formulas are mirrored
    # here operation for operation to keep both paths bit-identical.
    n = len(states)
    dt2 = dt**2
    xs = states[:, 0].tolist()
    ys = states[:, 1].tolist()
    speed = [0.0] * (n - 1)
    for i in range(n - 1):
        dx = xs[i + 1] - xs[i]
        dy = ys[i + 1] - ys[i]
        speed[i] = math.sqrt(dx * dx + dy * dy) / dt
    accel_lon = [0.0] * max(n - 2, 0)
    accel_lat = [0.0] * max(n - 2, 0)
    for i in range(n - 2):
        ax = (xs[i + 2] - 2.0 * xs[i + 1] + xs[i]) / dt2
        ay = (ys[i + 2] - 2.0 * ys[i + 1] + ys[i]) / dt2
        cx = xs[i + 2] - xs[i]
        cy = ys[i + 2] - ys[i]
        clen = math.sqrt(cx * cx + cy * cy)
        if clen == 0.0:
            hx, hy = 1.0, 0.0
        else:
            hx, hy = cx / clen, cy / clen
        accel_lon[i] = ax * hx + ay * hy
        accel_lat[i] = -ax * hy + ay * hx
    jerk_lon = [0.0] * max(n - 3, 0)
    jerk_lat = [0.0] * max(n - 3, 0)
    for i in range(n - 3):
        jerk_lon[i] = (accel_lon[i + 1] - accel_lon[i]) / dt
        jerk_lat[i] = (accel_lat[i + 1] - accel_lat[i]) / dt
    return {
        "speed": np.array(speed),
        "accel_lon": np.array(accel_lon),
        "accel_lat": np.array(accel_lat),
        "jerk_lon": np.array(jerk_lon),
        "jerk_lat": np.array(jerk_lat),
    }


def profile_arrays(states: np.ndarray, dt: float) -> dict[str, np.ndarray]:
    """Kinematic quantities of a raw (N, 2) position array.

    Shared kernel behind :func:`derive_kinematics`; feasibility checking
    uses it directly so both paths agree bit for bit.
    """
    if len(states) <= 24:
        return _profile_scalar(states, dt)
    steps = np.diff(states, axis=0)
    speed = np.linalg.norm(steps, axis=1) / dt

    if len(states) >= 3:
        accel_vec = (states[2:] - 2.0 * states[1:-1] + states[:-2]) / dt**2
        chord = states[2:] - states[:-2]
        chord_len = np.linalg.norm(chord, axis=1)
        degenerate = chord_len == 0.0
        heading = chord / np.where(degenerate, 1.0, chord_len)[:, None]
        heading[degenerate] = (1.0, 0.0)
        accel_lon = accel_vec[:, 0] * heading[:, 0] + accel_vec[:, 1] * heading[:, 1]
        accel_lat = -accel_vec[:, 0] * heading[:, 1] + accel_vec[:, 1] * heading[:, 0]
    else:
        accel_lon = np.empty(0)
        accel_lat = np.empty(0)

    if len(accel_lon) >= 2:
        jerk_lon = np.diff(accel_lon) / dt
        jerk_lat = np.diff(accel_lat) / dt
    else:
        jerk_lon = np.empty(0)
        jerk_lat = np.empty(0)
    return {
        "speed": speed,
        "accel_lon": accel_lon,
        "accel_lat": accel_lat,
        "jerk_lon": jerk_lon,
        "jerk_lat": jerk_lat,
    }


def derive_kinematics(traj: Trajectory) -> KinematicProfile:
    """Derive speed, longitudinal/lateral acceleration, and jerk from positions.

    For positions p_i with spacing dt:
      speed_i    = ||p_{i+1} - p_i|| / dt
      a_i        = (p_{i+1} - 2 p_i + p_{i-1}) / dt^2        (interior states)
      heading h_i = (p_{i+1} - p_{i-1}) normalized, falling back to (1, 0)
                    when the central difference vanishes
      accel_lon_i = a_i . h_i,  accel_lat_i = a_i . rot90(h_i)
      jerk components = first differences of the accel components over dt

    The lateral axis rot90(h) = (-h_y, h_x) points 90 degrees to the left
    of the heading.
    """
    if not isinstance(traj, Trajectory):
        raise TypeError("derive_kinematics expects a Trajectory")
    if len(traj.states) < 2:
        raise ValueError(f"need at least 2 states, got {len(traj.states)}")

    arrays = profile_arrays(traj.states, traj.dt)
    for arr in arrays.values():
        arr.flags.writeable = False
    return KinematicProfile(**arrays)
