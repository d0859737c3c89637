"""Synthetic driving scenarios and the JSON-lines dataset format.

The generator walks a heading, one step per sample, so each transition's
length is exactly the commanded speed times dt before waypoint noise is
added. Speeds ease between two endpoints drawn from the configured range
(a smoothstep ramp, giving realistic longitudinal acceleration and jerk),
and three motion families are produced: straight lines, gentle
constant-rate turns, and lane changes (a smooth heading pulse that returns
to the original heading, leaving a lateral offset).

File format: one JSON object per line, ``{id, dt, P, F, past, future}``,
where ``past`` is a list of P+1 [x, y] pairs and ``future`` a list of F.
Coordinates round-trip exactly (shortest-repr decimal serialization).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trajectory import Scenario, Trajectory

__all__ = [
    "GenConfig",
    "DatasetFormatError",
    "generate_synthetic_dataset",
    "write_dataset",
    "read_dataset",
]

KINDS = ("straight", "curve", "lane_change")


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the line number."""


@dataclass(frozen=True)
class GenConfig:
    """Knobs of the synthetic scenario generator.

    Attributes:
        count: number of scenarios to produce (> 0).
        past_len: number of past transitions P; the past has P+1 states.
        future_len: number of future states F.
        dt: sample spacing in seconds.
        speed_min, speed_max: speed range, m/s; each scenario eases from
            one sampled endpoint speed to another inside this range.
        straight_rate, curve_rate, lane_change_rate: relative frequencies
            of the three motion families (normalized internally).
        curve_yaw_min, curve_yaw_max: turn-rate magnitude range, rad/s.
        pulse_min, pulse_max: lane-change heading-pulse amplitude, rad.
        noise_amplitude: radius of the uniform disc jitter applied to every
            waypoint, in meters. The derived speed of any transition then
            stays within 2*noise_amplitude/dt of the sampled speed.
        seed: RNG seed; generation is deterministic given the config.
    """

    count: int
    past_len: int = 4
    future_len: int = 12
    dt: float = 0.5
    speed_min: float = 5.0
    speed_max: float = 15.0
    straight_rate: float = 0.4
    curve_rate: float = 0.3
    lane_change_rate: float = 0.3
    curve_yaw_min: float = 0.02
    curve_yaw_max: float = 0.15
    pulse_min: float = 0.08
    pulse_max: float = 0.25
    noise_amplitude: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count <= 0:
            raise ValueError(f"count must be positive, got {self.count}")
        if self.past_len < 1 or self.future_len < 2:
            raise ValueError(
                f"horizons must satisfy past_len >= 1 and future_len >= 2, "
                f"got P={self.past_len}, F={self.future_len}"
            )
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (0 < self.speed_min <= self.speed_max):
            raise ValueError("need 0 < speed_min <= speed_max")
        rates = (self.straight_rate, self.curve_rate, self.lane_change_rate)
        if min(rates) < 0 or sum(rates) <= 0:
            raise ValueError("motion-family rates must be nonnegative and not all zero")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")


def _disc_samples(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    # Area-correct uniform draw on the disc.
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def _headings(kind: str, n_steps: int, base: float, dt: float, rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    if kind == "straight":
        return np.full(n_steps, base)
    if kind == "curve":
        yaw = rng.uniform(cfg.curve_yaw_min, cfg.curve_yaw_max) * rng.choice((-1.0, 1.0))
        return base + yaw * dt * np.arange(n_steps)
    # lane_change: sin^2 pulse, zero at both ends, net lateral displacement
    amp = rng.uniform(cfg.pulse_min, cfg.pulse_max) * rng.choice((-1.0, 1.0))
    u = np.arange(n_steps) / max(n_steps - 1, 1)
    return base + amp * np.sin(math.pi * u) ** 2


def generate_synthetic_dataset(config: GenConfig) -> list[Scenario]:
    """Generate ``config.count`` scenarios, deterministically per seed."""
    rng = np.random.default_rng(config.seed)
    rates = np.array([config.straight_rate, config.curve_rate, config.lane_change_rate])
    rates = rates / rates.sum()
    n = config.past_len + 1 + config.future_len

    scenarios = []
    for idx in range(config.count):
        kind = KINDS[rng.choice(len(KINDS), p=rates)]
        speed_from, speed_to = rng.uniform(config.speed_min, config.speed_max, size=2)
        base_heading = rng.uniform(0.0, 2.0 * math.pi)
        start = rng.uniform(-50.0, 50.0, size=2)

        phi = _headings(kind, n - 1, base_heading, config.dt, rng, config)
        u = np.arange(n - 1) / max(n - 2, 1)
        speed = speed_from + (speed_to - speed_from) * (3.0 * u**2 - 2.0 * u**3)
        steps = (speed * config.dt)[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        points = np.vstack([start, start + np.cumsum(steps, axis=0)])
        if config.noise_amplitude > 0:
            points = points + _disc_samples(rng, n, config.noise_amplitude)

        past = Trajectory(points[: config.past_len + 1], config.dt)
        future = Trajectory(points[config.past_len + 1 :], config.dt)
        scenarios.append(Scenario(past, future, id=f"s{idx:05d}-{kind}"))
    return scenarios


def _states_to_lists(traj: Trajectory) -> list[list[float]]:
    return [[float(x), float(y)] for x, y in traj.states]


def write_dataset(scenarios: list[Scenario], path) -> None:
    """Write scenarios as JSON lines; coordinates serialize exactly."""
    lines = []
    for sc in scenarios:
        record = {
            "id": sc.id,
            "dt": sc.past.dt,
            "P": len(sc.past) - 1,
            "F": len(sc.future_truth),
            "past": _states_to_lists(sc.past),
            "future": _states_to_lists(sc.future_truth),
        }
        lines.append(json.dumps(record))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_points(raw, *, line: int, field: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise DatasetFormatError(f"line {line}: field {field!r} must be a nonempty list")
    for pt in raw:
        if not (isinstance(pt, list) and len(pt) == 2):
            raise DatasetFormatError(f"line {line}: field {field!r} must hold [x, y] pairs")
    return np.array(raw, dtype=float)


def read_dataset(path) -> list[Scenario]:
    """Read a JSON-lines dataset, validating declared horizons per record.

    Raises:
        DatasetFormatError: on malformed JSON, missing fields, or a
            declared P/F that disagrees with the actual array lengths
            (the message names the offending scenario id).
    """
    scenarios = []
    text = Path(path).read_text()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise DatasetFormatError(f"line {line_no}: record must be a JSON object")
        missing = [k for k in ("id", "dt", "past", "future") if k not in record]
        if missing:
            raise DatasetFormatError(f"line {line_no}: missing fields {missing}")
        sid = record["id"]
        past = _parse_points(record["past"], line=line_no, field="past")
        future = _parse_points(record["future"], line=line_no, field="future")
        if "P" in record and record["P"] != len(past) - 1:
            raise DatasetFormatError(
                f"line {line_no}: scenario {sid!r} declares P={record['P']} "
                f"but past has {len(past)} states (expected P+1={record['P'] + 1})"
            )
        if "F" in record and record["F"] != len(future):
            raise DatasetFormatError(
                f"line {line_no}: scenario {sid!r} declares F={record['F']} "
                f"but future has {len(future)} states"
            )
        try:
            scenario = Scenario(
                Trajectory(past, record["dt"]),
                Trajectory(future, record["dt"]),
                id=str(sid),
            )
        except ValueError as exc:
            raise DatasetFormatError(f"line {line_no}: scenario {sid!r}: {exc}") from exc
        scenarios.append(scenario)
    return scenarios
