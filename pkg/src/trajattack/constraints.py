"""Feasibility sets for perturbed trajectories.

A candidate input is feasible when (a) every state stays within a fixed
radius of the corresponding nominal state and (b) every derived kinematic
quantity (speed, longitudinal/lateral acceleration, and their step
derivatives) stays inside a statistical band mu +/- k*sigma computed from
a reference dataset.

Speed, acceleration, and jerk couple neighboring states, so feasibility is
a property of the whole trajectory; violations are attributed back to the
state indices involved so a projection can act per state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trajectory import Scenario, Trajectory, derive_kinematics, profile_arrays

__all__ = [
    "QUANTITIES",
    "QuantityBound",
    "KinematicBounds",
    "ConstraintSet",
    "Violation",
    "FeasibilityReport",
    "compute_bounds",
    "build_constraint_set",
    "is_feasible",
    "save_bounds",
    "load_bounds",
]

QUANTITIES = ("speed", "accel_lon", "accel_lat", "jerk_lon", "jerk_lat")

# Numerical slack on the kinematic bands, in each quantity's own units.
BAND_SLACK = 1e-9


@dataclass(frozen=True)
class QuantityBound:
    mu: float
    sigma: float
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.enabled and self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class KinematicBounds:
    """Per-quantity mean/std statistics with a shared band multiplier k.

    ``two_sided=False`` keeps only the upper limits mu + k*sigma.
    """

    speed: QuantityBound
    accel_lon: QuantityBound
    accel_lat: QuantityBound
    jerk_lon: QuantityBound
    jerk_lat: QuantityBound
    k: float = 3.0
    two_sided: bool = True

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")

    def quantity(self, name: str) -> QuantityBound:
        if name not in QUANTITIES:
            raise KeyError(name)
        return getattr(self, name)

    def interval(self, name: str) -> tuple[float, float]:
        """Raw band [mu - k*sigma, mu + k*sigma] (lower is -inf one-sided)."""
        q = self.quantity(name)
        hi = q.mu + self.k * q.sigma
        lo = q.mu - self.k * q.sigma if self.two_sided else -np.inf
        return lo, hi


def compute_bounds(dataset: list[Scenario], k: float = 3.0, two_sided: bool = True) -> KinematicBounds:
    """Pool derived kinematics over all past and future trajectories.

    Mean and standard deviation are population statistics over the pooled
    values. A quantity with no pooled samples (trajectories too short) is
    returned disabled.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    pools: dict[str, list[np.ndarray]] = {name: [] for name in QUANTITIES}
    for sc in dataset:
        for traj in (sc.past, sc.future_truth):
            profile = derive_kinematics(traj)
            for name, values in profile.as_dict().items():
                if len(values):
                    pools[name].append(values)
    stats = {}
    for name in QUANTITIES:
        if pools[name]:
            values = np.concatenate(pools[name])
            stats[name] = QuantityBound(float(values.mean()), float(values.std()), True)
        else:
            stats[name] = QuantityBound(0.0, 0.0, False)
    return KinematicBounds(**stats, k=k, two_sided=two_sided)


@dataclass(frozen=True)
class Violation:
    """One violated constraint, attributed to a state index.

    ``index`` is the state whose deviation from nominal is largest among
    the states entering the violated quantity; ``involved`` lists all of
    them. ``excess`` is by how much the constraint is exceeded, in the
    quantity's units.
    """

    index: int
    constraint: str
    excess: float
    involved: tuple[int, ...]


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: tuple[Violation, ...]

    def worst_first(self) -> tuple[Violation, ...]:
        return tuple(sorted(self.violations, key=lambda v: (-v.excess, v.index, v.constraint)))


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Permissible inputs anchored to one nominal trajectory.

    ``intervals`` are the effective per-quantity bands after minimally
    widening the raw mu +/- k*sigma bands to contain the nominal profile
    (so zero perturbation is always feasible); ``adjustments`` records any
    widening that took place.
    """

    position_radius: float
    bounds: KinematicBounds
    nominal: Trajectory
    intervals: dict[str, tuple[float, float]]
    adjustments: dict[str, tuple[float, float]]


def build_constraint_set(
    nominal: Trajectory, bounds: KinematicBounds, position_radius: float = 1.0
) -> ConstraintSet:
    """Anchor bounds to a nominal trajectory, widening bands if needed."""
    if position_radius <= 0:
        raise ValueError(f"position_radius must be positive, got {position_radius}")
    profile = derive_kinematics(nominal).as_dict()
    intervals: dict[str, tuple[float, float]] = {}
    adjustments: dict[str, tuple[float, float]] = {}
    for name in QUANTITIES:
        if not bounds.quantity(name).enabled:
            continue
        lo, hi = bounds.interval(name)
        values = profile[name]
        if len(values):
            new_lo = min(lo, float(values.min()))
            new_hi = max(hi, float(values.max()))
            if (new_lo, new_hi) != (lo, hi):
                adjustments[name] = (lo, hi)
            lo, hi = new_lo, new_hi
        intervals[name] = (lo, hi)
    cs = ConstraintSet(float(position_radius), bounds, nominal, intervals, adjustments)
    report = is_feasible(cs, nominal)
    if not report.feasible:
        raise AssertionError(f"nominal trajectory infeasible after widening: {report.violations}")
    return cs


def _kinematic_indices(name: str, i: int) -> tuple[int, ...]:
    # States entering entry i of each derived quantity.
    if name == "speed":
        return (i, i + 1)
    if name.startswith("accel"):
        return (i, i + 1, i + 2)
    return (i, i + 1, i + 2, i + 3)


def states_feasible(cs: ConstraintSet, states: np.ndarray) -> bool:
    """Boolean-only feasibility of a raw state array (no report)."""
    dists = np.linalg.norm(states - cs.nominal.states, axis=1)
    if (dists > cs.position_radius).any():
        return False
    profile = profile_arrays(states, cs.nominal.dt)
    for name, (lo, hi) in cs.intervals.items():
        values = profile[name]
        if len(values) and ((values > hi + BAND_SLACK).any() or (values < lo - BAND_SLACK).any()):
            return False
    return True


def worst_violation(cs: ConstraintSet, states: np.ndarray) -> tuple[float, tuple[int, ...], str] | None:
    """Largest-excess violation of raw states, as (excess, involved, name).

    Lean variant of :func:`states_report` for search loops; returns None
    when feasible. Ties resolve like ``FeasibilityReport.worst_first``.
    """
    dists = np.linalg.norm(states - cs.nominal.states, axis=1)
    best: tuple[float, int, str, tuple[int, ...]] | None = None

    def consider(excess: float, primary: int, name: str, involved: tuple[int, ...]) -> None:
        nonlocal best
        key = (-excess, primary, name)
        if best is None or key < (-best[0], best[1], best[2]):
            best = (excess, primary, name, involved)

    over = dists - cs.position_radius
    for n in np.flatnonzero(over > 0):
        n = int(n)
        consider(float(over[n]), n, "position", (n,))

    profile = profile_arrays(states, cs.nominal.dt)
    for name, (lo, hi) in cs.intervals.items():
        values = profile[name]
        if not len(values):
            continue
        excess = np.maximum(values - (hi + BAND_SLACK), (lo - BAND_SLACK) - values)
        i = int(np.argmax(excess))
        if excess[i] > 0:
            involved = _kinematic_indices(name, i)
            primary = max(involved, key=lambda n: (dists[n], -n))
            consider(float(excess[i]), primary, name, involved)

    if best is None:
        return None
    return best[0], best[3], best[2]


def states_report(cs: ConstraintSet, states: np.ndarray) -> FeasibilityReport:
    violations: list[Violation] = []
    dists = np.linalg.norm(states - cs.nominal.states, axis=1)
    for n in np.flatnonzero(dists > cs.position_radius):
        n = int(n)
        violations.append(Violation(n, "position", float(dists[n] - cs.position_radius), (n,)))

    profile = profile_arrays(states, cs.nominal.dt)
    for name, (lo, hi) in cs.intervals.items():
        values = profile[name]
        excess = np.maximum(values - (hi + BAND_SLACK), (lo - BAND_SLACK) - values)
        for i in np.flatnonzero(excess > 0):
            i = int(i)
            involved = _kinematic_indices(name, i)
            primary = max(involved, key=lambda n: (dists[n], -n))
            violations.append(Violation(primary, name, float(excess[i]), involved))

    return FeasibilityReport(not violations, tuple(violations))


def is_feasible(cs: ConstraintSet, candidate: Trajectory) -> FeasibilityReport:
    """Check a candidate against the position ball and kinematic bands.

    The report lists every violation; it is empty exactly when the
    candidate is feasible.
    """
    if len(candidate) != len(cs.nominal):
        raise ValueError(f"candidate has {len(candidate)} states, nominal has {len(cs.nominal)}")
    if candidate.dt != cs.nominal.dt:
        raise ValueError(f"candidate dt {candidate.dt} != nominal dt {cs.nominal.dt}")
    return states_report(cs, candidate.states)


def save_bounds(bounds: KinematicBounds, path) -> None:
    doc = {
        name: {
            "mu": bounds.quantity(name).mu,
            "sigma": bounds.quantity(name).sigma,
            "k": bounds.k,
            "enabled": bounds.quantity(name).enabled,
        }
        for name in QUANTITIES
    }
    doc["two_sided"] = bounds.two_sided
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_bounds(path) -> KinematicBounds:
    doc = json.loads(Path(path).read_text())
    ks = set()
    stats = {}
    for name in QUANTITIES:
        if name not in doc:
            raise ValueError(f"bounds file missing quantity {name!r}")
        entry = doc[name]
        stats[name] = QuantityBound(float(entry["mu"]), float(entry["sigma"]), bool(entry["enabled"]))
        ks.add(float(entry["k"]))
    if len(ks) != 1:
        raise ValueError(f"bounds file must use a single k, found {sorted(ks)}")
    return KinematicBounds(**stats, k=ks.pop(), two_sided=bool(doc.get("two_sided", True)))
