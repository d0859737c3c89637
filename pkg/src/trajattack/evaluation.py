"""Suite-level metrics and experiment protocols.

Metrics, all in meters and computed on positions only:

* ``J_acc_nom`` -- average L2 deviation of the clean prediction from the
  ground truth, per scenario.
* ``J_GY``     -- average L2 deviation of the target from the ground
  truth (how aggressive the target is).
* ``J_bar``    -- the attack objective achieved, suite-averaged. Per
  scenario this is the best loss seen during the run, not the last
  iterate (a projection can bounce the last iterate).

Protocols: whole-suite attacks, optimizer/iteration-cap ablations, and
robustness to waypoint noise drawn uniformly in a disc whose radius is a
fraction of the trajectory's mean consecutive-waypoint distance.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import AttackConfig, AttackResult, WeightScheme, run_attack, weighted_loss
from .constraints import KinematicBounds, build_constraint_set
from .predictors import PredictorSpec, predict
from .trajectory import Scenario, Trajectory

__all__ = [
    "TargetSpec",
    "NoiseConfig",
    "ScenarioMetrics",
    "MetricsReport",
    "NoiseRobustnessReport",
    "make_target",
    "nominal_accuracy",
    "target_deviation",
    "attack_suite",
    "perturb_with_noise",
    "noise_robustness",
]

METRICS_COLUMNS = ("scenario_id", "J_acc_nom", "J_GY", "J_bar", "iterations", "wall_time_s", "optimizer", "K_max")


@dataclass(frozen=True)
class TargetSpec:
    """Parametric family of desired predictions, derived from the truth.

    kinds:
      * ``lateral_shift`` -- the ground-truth future rigidly shifted
        ``shift_m`` meters perpendicular to its overall direction.
      * ``speedup`` -- future states scaled away from the last observed
        state by ``factor``, i.e. the same path driven faster.
      * ``custom`` -- an explicit trajectory.
    """

    kind: str
    shift_m: float = 1.0
    factor: float = 1.5
    custom: Trajectory | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("lateral_shift", "speedup", "custom"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "custom" and self.custom is None:
            raise ValueError("custom target needs a trajectory")


@dataclass(frozen=True)
class NoiseConfig:
    """Waypoint jitter: uniform in a disc of radius radius_factor * mean
    consecutive-waypoint distance of the trajectory being perturbed."""

    radius_factor: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.radius_factor < 0:
            raise ValueError("radius_factor must be >= 0")


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else np.array([1.0, 0.0])


def make_target(tspec: TargetSpec, scenario: Scenario) -> Trajectory:
    """Materialize the desired future trajectory for one scenario."""
    truth = scenario.future_truth
    if tspec.kind == "custom":
        if len(tspec.custom) != len(truth):
            raise ValueError(
                f"custom target has {len(tspec.custom)} states, scenario future has {len(truth)}"
            )
        return tspec.custom
    if tspec.kind == "lateral_shift":
        direction = truth.states[-1] - truth.states[0]
        if np.linalg.norm(direction) == 0:
            direction = scenario.past.states[-1] - scenario.past.states[-2]
        u = _unit(direction)
        normal = np.array([-u[1], u[0]])
        return truth.translated(tspec.shift_m * normal)
    anchor = scenario.past.states[-1]
    return Trajectory(anchor + tspec.factor * (truth.states - anchor), truth.dt)


def nominal_accuracy(spec: PredictorSpec, scenarios: list[Scenario]) -> np.ndarray:
    """Per-scenario average deviation of the prediction from the truth."""
    out = []
    for sc in scenarios:
        pred = predict(spec, sc.past)
        out.append(float(np.linalg.norm(pred.states - sc.future_truth.states, axis=1).mean()))
    return np.array(out)


def target_deviation(scenarios: list[Scenario], targets: list[Trajectory]) -> np.ndarray:
    """Per-scenario average deviation of the target from the truth."""
    out = []
    for sc, y in zip(scenarios, targets):
        out.append(float(np.linalg.norm(sc.future_truth.states - y.states, axis=1).mean()))
    return np.array(out)


@dataclass(frozen=True)
class ScenarioMetrics:
    scenario_id: str
    j_acc_nom: float
    j_gy: float
    j_bar: float
    iterations: int
    wall_time_s: float


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Per-scenario rows plus arithmetic means, with the run settings."""

    rows: tuple[ScenarioMetrics, ...]
    optimizer: str
    k_max: int
    failures: tuple[tuple[str, str], ...] = ()
    results: dict[str, AttackResult] = field(default_factory=dict, repr=False)

    def averages(self) -> dict[str, float]:
        if not self.rows:
            return {"J_acc_nom": math.nan, "J_GY": math.nan, "J_bar": math.nan, "wall_time_s": math.nan}
        return {
            "J_acc_nom": float(np.mean([r.j_acc_nom for r in self.rows])),
            "J_GY": float(np.mean([r.j_gy for r in self.rows])),
            "J_bar": float(np.mean([r.j_bar for r in self.rows])),
            "wall_time_s": float(np.mean([r.wall_time_s for r in self.rows])),
        }

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [r.scenario_id, repr(r.j_acc_nom), repr(r.j_gy), repr(r.j_bar),
                 r.iterations, repr(r.wall_time_s), self.optimizer, self.k_max]
            )
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    def to_json_doc(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "K_max": self.k_max,
            "averages": self.averages(),
            "per_scenario": [
                {
                    "scenario_id": r.scenario_id,
                    "J_acc_nom": r.j_acc_nom,
                    "J_GY": r.j_gy,
                    "J_bar": r.j_bar,
                    "iterations": r.iterations,
                    "wall_time_s": r.wall_time_s,
                }
                for r in self.rows
            ],
            "failures": [{"scenario_id": sid, "error": msg} for sid, msg in self.failures],
            "note": "J_bar is the best loss seen during each run, not the final iterate",
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_doc(), indent=2) + "\n")

    def traces_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario_id", "iteration", "loss"])
        for sid in (r.scenario_id for r in self.rows):
            result = self.results.get(sid)
            if result is None:
                continue
            for i, loss in enumerate(result.loss_trace):
                writer.writerow([sid, i, repr(loss)])
        return buf.getvalue()

    def write_traces_csv(self, path) -> None:
        Path(path).write_text(self.traces_csv_text())


def _scenario_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def attack_suite(
    spec: PredictorSpec,
    scenarios: list[Scenario],
    targets: list[Trajectory],
    bounds: KinematicBounds,
    scheme: WeightScheme,
    cfg: AttackConfig,
    position_radius: float = 1.0,
    threads: int = 1,
) -> MetricsReport:
    """Attack every scenario and collect the Table-style metrics.

    Each scenario gets its own constraint set anchored at its past and a
    deterministic per-scenario seed derived from ``cfg.seed``. Individual
    failures are recorded without aborting the suite.
    """
    if len(scenarios) != len(targets):
        raise ValueError("scenarios and targets must align")
    j_acc = nominal_accuracy(spec, scenarios)
    j_gy = target_deviation(scenarios, targets)

    def attack_one(i: int):
        sc, y = scenarios[i], targets[i]
        cs = build_constraint_set(sc.past, bounds, position_radius)
        local_cfg = replace(cfg, seed=_scenario_seed(cfg.seed, i))
        start = time.perf_counter()
        result = run_attack(spec, sc.past, y, cs, scheme, local_cfg)
        return result, time.perf_counter() - start

    rows: list[ScenarioMetrics] = []
    failures: list[tuple[str, str]] = []
    results: dict[str, AttackResult] = {}
    indices = range(len(scenarios))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda i: _guarded(attack_one, i), indices))
    else:
        outcomes = [_guarded(attack_one, i) for i in indices]

    for i, outcome in zip(indices, outcomes):
        sc = scenarios[i]
        if isinstance(outcome, Exception):
            failures.append((sc.id, f"{type(outcome).__name__}: {outcome}"))
            continue
        result, elapsed = outcome
        results[sc.id] = result
        rows.append(
            ScenarioMetrics(sc.id, float(j_acc[i]), float(j_gy[i]), result.final_loss,
                            result.iterations, elapsed)
        )
    return MetricsReport(tuple(rows), cfg.optimizer, cfg.max_iterations, tuple(failures), results)


def _guarded(fn, i):
    try:
        return fn(i)
    except Exception as exc:  # noqa: BLE001 - suite isolates scenario failures
        return exc


def mean_waypoint_gap(traj: Trajectory) -> float:
    """Mean distance between consecutive waypoints."""
    return float(np.linalg.norm(np.diff(traj.states, axis=0), axis=1).mean())


def perturb_with_noise(traj: Trajectory, nc: NoiseConfig) -> Trajectory:
    """Resample each waypoint uniformly in a disc around the original.

    The disc radius is ``nc.radius_factor`` times the trajectory's own
    mean consecutive-waypoint distance; a factor of zero is the identity.
    """
    if nc.radius_factor == 0:
        return traj
    radius = nc.radius_factor * mean_waypoint_gap(traj)
    rng = np.random.default_rng(nc.seed)
    r = radius * np.sqrt(rng.uniform(size=len(traj)))
    phi = rng.uniform(0.0, 2.0 * math.pi, size=len(traj))
    jitter = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    return Trajectory(traj.states + jitter, traj.dt)


@dataclass(frozen=True)
class NoiseScenarioRow:
    scenario_id: str
    j_acc_clean: float
    j_clean: float
    j_adv: float
    j_acc_noisy_clean: float
    j_noisy_clean: float
    j_noisy_adv: float


@dataclass(frozen=True, eq=False)
class NoiseRobustnessReport:
    """Noiseless baselines next to the two noisy protocols.

    ``j_clean`` is the loss of the unperturbed input against the target
    (what random noise must beat), ``j_adv`` the attack's achieved loss;
    the ``noisy_*`` columns re-evaluate after waypoint jitter.
    """

    rows: tuple[NoiseScenarioRow, ...]
    radius_factor: float

    def averages(self) -> dict[str, float]:
        names = ("j_acc_clean", "j_clean", "j_adv", "j_acc_noisy_clean", "j_noisy_clean", "j_noisy_adv")
        return {n: float(np.mean([getattr(r, n) for r in self.rows])) for n in names}

    def to_json_doc(self) -> dict:
        return {
            "radius_factor": self.radius_factor,
            "averages": self.averages(),
            "per_scenario": [
                {
                    "scenario_id": r.scenario_id,
                    "J_acc_nom_clean": r.j_acc_clean,
                    "J_clean": r.j_clean,
                    "J_adversarial": r.j_adv,
                    "J_acc_nom_noisy_clean": r.j_acc_noisy_clean,
                    "J_noisy_clean": r.j_noisy_clean,
                    "J_noisy_adversarial": r.j_noisy_adv,
                }
                for r in self.rows
            ],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_doc(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["scenario_id", "J_acc_nom_clean", "J_clean", "J_adversarial",
             "J_acc_nom_noisy_clean", "J_noisy_clean", "J_noisy_adversarial"]
        )
        for r in self.rows:
            writer.writerow(
                [r.scenario_id, repr(r.j_acc_clean), repr(r.j_clean), repr(r.j_adv),
                 repr(r.j_acc_noisy_clean), repr(r.j_noisy_clean), repr(r.j_noisy_adv)]
            )
        Path(path).write_text(buf.getvalue())


def noise_robustness(
    spec: PredictorSpec,
    scenarios: list[Scenario],
    targets: list[Trajectory],
    bounds: KinematicBounds,
    scheme: WeightScheme,
    cfg: AttackConfig,
    nc: NoiseConfig,
    position_radius: float = 1.0,
    attack_results: dict[str, AttackResult] | None = None,
) -> NoiseRobustnessReport:
    """Evaluate prediction quality and attack losses under waypoint noise.

    Protocol (a): jitter the clean inputs, recompute nominal accuracy and
    the loss against the targets. Protocol (b): jitter the adversarial
    inputs produced by the attack and recompute the loss. Precomputed
    attack results may be passed to avoid re-running the suite.
    """
    if attack_results is None:
        report = attack_suite(spec, scenarios, targets, bounds, scheme, cfg, position_radius)
        if report.failures:
            raise RuntimeError(f"attacks failed for scenarios: {[sid for sid, _ in report.failures]}")
        attack_results = report.results

    rows: list[NoiseScenarioRow] = []
    for i, (sc, y) in enumerate(zip(scenarios, targets)):
        result = attack_results[sc.id]
        f = len(y)
        clean_pred = predict(spec, sc.past)
        j_acc_clean = float(np.linalg.norm(clean_pred.states - sc.future_truth.states, axis=1).mean())
        j_clean = weighted_loss(clean_pred, y, scheme)

        noisy_past = perturb_with_noise(sc.past, replace(nc, seed=_scenario_seed(nc.seed, 2 * i)))
        noisy_pred = predict(spec, noisy_past)
        j_acc_noisy = float(np.linalg.norm(noisy_pred.states - sc.future_truth.states, axis=1).mean())
        j_noisy_clean = weighted_loss(noisy_pred, y, scheme)

        noisy_adv = perturb_with_noise(result.adversarial, replace(nc, seed=_scenario_seed(nc.seed, 2 * i + 1)))
        j_noisy_adv = weighted_loss(predict(spec, noisy_adv), y, scheme)

        rows.append(
            NoiseScenarioRow(sc.id, j_acc_clean, j_clean, result.final_loss,
                             j_acc_noisy, j_noisy_clean, j_noisy_adv)
        )
    return NoiseRobustnessReport(tuple(rows), nc.radius_factor)
