"""Targeted perturbation of predictor inputs under physical constraints.

The optimization minimizes the weighted average L2 distance between the
predicted future and a desired target future, over a per-state additive
perturbation of the past trajectory. Updates come from plain gradient
descent or Adam; whenever an update leaves the feasible set, a per-state
line search finds scale factors theta in [0, 1] (largest feasible, on a
grid) and the update is recombined elementwise as theta * update.

The loop terminates when the loss drops to the threshold or the iteration
cap is reached. The returned perturbation is the best feasible iterate
seen during the run, which is also what suite-level metrics report (a
projection can bounce the very last iterate away from the best one).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import (
    ConstraintSet,
    FeasibilityReport,
    is_feasible,
    states_feasible,
    states_report,
    worst_violation,
)
from .optim import Adam
from .predictors import PredictorSpec, predict, predict_with_gradient
from .trajectory import Trajectory

__all__ = [
    "WeightScheme",
    "AttackConfig",
    "AttackResult",
    "make_weights",
    "weighted_loss",
    "loss_gradient",
    "project_line_search",
    "run_attack",
]

COINCIDENT_EPS = 1e-12  # below this prediction-target distance the loss term's subgradient is zero


@dataclass(frozen=True, eq=False)
class WeightScheme:
    """Per-future-state importance weights, normalized to sum to 1.

    ``exponential`` weights grow geometrically toward the final state
    (weight of state j of F is proportional to alpha^(F-j)), so the loss
    behaves like an exponential moving average of the state deviations
    with the endpoint weighted most.
    """

    kind: str
    alpha: float | None
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


def make_weights(kind: str, horizon: int, alpha: float = 0.7) -> WeightScheme:
    """Build a weight scheme of the given future horizon.

    kinds: ``uniform`` (all 1/F) or ``exponential`` (strictly increasing,
    decay ``alpha`` in (0, 1)).
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if kind == "uniform":
        return WeightScheme("uniform", None, np.full(horizon, 1.0 / horizon))
    if kind == "exponential":
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {alpha}")
        raw = alpha ** np.arange(horizon - 1, -1, -1, dtype=float)
        return WeightScheme("exponential", alpha, raw / raw.sum())
    raise ValueError(f"unknown weight kind {kind!r}")


def weighted_loss(prediction: Trajectory, target: Trajectory, scheme: WeightScheme) -> float:
    """Weighted average L2 distance between prediction and target states."""
    if len(prediction) != len(target) or len(target) != len(scheme):
        raise ValueError(
            f"length mismatch: prediction {len(prediction)}, target {len(target)}, "
            f"weights {len(scheme)}"
        )
    dists = np.linalg.norm(prediction.states - target.states, axis=1)
    return float(scheme.weights @ dists)


def loss_gradient(
    spec: PredictorSpec,
    nominal: Trajectory,
    delta: np.ndarray,
    target: Trajectory,
    scheme: WeightScheme,
) -> np.ndarray:
    """Exact gradient of the weighted loss with respect to the perturbation.

    ``delta`` is an (P+1, 2) array (or its flattening); the result is the
    flat gradient of length 2(P+1). Where a predicted state coincides with
    its target the zero subgradient is used.
    """
    delta = np.asarray(delta, dtype=float).reshape(len(nominal), 2)
    perturbed = Trajectory(nominal.states + delta, nominal.dt)
    pwg = predict_with_gradient(spec, perturbed)
    return _chain_gradient(pwg.prediction, pwg.jacobian, target, scheme)


def _chain_gradient(
    prediction: Trajectory, jacobian: np.ndarray, target: Trajectory, scheme: WeightScheme
) -> np.ndarray:
    residual = prediction.states - target.states
    dists = np.linalg.norm(residual, axis=1)
    coef = np.where(dists < COINCIDENT_EPS, 0.0, scheme.weights / np.maximum(dists, COINCIDENT_EPS))
    upstream = (coef[:, None] * residual).reshape(-1)
    return jacobian.T @ upstream


@dataclass(frozen=True)
class AttackConfig:
    """Optimizer and termination settings for one attack run.

    step schedules: ``constant``, ``inv_sqrt`` (eps0/sqrt(k+1)), ``inv_k``
    (eps0/(k+1)), ``geometric`` (eps0 * geometric_decay^k). ``schedule=None``
    picks the conventional default for the optimizer: constant for adam,
    inv_sqrt for gradient_descent.
    """

    optimizer: str = "adam"
    step_size: float = 0.05
    schedule: str | None = None
    geometric_decay: float = 0.93
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_threshold: float = 0.02
    max_iterations: int = 100
    init: str = "random"
    init_scale: float = 0.01
    seed: int = 0
    projection_grid: int = 100

    def __post_init__(self) -> None:
        if self.optimizer not in ("gradient_descent", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.loss_threshold < 0:
            raise ValueError("loss_threshold must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.init not in ("zero", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.schedule not in (None, "constant", "inv_sqrt", "inv_k", "geometric"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.projection_grid < 1:
            raise ValueError("projection_grid must be >= 1")

    def resolved_schedule(self) -> str:
        if self.schedule is not None:
            return self.schedule
        return "constant" if self.optimizer == "adam" else "inv_sqrt"

    def step_at(self, k: int) -> float:
        schedule = self.resolved_schedule()
        if schedule == "constant":
            return self.step_size
        if schedule == "inv_sqrt":
            return self.step_size / np.sqrt(k + 1.0)
        if schedule == "inv_k":
            return self.step_size / (k + 1.0)
        return self.step_size * self.geometric_decay**k


@dataclass(frozen=True, eq=False)
class AttackResult:
    """Outcome of one attack run.

    ``adversarial`` is nominal + perturbation exactly (same floats), and is
    always feasible; ``final_loss`` is its loss. ``loss_trace`` holds the
    loss of each post-update iterate, so its length equals ``iterations``.
    ``projection_events`` lists the iteration indices where the update left
    the feasible set and was rescaled.
    """

    adversarial: Trajectory
    perturbation: np.ndarray
    loss_trace: tuple[float, ...]
    final_loss: float
    iterations: int
    projection_events: tuple[int, ...]
    feasibility: FeasibilityReport
    config: AttackConfig


def project_line_search(
    cs: ConstraintSet,
    nominal: Trajectory,
    delta_candidate: np.ndarray,
    grid_steps: int = 100,
) -> np.ndarray:
    """Per-state scale factors pulling an infeasible update back in bounds.

    Searches the grid {0, 1/G, ..., 1} per state for factors theta that
    make nominal + theta * delta feasible while keeping the total sum of
    theta as large as the search can reach: starting from all ones, the
    factor of the most-deviated state involved in the worst violation is
    lowered one grid step at a time until feasible; a final sweep raises
    any factor that can grow again without breaking feasibility. States
    whose perturbation already satisfies their position ball keep
    theta = 1 whenever the coupled constraints allow it.

    Feasibility of the result is guaranteed: theta = 0 reproduces the
    nominal trajectory, which is feasible by construction.
    """
    if grid_steps < 1:
        raise ValueError(f"grid_steps must be >= 1, got {grid_steps}")
    if nominal != cs.nominal:
        raise ValueError("nominal trajectory does not match the constraint set anchor")
    delta = np.asarray(delta_candidate, dtype=float).reshape(len(nominal), 2)
    n_states = len(nominal)
    base = nominal.states

    # Integer grid coordinates avoid accumulating rounding in theta itself.
    # A state whose full perturbation leaves the position ball can never
    # keep theta above radius/|delta|; snapping to that cap up front is
    # exactly where the one-tick descent would stop and skips the walk.
    norms = np.linalg.norm(delta, axis=1)
    outside = norms > cs.position_radius
    caps = np.full(n_states, grid_steps, dtype=int)
    caps[outside] = np.floor(grid_steps * cs.position_radius / norms[outside]).astype(int)
    ticks = caps.copy()

    def states_at(t: np.ndarray) -> np.ndarray:
        return base + (t / grid_steps)[:, None] * delta

    def pick_reducible(involved: tuple[int, ...]) -> int | None:
        reducible = [n for n in involved if ticks[n] > 0]
        if not reducible:
            return None
        # Most-perturbed involved state at its current scale.
        return max(reducible, key=lambda n: (ticks[n] * norms[n], -n))

    guard = n_states * grid_steps + 1
    worst = worst_violation(cs, states_at(ticks))
    last_pick: tuple[int, str] | None = None
    stride = 1
    while worst is not None:
        _, involved, name = worst
        target = pick_reducible(involved)
        if target is None:
            # The worst violation only involves zeroed states; walk the
            # full report for the next one that can still shrink.
            for violation in states_report(cs, states_at(ticks)).worst_first():
                target = pick_reducible(violation.involved)
                if target is not None:
                    break
            if target is None:
                raise AssertionError("infeasible with all involved factors at zero")
        # Doubling stride while the same state blocks the same constraint;
        # the raise pass recovers any overshoot, so the endpoint matches
        # the one-tick walk.
        stride = stride * 2 if last_pick == (target, name) else 1
        last_pick = (target, name)
        ticks[target] -= min(stride, ticks[target])
        guard -= 1
        if guard < 0:
            raise AssertionError("projection line search failed to terminate")
        worst = worst_violation(cs, states_at(ticks))

    # Raise pass: recover scale lost to transiently coupled violations;
    # the position-ball caps can never be exceeded.
    improved = True
    while improved:
        improved = False
        for n in range(n_states):
            while ticks[n] < caps[n]:
                ticks[n] += 1
                if states_feasible(cs, states_at(ticks)):
                    improved = True
                else:
                    ticks[n] -= 1
                    break
    return ticks / grid_steps


def run_attack(
    spec: PredictorSpec,
    nominal: Trajectory,
    target: Trajectory,
    cs: ConstraintSet,
    scheme: WeightScheme,
    cfg: AttackConfig,
) -> AttackResult:
    """Iteratively perturb ``nominal`` so the prediction approaches ``target``.

    Each iteration takes one optimizer step on the perturbation; if the
    updated input violates the constraint set, the step is rescaled per
    state by :func:`project_line_search`, so every post-update iterate is
    feasible. Stops once the loss reaches ``cfg.loss_threshold`` or after
    ``cfg.max_iterations`` updates. Deterministic given config and seed.
    """
    if nominal != cs.nominal:
        raise ValueError("nominal trajectory does not match the constraint set anchor")
    if len(target) != spec.future_horizon:
        raise ValueError(f"target has {len(target)} states, predictor emits {spec.future_horizon}")
    if not is_feasible(cs, nominal).feasible:
        raise ValueError("nominal input violates its own constraint set")

    n_coords = 2 * len(nominal)
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "zero":
        delta = np.zeros(n_coords)
    else:
        delta = rng.normal(0.0, cfg.init_scale, size=n_coords)

    adam = Adam(n_coords, cfg.beta1, cfg.beta2, cfg.adam_eps) if cfg.optimizer == "adam" else None

    def evaluate(flat_delta: np.ndarray) -> tuple[float, np.ndarray, Trajectory]:
        perturbed = Trajectory(nominal.states + flat_delta.reshape(-1, 2), nominal.dt)
        pwg = predict_with_gradient(spec, perturbed)
        loss = weighted_loss(pwg.prediction, target, scheme)
        grad = _chain_gradient(pwg.prediction, pwg.jacobian, target, scheme)
        return loss, grad, perturbed

    loss, grad, perturbed = evaluate(delta)
    feasible_now = is_feasible(cs, perturbed).feasible
    best_delta = delta.copy() if feasible_now else None
    best_loss = loss if feasible_now else np.inf

    trace: list[float] = []
    projections: list[int] = []
    k = 0
    while k < cfg.max_iterations and not (feasible_now and loss <= cfg.loss_threshold):
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite loss at iteration {k}")
        eps_k = cfg.step_at(k)
        if adam is not None:
            update = delta - adam.step(grad, eps_k)
        else:
            update = delta - eps_k * grad
        if not states_feasible(cs, nominal.states + update.reshape(-1, 2)):
            theta = project_line_search(cs, nominal, update, cfg.projection_grid)
            update = (theta[:, None] * update.reshape(-1, 2)).reshape(-1)
            projections.append(k)
        delta = update
        loss, grad, perturbed = evaluate(delta)
        feasible_now = True  # post-update iterates are feasible by construction
        trace.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_delta = delta.copy()
        k += 1

    if best_delta is None:
        raise RuntimeError("attack produced no feasible iterate")
    perturbation = best_delta.reshape(-1, 2)
    adversarial = Trajectory(nominal.states + perturbation, nominal.dt)
    feasibility = is_feasible(cs, adversarial)
    if not feasibility.feasible:
        raise AssertionError(f"output infeasible, which violates the loop invariant: {feasibility.violations}")
    perturbation = perturbation.copy()
    perturbation.flags.writeable = False
    return AttackResult(
        adversarial=adversarial,
        perturbation=perturbation,
        loss_trace=tuple(trace),
        final_loss=best_loss,
        iterations=k,
        projection_events=tuple(projections),
        feasibility=feasibility,
        config=cfg,
    )
