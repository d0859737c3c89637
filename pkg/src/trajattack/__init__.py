"""Targeted adversarial perturbation of trajectory-prediction inputs.

Given a differentiable predictor, a nominal past trajectory, and a desired
future, the attack computes a minimally perturbed input that stays
physically plausible (position ball around the nominal input plus
statistical kinematic bands) while steering the prediction toward the
desired future.
"""

from .attack import (
    AttackConfig,
    AttackResult,
    WeightScheme,
    loss_gradient,
    make_weights,
    project_line_search,
    run_attack,
    weighted_loss,
)
from .constraints import (
    ConstraintSet,
    FeasibilityReport,
    KinematicBounds,
    QuantityBound,
    Violation,
    build_constraint_set,
    compute_bounds,
    is_feasible,
    load_bounds,
    save_bounds,
)
from .datasets import (
    DatasetFormatError,
    GenConfig,
    generate_synthetic_dataset,
    read_dataset,
    write_dataset,
)
from .evaluation import (
    MetricsReport,
    NoiseConfig,
    NoiseRobustnessReport,
    TargetSpec,
    attack_suite,
    make_target,
    nominal_accuracy,
    noise_robustness,
    perturb_with_noise,
    target_deviation,
)
from .predictors import (
    Layer,
    PredictionWithGradient,
    PredictorSchemaError,
    PredictorSpec,
    TrainConfig,
    TrainResult,
    init_mlp,
    load_predictor,
    predict,
    predict_with_gradient,
    save_predictor,
    train_mlp,
)
from .trajectory import KinematicProfile, Scenario, Trajectory, derive_kinematics

__version__ = "0.1.0"
