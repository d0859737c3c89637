"""Trajectory predictors with exact input gradients.

Two kinds are supported:

* ``constant_velocity`` -- extrapolates the last observed step; its
  Jacobian has a closed form.
* ``mlp`` -- a small tanh feedforward network operating on displacement
  vectors: the P consecutive displacements of the past are the input, and
  the F predicted displacements are accumulated from the last observed
  position. The relative encoding makes both predictors translation
  equivariant.

Coordinates flatten as [x0, y0, x1, y1, ...] everywhere a matrix or
vector view of a trajectory appears.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .optim import Adam
from .trajectory import Scenario, Trajectory

__all__ = [
    "Layer",
    "PredictorSpec",
    "PredictionWithGradient",
    "PredictorSchemaError",
    "TrainConfig",
    "TrainResult",
    "init_mlp",
    "predict",
    "predict_with_gradient",
    "train_mlp",
    "save_predictor",
    "load_predictor",
]

KINDS = ("constant_velocity", "mlp")


class PredictorSchemaError(ValueError):
    """Predictor file violates the schema; message names the field."""


@dataclass(frozen=True, eq=False)
class Layer:
    """One dense layer, y = weight @ x + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weight, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2:
            raise ValueError(f"layer weight must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match weight rows {w.shape[0]}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("layer has non-finite parameters")
        w = w.copy()
        b = b.copy()
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True, eq=False)
class PredictorSpec:
    """A prediction model mapping P+1 past states to F future states.

    For the mlp kind, hidden layers use tanh and the output layer is
    linear; the first layer must take 2*past_horizon inputs and the last
    must emit 2*future_horizon outputs.
    """

    kind: str
    past_horizon: int
    future_horizon: int
    layers: tuple[Layer, ...] = ()
    dt_hint: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.past_horizon < 1:
            raise ValueError(f"past_horizon must be >= 1, got {self.past_horizon}")
        # Predictions are trajectories, which need at least two states.
        if self.future_horizon < 2:
            raise ValueError(f"future_horizon must be >= 2, got {self.future_horizon}")
        if self.kind == "constant_velocity":
            if self.layers:
                raise ValueError("constant_velocity takes no layers")
            return
        if not self.layers:
            raise ValueError("mlp needs at least one layer")
        widths = [self.layers[0].weight.shape[1]]
        for layer in self.layers:
            if layer.weight.shape[1] != widths[-1]:
                raise ValueError(
                    f"layer input width {layer.weight.shape[1]} does not chain with {widths[-1]}"
                )
            widths.append(layer.weight.shape[0])
        if widths[0] != 2 * self.past_horizon:
            raise ValueError(f"first layer wants {widths[0]} inputs, expected {2 * self.past_horizon}")
        if widths[-1] != 2 * self.future_horizon:
            raise ValueError(f"last layer emits {widths[-1]} outputs, expected {2 * self.future_horizon}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictorSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.past_horizon == other.past_horizon
            and self.future_horizon == other.future_horizon
            and self.dt_hint == other.dt_hint
            and len(self.layers) == len(other.layers)
            and all(
                np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
                for a, b in zip(self.layers, other.layers)
            )
        )


@dataclass(frozen=True, eq=False)
class PredictionWithGradient:
    """A prediction plus the exact Jacobian of its coordinates.

    jacobian[2m + c, 2n + d] is the derivative of predicted state m,
    coordinate c, with respect to input state n, coordinate d; shape
    (2F, 2(P+1)).
    """

    prediction: Trajectory
    jacobian: np.ndarray


def _check_past(spec: PredictorSpec, past: Trajectory) -> None:
    expected = spec.past_horizon + 1
    if len(past) != expected:
        raise ValueError(f"past has {len(past)} states, predictor expects {expected}")


def _displacements(past: Trajectory) -> np.ndarray:
    return np.diff(past.states, axis=0).reshape(-1)


def _forward(spec: PredictorSpec, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the network; returns output and the post-tanh hidden activations."""
    hidden: list[np.ndarray] = []
    h = x
    for layer in spec.layers[:-1]:
        h = np.tanh(layer.weight @ h + layer.bias)
        hidden.append(h)
    out = spec.layers[-1].weight @ h + spec.layers[-1].bias
    return out, hidden


def _accumulate(anchor: np.ndarray, displacements: np.ndarray, dt: float) -> Trajectory:
    steps = displacements.reshape(-1, 2)
    return Trajectory(anchor + np.cumsum(steps, axis=0), dt)


def predict(spec: PredictorSpec, past: Trajectory) -> Trajectory:
    """Forecast ``future_horizon`` states from the past trajectory."""
    _check_past(spec, past)
    anchor = past.states[-1]
    if spec.kind == "constant_velocity":
        step = past.states[-1] - past.states[-2]
        ks = np.arange(1, spec.future_horizon + 1)[:, None]
        return Trajectory(anchor + ks * step, past.dt)
    out, _ = _forward(spec, _displacements(past))
    return _accumulate(anchor, out, past.dt)


def _encode_matrix(p: int) -> np.ndarray:
    # d_i = x_{i+1} - x_i on flattened coordinates: (2P, 2(P+1)).
    e = np.zeros((2 * p, 2 * (p + 1)))
    for i in range(p):
        for c in range(2):
            e[2 * i + c, 2 * i + c] = -1.0
            e[2 * i + c, 2 * (i + 1) + c] = 1.0
    return e


def predict_with_gradient(spec: PredictorSpec, past: Trajectory) -> PredictionWithGradient:
    """Prediction plus the exact Jacobian with respect to input coordinates."""
    _check_past(spec, past)
    p, f = spec.past_horizon, spec.future_horizon
    anchor = past.states[-1]

    if spec.kind == "constant_velocity":
        ks = np.arange(1, f + 1)[:, None]
        step = past.states[-1] - past.states[-2]
        prediction = Trajectory(anchor + ks * step, past.dt)
        jac = np.zeros((2 * f, 2 * (p + 1)))
        eye = np.eye(2)
        for k in range(1, f + 1):
            rows = slice(2 * (k - 1), 2 * k)
            jac[rows, 2 * p : 2 * p + 2] = (1 + k) * eye
            jac[rows, 2 * (p - 1) : 2 * p] = -k * eye
        return PredictionWithGradient(prediction, jac)

    out, hidden = _forward(spec, _displacements(past))
    prediction = _accumulate(anchor, out, past.dt)

    # Network Jacobian: W_L * diag(tanh') * ... * W_1, shape (2F, 2P).
    net = spec.layers[-1].weight
    for layer, h in zip(reversed(spec.layers[:-1]), reversed(hidden)):
        net = (net * (1.0 - h * h)) @ layer.weight
    cumsum = np.kron(np.tril(np.ones((f, f))), np.eye(2))
    jac = cumsum @ net @ _encode_matrix(p)
    # Every predicted state also moves one-for-one with the anchor x_t.
    for k in range(f):
        jac[2 * k, 2 * p] += 1.0
        jac[2 * k + 1, 2 * p + 1] += 1.0
    return PredictionWithGradient(prediction, jac)


def init_mlp(
    past_horizon: int,
    future_horizon: int,
    hidden: tuple[int, ...] = (64, 64),
    seed: int = 0,
    weight_scale: float | None = None,
    dt_hint: float | None = None,
) -> PredictorSpec:
    """Randomly initialized mlp spec; weight_scale defaults to 1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    widths = [2 * past_horizon, *hidden, 2 * future_horizon]
    layers = []
    for rows, cols in zip(widths[1:], widths[:-1]):
        scale = weight_scale if weight_scale is not None else 1.0 / np.sqrt(cols)
        layers.append(Layer(rng.normal(0.0, scale, size=(rows, cols)), np.zeros(rows)))
    return PredictorSpec("mlp", past_horizon, future_horizon, tuple(layers), dt_hint=dt_hint)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. ``seed`` drives init, split, and batching.

    The returned weights are the average of the iterates from the last
    ``tail_average`` fraction of epochs, which damps the minibatch noise
    floor of a constant learning rate; set it to 0 to keep the last
    iterate.
    """

    seed: int
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    val_fraction: float = 0.2
    tail_average: float = 0.25

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.tail_average <= 1.0:
            raise ValueError("tail_average must be in [0, 1]")


@dataclass(frozen=True)
class TrainResult:
    spec: PredictorSpec
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_ade: float = float("nan")


def _dataset_arrays(dataset: list[Scenario]) -> tuple[np.ndarray, np.ndarray, int, int, float]:
    p = len(dataset[0].past) - 1
    f = len(dataset[0].future_truth)
    dt = dataset[0].past.dt
    for sc in dataset:
        if len(sc.past) - 1 != p or len(sc.future_truth) != f:
            raise ValueError(f"scenario {sc.id!r} has mismatched horizons")
    inputs = np.stack([np.diff(sc.past.states, axis=0).reshape(-1) for sc in dataset])
    # Targets as cumulative displacements from the anchor, i.e. positions
    # relative to the last observed state.
    targets = np.stack(
        [(sc.future_truth.states - sc.past.states[-1]).reshape(-1) for sc in dataset]
    )
    return inputs, targets, p, f, dt


def _net_forward_batch(params: list[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    hidden = []
    h = x
    for w, b in zip(params[0::2][:-1], params[1::2][:-1]):
        h = np.tanh(h @ w.T + b)
        hidden.append(h)
    out = h @ params[-2].T + params[-1]
    return out, hidden


def _mse_positions(params: list[np.ndarray], x: np.ndarray, t: np.ndarray, f: int) -> float:
    out, _ = _net_forward_batch(params, x)
    pos = np.cumsum(out.reshape(len(x), f, 2), axis=1).reshape(len(x), -1)
    return float(np.mean((pos - t) ** 2))


def train_mlp(dataset: list[Scenario], hyper: TrainConfig) -> TrainResult:
    """Fit an mlp predictor to scenarios by Adam on position MSE.

    Inputs and targets are standardized internally; the scale is folded
    back into the first and last layers, so the returned spec obeys the
    plain schema. Deterministic for a fixed seed.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    inputs, targets, p, f, dt = _dataset_arrays(dataset)
    rng = np.random.default_rng(hyper.seed)

    n_val = int(round(hyper.val_fraction * len(dataset)))
    order = rng.permutation(len(dataset))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise ValueError("val_fraction leaves no training scenarios")

    scale = float(np.sqrt(np.mean(inputs[train_idx] ** 2)))
    scale = max(scale, 1e-9)
    x_train, t_train = inputs[train_idx] / scale, targets[train_idx] / scale
    x_val, t_val = inputs[val_idx] / scale, targets[val_idx] / scale

    widths = [2 * p, *hyper.hidden, 2 * f]
    params: list[np.ndarray] = []
    for rows, cols in zip(widths[1:], widths[:-1]):
        params.append(rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols)))
        params.append(np.zeros(rows))

    shapes = [prm.shape for prm in params]
    sizes = [prm.size for prm in params]
    adam = Adam(sum(sizes))

    def unflatten(vec: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for shape, size in zip(shapes, sizes):
            out.append(vec[pos : pos + size].reshape(shape))
            pos += size
        return out

    flat = np.concatenate([prm.reshape(-1) for prm in params])
    train_curve: list[float] = []
    val_curve: list[float] = []
    avg_from = int(round(hyper.epochs * (1.0 - hyper.tail_average)))
    avg_sum = np.zeros_like(flat)
    avg_count = 0

    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(x_train))
        for start in range(0, len(perm), hyper.batch_size):
            batch = perm[start : start + hyper.batch_size]
            xb, tb = x_train[batch], t_train[batch]
            prms = unflatten(flat)
            out, hidden = _net_forward_batch(prms, xb)
            pos = np.cumsum(out.reshape(len(xb), f, 2), axis=1).reshape(len(xb), -1)
            diff = pos - tb
            # d(mse)/d(out): reverse cumulative sum over future steps.
            g_pos = (2.0 / diff.size) * diff
            g_out = (
                np.cumsum(g_pos.reshape(len(xb), f, 2)[:, ::-1], axis=1)[:, ::-1]
                .reshape(len(xb), -1)
            )
            grads: list[np.ndarray] = []
            acts = [xb, *hidden]
            g = g_out
            for li in range(len(prms) // 2 - 1, -1, -1):
                w = prms[2 * li]
                a_in = acts[li]
                grads.insert(0, g.sum(axis=0))           # bias
                grads.insert(0, g.T @ a_in)              # weight
                if li > 0:
                    g = (g @ w) * (1.0 - acts[li] ** 2)
            flat_grad = np.concatenate([g_.reshape(-1) for g_ in grads])
            flat = flat - adam.step(flat_grad, hyper.learning_rate)
            if epoch >= avg_from:
                avg_sum += flat
                avg_count += 1

        prms = unflatten(flat)
        train_mse = _mse_positions(prms, x_train, t_train, f)
        if not np.isfinite(train_mse):
            raise RuntimeError(f"training diverged: non-finite loss at epoch {epoch}")
        train_curve.append(train_mse * scale**2)
        if len(x_val):
            val_curve.append(_mse_positions(prms, x_val, t_val, f) * scale**2)

    # lr 0 leaves every iterate bit-identical; dividing the running sum
    # would perturb the last bits, so keep the final iterate instead.
    if avg_count and hyper.learning_rate != 0:
        flat = avg_sum / avg_count
    prms = unflatten(flat)
    # Fold the standardization into the first/last layers: the spec then
    # consumes raw displacements and emits raw displacements.
    prms[0] = prms[0] / scale
    prms[-2] = prms[-2] * scale
    prms[-1] = prms[-1] * scale
    layers = tuple(Layer(w, b) for w, b in zip(prms[0::2], prms[1::2]))
    spec = PredictorSpec("mlp", p, f, layers, dt_hint=dt)

    val_ade = float("nan")
    if len(val_idx):
        errs = []
        for i in val_idx:
            pred = predict(spec, dataset[i].past)
            errs.append(np.linalg.norm(pred.states - dataset[i].future_truth.states, axis=1).mean())
        val_ade = float(np.mean(errs))
    return TrainResult(spec, train_curve, val_curve, val_ade)


def save_predictor(spec: PredictorSpec, path) -> None:
    """Serialize a spec to JSON (weights row-major, exact decimals)."""
    doc: dict = {
        "kind": spec.kind,
        "P": spec.past_horizon,
        "F": spec.future_horizon,
        "dt_hint": spec.dt_hint,
    }
    if spec.kind == "mlp":
        doc["layers"] = [
            {
                "rows": layer.weight.shape[0],
                "cols": layer.weight.shape[1],
                "weights": [float(w) for w in layer.weight.reshape(-1)],
                "bias": [float(b) for b in layer.bias],
            }
            for layer in spec.layers
        ]
    Path(path).write_text(json.dumps(doc) + "\n")


def _require(doc: dict, key: str, where: str = ""):
    if key not in doc:
        raise PredictorSchemaError(f"missing field {where}{key!r}")
    return doc[key]


def load_predictor(path) -> PredictorSpec:
    """Load a spec saved by :func:`save_predictor`, validating the schema."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PredictorSchemaError(f"not valid JSON: {exc.msg}") from exc
    kind = _require(doc, "kind")
    if kind not in KINDS:
        raise PredictorSchemaError(f"field 'kind': unknown predictor kind {kind!r}")
    p = _require(doc, "P")
    f = _require(doc, "F")
    dt_hint = doc.get("dt_hint")
    layers = []
    if kind == "mlp":
        raw_layers = _require(doc, "layers")
        for i, raw in enumerate(raw_layers):
            where = f"layers[{i}]."
            rows = _require(raw, "rows", where)
            cols = _require(raw, "cols", where)
            weights = _require(raw, "weights", where)
            bias = _require(raw, "bias", where)
            if len(weights) != rows * cols:
                raise PredictorSchemaError(
                    f"field 'layers[{i}].weights': got {len(weights)} values, "
                    f"expected rows*cols = {rows * cols}"
                )
            if len(bias) != rows:
                raise PredictorSchemaError(
                    f"field 'layers[{i}].bias': got {len(bias)} values, expected rows = {rows}"
                )
            layers.append(Layer(np.array(weights, dtype=float).reshape(rows, cols), np.array(bias, dtype=float)))
    try:
        return PredictorSpec(kind, p, f, tuple(layers), dt_hint=dt_hint)
    except ValueError as exc:
        raise PredictorSchemaError(str(exc)) from exc
