"""Fully connected ReLU network with a linear output, trained by minibatch ADAM.

Everything is plain numpy in float64. Weight matrices are stored as
``(fan_out, fan_in)`` so a layer maps ``a -> W @ a + b``; batches are handled
row-wise as ``A @ W.T + b``.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from coolrom.errors import DivergenceError, ParseError, ValidationError

MODEL_FORMAT = "coolrom-mlp"
MODEL_VERSION = 1


@dataclass
class Mlp:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or self.layer_dims[-1] != 1:
            raise ValidationError(f"layer_dims must end in a single output, got {self.layer_dims}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValidationError("one weight matrix and bias vector per layer transition expected")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i + 1], self.layer_dims[i])
            if W.shape != shape or b.shape != (shape[0],):
                raise ValidationError(f"layer {i}: weight {W.shape}/bias {b.shape}, expected {shape}")

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "Mlp":
        dims = tuple(layer_dims)
        return cls(
            dims,
            [np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1)],
            [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)],
        )

    def copy(self) -> "Mlp":
        return Mlp(self.layer_dims, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for W, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(W, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        self.feature_names = tuple(self.feature_names)
        if not (self.mean.shape == self.std.shape == (len(self.feature_names),)):
            raise ValidationError("scaler mean/std/feature_names lengths differ")
        if not np.all(self.std > 0):
            bad = [n for n, s in zip(self.feature_names, self.std) if not s > 0]
            raise ValidationError(f"constant feature(s) cannot be standardized: {bad}")


@dataclass(frozen=True)
class HyperParams:
    n_hidden_layers: int = 4
    neurons_per_layer: int = 408
    alpha_l2: float = 0.1
    minibatch_size: int = 4096
    epochs: int = 150
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_hidden_layers", "neurons_per_layer", "minibatch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not self.alpha_l2 >= 0:
            raise ValidationError("alpha_l2 must be >= 0")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")


@dataclass
class TrainReport:
    train_cost: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    val_mae_std: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    checksum: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.train_cost)


# ---------------------------------------------------------------------------
# Forward pass, cost, gradient


def _as_batch(model: Mlp, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise ValidationError(f"input has {X.shape[-1]} features, model expects {model.layer_dims[0]}")
    return X


def _activations(model: Mlp, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ W.T + b
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts


def predict(model: Mlp, X) -> np.ndarray:
    """Network output for each row of ``X``; shape ``(n,)``."""
    return _activations(model, _as_batch(model, X))[-1][:, 0]


def forward(model: Mlp, x) -> float:
    """Scalar output for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("forward takes a single feature vector; use predict for batches")
    return float(predict(model, x)[0])


def _normalized_weights(sample_weights, n):
    if sample_weights is None:
        return None
    w = np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (n,) or not np.all(w >= 0) or not w.sum() > 0:
        raise ValidationError("sample weights must be non-negative, one per sample, not all zero")
    return w * (n / w.sum())


def cost(model: Mlp, X, y, alpha_l2: float, sample_weights=None) -> float:
    """Half mean squared error plus ``alpha/2 * sum(w^2)`` over weights (biases not penalized)."""
    X = _as_batch(model, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) == 0:
        raise ValidationError("cost of an empty batch is undefined")
    if len(y) != len(X):
        raise ValidationError("feature and target lengths differ")
    r = y - predict(model, X)
    sq = r * r
    w = _normalized_weights(sample_weights, len(X))
    if w is not None:
        sq = sq * w
    penalty = 0.5 * alpha_l2 * sum(float(np.sum(W * W)) for W in model.weights)
    return float(np.sum(sq)) / (2 * len(X)) + penalty


def backprop(model: Mlp, X, y, alpha_l2: float, sample_weights=None) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradient of :func:`cost` w.r.t. weights and biases.

    ReLU's derivative at exactly zero is taken as 0.
    """
    X = _as_batch(model, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = len(X)
    if m == 0:
        raise ValidationError("gradient of an empty batch is undefined")
    if len(y) != m:
        raise ValidationError("feature and target lengths differ")
    acts = _activations(model, X)
    delta = (acts[-1][:, 0] - y) / m
    w = _normalized_weights(sample_weights, m)
    if w is not None:
        delta = delta * w
    delta = delta[:, None]
    n_layers = len(model.weights)
    grad_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = delta.T @ acts[i] + alpha_l2 * model.weights[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (acts[i] > 0)
    return grad_w, grad_b


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, t: int, hp: HyperParams):
    """One bias-corrected ADAM update; returns ``(new_params, new_state)``."""
    if t < 1:
        raise ValidationError("ADAM step index starts at 1")
    b1, b2 = hp.adam_beta1, hp.adam_beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - hp.learning_rate * (m / c1) / (np.sqrt(v / c2) + hp.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def _adam_inplace(params, grads, state: AdamState, hp: HyperParams) -> None:
    state.t += 1
    b1, b2 = hp.adam_beta1, hp.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    step = hp.learning_rate / c1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step * m / (np.sqrt(v / c2) + hp.adam_eps)


# ---------------------------------------------------------------------------
# Standardization


def fit_scaler(X, feature_names: Sequence[str]) -> ScalerParams:
    """Per-feature mean and population standard deviation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValidationError("scaler needs a non-empty 2-D feature matrix")
    if X.shape[1] != len(feature_names):
        raise ValidationError("feature matrix width does not match feature_names")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # relative guard: a column that only varies by rounding is constant
    constant = std <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    if np.any(constant):
        bad = [n for n, c in zip(feature_names, constant) if c]
        raise ValidationError(f"constant feature(s) cannot be standardized: {bad}")
    return ScalerParams(mean, std, tuple(feature_names))


def transform(scaler: ScalerParams, X) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - scaler.mean) / scaler.std


def inverse_transform(scaler: ScalerParams, X) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) * scaler.std + scaler.mean


# ---------------------------------------------------------------------------
# Training


def init_mlp(layer_dims: Sequence[int], rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases)


def _abs_error_stats(model, X, y):
    err = np.abs(y - predict(model, X))
    return float(err.mean()), float(err.std())


def train(
    X_train,
    y_train,
    X_val,
    y_val,
    hp: HyperParams,
    feature_names: Sequence[str],
    sample_weights=None,
    log=None,
) -> tuple[Mlp, ScalerParams, TrainReport]:
    """Fit scaler and network on the training split, reporting validation MAE per epoch.

    Inputs are raw (unscaled) feature matrices. The output bias starts at the
    (weighted) mean training target so the linear head does not have to
    travel hundreds of kelvin from zero. Minibatches are reshuffled every
    epoch; the final partial batch is kept.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64).reshape(-1)
    if len(X_train) == 0 or len(X_train) != len(y_train):
        raise ValidationError("training set is empty or features/targets differ in length")
    scaler = fit_scaler(X_train, feature_names)
    Xs = transform(scaler, X_train)
    has_val = X_val is not None and len(X_val) > 0
    if has_val:
        Xv = transform(scaler, X_val)
        yv = np.asarray(y_val, dtype=np.float64).reshape(-1)
    w_all = _normalized_weights(sample_weights, len(Xs))

    rng = np.random.default_rng(hp.rng_seed)
    dims = (Xs.shape[1],) + (hp.neurons_per_layer,) * hp.n_hidden_layers + (1,)
    model = init_mlp(dims, rng)
    model.biases[-1][0] = float(np.average(y_train, weights=w_all))
    report = TrainReport()
    params = model.weights + model.biases
    state = AdamState.like(params)
    n = len(Xs)
    bs = hp.minibatch_size

    # overflow on a diverging run is caught by the finite-cost check below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                wb = None if w_all is None else w_all[idx]
                gw, gb = backprop(model, Xs[idx], y_train[idx], hp.alpha_l2, wb)
                _adam_inplace(params, gw + gb, state, hp)
            J = cost(model, Xs, y_train, hp.alpha_l2, w_all)
            if not math.isfinite(J) or not all(np.all(np.isfinite(p)) for p in params):
                report.train_cost.append(J)
                raise DivergenceError(f"training cost became non-finite at epoch {epoch + 1}", report=report)
            report.train_cost.append(J)
            if has_val:
                mae, sd = _abs_error_stats(model, Xv, yv)
                report.val_mae.append(mae)
                report.val_mae_std.append(sd)
            report.epoch_seconds.append(time.perf_counter() - t0)
            if log is not None:
                log(epoch + 1, report)
    report.checksum = model.checksum()
    return model, scaler, report


# ---------------------------------------------------------------------------
# Serialization


def _payload(model: Mlp, scaler: ScalerParams) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "feature_names": list(scaler.feature_names),
        "scaler_mean": scaler.mean.tolist(),
        "scaler_std": scaler.std.tolist(),
        "layer_dims": list(model.layer_dims),
        "hidden_activation": model.hidden_activation,
        "output_activation": model.output_activation,
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def _content_checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def dumps_model(model: Mlp, scaler: ScalerParams) -> str:
    payload = _payload(model, scaler)
    payload["checksum"] = _content_checksum(payload)
    return json.dumps(payload, indent=1)


def loads_model(text: str) -> tuple[Mlp, ScalerParams]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise ParseError("not a coolrom model file")
    if payload.get("version") != MODEL_VERSION:
        raise ParseError(f"unsupported model version {payload.get('version')!r}, expected {MODEL_VERSION}")
    stored = payload.pop("checksum", None)
    if stored != _content_checksum(payload):
        raise ParseError("model checksum mismatch")
    try:
        model = Mlp(
            tuple(payload["layer_dims"]),
            [np.array(W, dtype=np.float64) for W in payload["weights"]],
            [np.array(b, dtype=np.float64) for b in payload["biases"]],
            payload["hidden_activation"],
            payload["output_activation"],
        )
        scaler = ScalerParams(payload["scaler_mean"], payload["scaler_std"], payload["feature_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model file: {exc}") from None
    if model.hidden_activation != "relu" or model.output_activation != "identity":
        raise ParseError("only relu hidden / identity output networks are supported")
    if model.layer_dims[0] != len(scaler.feature_names):
        raise ParseError("scaler and network input widths differ")
    return model, scaler


def save_model(model: Mlp, scaler: ScalerParams, path) -> None:
    Path(path).write_text(dumps_model(model, scaler))


def load_model(path) -> tuple[Mlp, ScalerParams]:
    return loads_model(Path(path).read_text())


def with_seed(hp: HyperParams, seed: int) -> HyperParams:
    return replace(hp, rng_seed=seed)
