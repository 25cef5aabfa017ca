"""From-scratch dense softmax classifier: forward pass, cross-entropy,
backpropagation, and Adam updates.

All math runs in float64 numpy. Hidden layers use ReLU, the final layer is
always softmax. Initialization and training are fully deterministic given
their seeds, so two runs with the same inputs produce bit-identical weights.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError
from .rng import rng_from

WEIGHTS_FORMAT_VERSION = 1

RELU = "relu"
SOFTMAX = "softmax"


@dataclass(frozen=True)
class LayerSpec:
    """Shape and activation of one dense layer."""

    input_dim: int
    output_dim: int
    activation: str


def make_layer_specs(input_dim: int, n_classes: int, hidden: list[int]) -> list[LayerSpec]:
    """Layer chain input_dim -> hidden... -> n_classes with a softmax head."""
    dims = [input_dim, *hidden, n_classes]
    last = len(dims) - 2
    return [
        LayerSpec(dims[i], dims[i + 1], SOFTMAX if i == last else RELU)
        for i in range(len(dims) - 1)
    ]


def validate_layer_specs(specs: list[LayerSpec]) -> None:
    if not specs:
        raise ConfigurationError("network needs at least one layer")
    for i, spec in enumerate(specs):
        if spec.input_dim < 1 or spec.output_dim < 1:
            raise ConfigurationError(f"layer {i}: dimensions must be >= 1, got {spec}")
        want = SOFTMAX if i == len(specs) - 1 else RELU
        if spec.activation != want:
            raise ConfigurationError(
                f"layer {i}: activation must be '{want}' (softmax exactly on the final layer)"
            )
    for i, (a, b) in enumerate(zip(specs, specs[1:])):
        if a.output_dim != b.input_dim:
            raise ConfigurationError(
                f"layers {i} and {i + 1} do not chain: {a.output_dim} != {b.input_dim}"
            )


@dataclass
class LayerParams:
    """Dense layer parameters: weights is (output_dim, input_dim), bias is (output_dim,)."""

    weights: np.ndarray
    bias: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy())


@dataclass
class ModelWeights:
    """Ordered dense layer parameters plus a monotone version counter."""

    layers: list[LayerParams]
    version: int = 0

    def copy(self) -> "ModelWeights":
        return ModelWeights([layer.copy() for layer in self.layers], self.version)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weights.shape[0]

    def specs(self) -> list[LayerSpec]:
        last = len(self.layers) - 1
        return [
            LayerSpec(l.weights.shape[1], l.weights.shape[0], SOFTMAX if i == last else RELU)
            for i, l in enumerate(self.layers)
        ]

    def all_finite(self) -> bool:
        return all(
            np.isfinite(l.weights).all() and np.isfinite(l.bias).all() for l in self.layers
        )


@dataclass
class AdamState:
    """Adam optimizer state; moment shapes mirror the model they belong to."""

    first_moment: list[LayerParams]
    second_moment: list[LayerParams]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_model(
        cls,
        weights: ModelWeights,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        def zeros() -> list[LayerParams]:
            return [
                LayerParams(np.zeros_like(l.weights), np.zeros_like(l.bias))
                for l in weights.layers
            ]

        return cls(zeros(), zeros(), 0, learning_rate, beta1, beta2, epsilon)


@dataclass(frozen=True)
class Prediction:
    """Class probabilities with the argmax pulled out (ties go to the lowest index)."""

    probabilities: np.ndarray
    top_class: int
    top_prob: float

    @classmethod
    def from_probabilities(cls, probs: np.ndarray) -> "Prediction":
        top = int(np.argmax(probs))
        return cls(probs, top, float(probs[top]))


def build_network(
    input_dim: int, n_classes: int, hidden: list[int], seed: int
) -> ModelWeights:
    """New network with He-uniform weights (bound sqrt(6/fan_in)) and zero biases."""
    if input_dim < 1:
        raise ConfigurationError(f"input_dim must be >= 1, got {input_dim}")
    if n_classes < 2:
        raise ConfigurationError(f"n_classes must be >= 2, got {n_classes}")
    if not hidden or any(h < 1 for h in hidden):
        raise ConfigurationError(f"hidden layer sizes must be a non-empty list of counts, got {hidden}")
    specs = make_layer_specs(input_dim, n_classes, list(hidden))
    validate_layer_specs(specs)
    rng = rng_from(seed) if isinstance(seed, int) else rng_from(*seed)
    layers = []
    for spec in specs:
        bound = math.sqrt(6.0 / spec.input_dim)
        w = rng.uniform(-bound, bound, size=(spec.output_dim, spec.input_dim))
        layers.append(LayerParams(w, np.zeros(spec.output_dim)))
    return ModelWeights(layers=layers, version=0)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_full(weights: ModelWeights, x: np.ndarray):
    """All pre-activations and activations, for backprop. x is (batch, input_dim)."""
    pre = []
    activations = [x]
    a = x
    last = weights.n_layers - 1
    for i, layer in enumerate(weights.layers):
        z = a @ layer.weights.T + layer.bias
        pre.append(z)
        a = _softmax(z) if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return pre, activations


def forward_batch(weights: ModelWeights, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of feature vectors, shape (batch, n_classes)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != weights.input_dim:
        raise ShapeError(
            f"expected features of dim {weights.input_dim}, got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise NumericError("non-finite feature values")
    _, activations = _forward_full(weights, x)
    return activations[-1]


def forward(weights: ModelWeights, features: np.ndarray) -> Prediction:
    """Classify one feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ShapeError(f"expected a 1-d feature vector, got shape {features.shape}")
    probs = forward_batch(weights, features[None, :])[0]
    return Prediction.from_probabilities(probs)


def _as_arrays(batch_data, n_classes: int):
    x = np.asarray([np.asarray(f, dtype=np.float64) for f, _ in batch_data])
    y = np.asarray([int(label) for _, label in batch_data])
    if y.min() < 0 or y.max() >= n_classes:
        raise ConfigurationError(
            f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]"
        )
    return x, y


def _loss_and_gradients(weights: ModelWeights, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradients w.r.t. every parameter."""
    pre, activations = _forward_full(weights, x)
    z_out = pre[-1]
    m = z_out.max(axis=1)
    lse = m + np.log(np.exp(z_out - m[:, None]).sum(axis=1))
    loss = float(np.mean(lse - z_out[np.arange(len(y)), y]))

    batch = len(y)
    delta = activations[-1].copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grads: list[LayerParams] = [None] * weights.n_layers  # type: ignore[list-item]
    for i in range(weights.n_layers - 1, -1, -1):
        grads[i] = LayerParams(delta.T @ activations[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ weights.layers[i].weights) * (pre[i - 1] > 0)
    return loss, grads


def compute_gradients(weights: ModelWeights, batch_data) -> list[LayerParams]:
    """Gradients of the mean cross-entropy over the batch, mirroring the weights."""
    x, y = _as_arrays(batch_data, weights.n_classes)
    if x.shape[1] != weights.input_dim:
        raise ShapeError(
            f"expected features of dim {weights.input_dim}, got {x.shape[1]}"
        )
    _, grads = _loss_and_gradients(weights, x, y)
    return grads


def evaluate_loss(weights: ModelWeights, batch_data) -> float:
    """Mean cross-entropy of the batch under the current weights."""
    x, y = _as_arrays(batch_data, weights.n_classes)
    loss, _ = _loss_and_gradients(weights, x, y)
    return loss


def _adam_step(weights: ModelWeights, adam: AdamState, grads: list[LayerParams]) -> None:
    adam.step_count += 1
    t = adam.step_count
    b1, b2 = adam.beta1, adam.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for layer, m, v, g in zip(weights.layers, adam.first_moment, adam.second_moment, grads):
        for attr in ("weights", "bias"):
            gm = getattr(g, attr)
            mm = getattr(m, attr)
            vv = getattr(v, attr)
            mm *= b1
            mm += (1.0 - b1) * gm
            vv *= b2
            vv += (1.0 - b2) * gm**2
            m_hat = mm / bias1
            v_hat = vv / bias2
            param = getattr(layer, attr)
            param -= adam.learning_rate * m_hat / (np.sqrt(v_hat) + adam.epsilon)


def train(
    weights: ModelWeights,
    adam: AdamState,
    batch_data,
    epochs: int,
    batch_size: int,
    rng_seed: int = 0,
) -> tuple[ModelWeights, AdamState]:
    """Adam on mean cross-entropy, shuffling once per epoch with a seeded rng.

    Mutates and returns the given weights and optimizer state. The trailing
    batch of an epoch may be smaller than batch_size. An empty batch is a
    warned no-op; a non-finite loss raises NumericError.
    """
    if not batch_data:
        warnings.warn("train called with no data; weights unchanged", stacklevel=2)
        return weights, adam
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    x, y = _as_arrays(batch_data, weights.n_classes)
    if x.shape[1] != weights.input_dim:
        raise ShapeError(f"expected features of dim {weights.input_dim}, got {x.shape[1]}")
    rng = rng_from(rng_seed) if isinstance(rng_seed, int) else rng_from(*rng_seed)
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = _loss_and_gradients(weights, x[idx], y[idx])
            if not math.isfinite(loss):
                raise NumericError(f"training loss became non-finite ({loss})")
            _adam_step(weights, adam, grads)
    if not weights.all_finite():
        raise NumericError("non-finite parameters after training")
    return weights, adam


def save_weights(weights: ModelWeights, path) -> None:
    """Write weights to .npz (exact binary round-trip) or .json by suffix."""
    path = Path(path)
    if path.suffix == ".npz":
        arrays = {
            "meta": np.array(
                [WEIGHTS_FORMAT_VERSION, weights.version, weights.n_layers], dtype=np.int64
            )
        }
        for i, layer in enumerate(weights.layers):
            arrays[f"w{i}"] = layer.weights
            arrays[f"b{i}"] = layer.bias
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    elif path.suffix == ".json":
        doc = {
            "format": WEIGHTS_FORMAT_VERSION,
            "version": weights.version,
            "layers": [
                {"weights": l.weights.tolist(), "bias": l.bias.tolist()}
                for l in weights.layers
            ],
        }
        path.write_text(json.dumps(doc))
    else:
        raise ConfigurationError(f"unsupported weights file suffix: {path.suffix}")


def load_weights(path) -> ModelWeights:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            fmt, version, n_layers = (int(v) for v in data["meta"])
            if fmt != WEIGHTS_FORMAT_VERSION:
                raise ConfigurationError(f"unknown weights format version {fmt}")
            layers = [
                LayerParams(np.array(data[f"w{i}"]), np.array(data[f"b{i}"]))
                for i in range(n_layers)
            ]
        return ModelWeights(layers, version)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("format") != WEIGHTS_FORMAT_VERSION:
            raise ConfigurationError(f"unknown weights format version {doc.get('format')}")
        layers = [
            LayerParams(np.asarray(l["weights"], dtype=np.float64), np.asarray(l["bias"], dtype=np.float64))
            for l in doc["layers"]
        ]
        return ModelWeights(layers, int(doc["version"]))
    raise ConfigurationError(f"unsupported weights file suffix: {path.suffix}")
