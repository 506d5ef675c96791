"""Feedforward ReLU classifiers: representation, persistence, evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, InputError, ModelFileError, StructuralError

ACTIVATIONS = ("relu", "identity")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Layer:
    """Affine map followed by an activation.

    ``weights[r, c]`` multiplies input component ``c`` into output ``r``.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.bias)
        if w.ndim != 2:
            raise StructuralError(f"weights must be a matrix, got shape {w.shape}")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise StructuralError(
                f"bias length {b.shape} does not match weight rows {w.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise StructuralError(f"unsupported activation {self.activation!r}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise StructuralError("non-finite weight or bias")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        return (
            self.activation == other.activation
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable layered classifier with argmax readout.

    Hidden layers use ReLU, the final layer is the identity, and its output
    dimension is the number of classes.
    """

    layers: tuple[Layer, ...]
    input_dim: int
    class_count: int
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise StructuralError("network has no layers")
        if self.input_dim < 1:
            raise StructuralError("input_dim must be positive")
        if self.class_count < 2:
            raise StructuralError("class_count must be at least 2")
        prev = self.input_dim
        for k, layer in enumerate(layers):
            if layer.in_dim != prev:
                raise StructuralError(
                    f"layer {k} expects {layer.in_dim} inputs, previous layer gives {prev}"
                )
            last = k == len(layers) - 1
            if last and layer.activation != "identity":
                raise StructuralError("final layer activation must be identity")
            if not last and layer.activation != "relu":
                raise StructuralError(f"hidden layer {k} activation must be relu")
            prev = layer.out_dim
        if prev != self.class_count:
            raise StructuralError(
                f"final layer has {prev} outputs but class_count is {self.class_count}"
            )
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in dict(self.meta).items()})

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.input_dim == other.input_dim
            and self.class_count == other.class_count
            and self.layers == other.layers
            and dict(self.meta) == dict(other.meta)
        )

    @classmethod
    def from_arrays(cls, weights: Sequence, biases: Sequence, meta=None) -> "Network":
        """Build a network with ReLU hidden layers and an identity output layer."""
        layers = []
        for k, (w, b) in enumerate(zip(weights, biases)):
            act = "identity" if k == len(weights) - 1 else "relu"
            layers.append(Layer(w, b, act))
        w0 = np.asarray(weights[0])
        return cls(tuple(layers), int(w0.shape[1]), int(np.asarray(weights[-1]).shape[0]), meta or {})

    def with_meta(self, **extra) -> "Network":
        meta = dict(self.meta)
        meta.update({k: str(v) for k, v in extra.items()})
        return Network(self.layers, self.input_dim, self.class_count, meta)


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    label: int


def forward_batch(net: Network, X) -> np.ndarray:
    """Logits for each row of ``X`` (shape ``(m, input_dim)``)."""
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise StructuralError(f"expected inputs of width {net.input_dim}, got shape {h.shape}")
    for layer in net.layers:
        h = h @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def predict_labels(net: Network, X) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index.
    return np.argmax(forward_batch(net, X), axis=1)


def forward(net: Network, x) -> Prediction:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise StructuralError(f"expected a vector of length {net.input_dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise InputError("input contains non-finite values")
    logits = forward_batch(net, x[None, :])[0]
    logits.setflags(write=False)
    return Prediction(logits=logits, label=int(np.argmax(logits)))


# -- persistence -------------------------------------------------------------

def model_to_dict(net: Network) -> dict:
    return {
        "input_dim": net.input_dim,
        "class_count": net.class_count,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
        "meta": dict(sorted(net.meta.items())),
    }


def dumps_model(net: Network) -> str:
    return json.dumps(model_to_dict(net), indent=1) + "\n"


def save_model(net: Network, path) -> None:
    Path(path).write_text(dumps_model(net), encoding="utf-8")


def _real_matrix(value, where):
    if not isinstance(value, list) or not value:
        raise ModelFileError(f"{where}: expected a non-empty list of rows")
    width = None
    for r, row in enumerate(value):
        if not isinstance(row, list):
            raise ModelFileError(f"{where}[{r}]: expected a list")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ModelFileError(f"{where}[{r}]: ragged row")
        for c, v in enumerate(row):
            _real(v, f"{where}[{r}][{c}]")
    return value


def _real(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelFileError(f"{where}: expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ModelFileError(f"{where}: non-finite value")
    return float(v)


def model_from_dict(doc) -> Network:
    if not isinstance(doc, dict):
        raise ModelFileError("model file must be a JSON object")
    for key in ("input_dim", "class_count", "layers"):
        if key not in doc:
            raise ModelFileError(f"missing field {key!r}")
    input_dim, class_count = doc["input_dim"], doc["class_count"]
    for key, v in (("input_dim", input_dim), ("class_count", class_count)):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ModelFileError(f"{key}: expected an integer")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise ModelFileError("layers: expected a non-empty list")
    layers = []
    for k, spec in enumerate(doc["layers"]):
        where = f"layers[{k}]"
        if not isinstance(spec, dict):
            raise ModelFileError(f"{where}: expected an object")
        for key in ("weights", "bias", "activation"):
            if key not in spec:
                raise ModelFileError(f"{where}: missing field {key!r}")
        act = spec["activation"]
        if act not in ACTIVATIONS:
            raise ModelFileError(f"{where}.activation: unsupported activation {act!r}")
        w = _real_matrix(spec["weights"], f"{where}.weights")
        b = spec["bias"]
        if not isinstance(b, list):
            raise ModelFileError(f"{where}.bias: expected a list")
        b = [_real(v, f"{where}.bias[{i}]") for i, v in enumerate(b)]
        if len(b) != len(w):
            raise ModelFileError(
                f"{where}.bias: length {len(b)} does not match {len(w)} weight rows"
            )
        layers.append(Layer(w, b, act))
    meta = doc.get("meta", {})
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise ModelFileError("meta: expected an object of string values")
    try:
        return Network(tuple(layers), input_dim, class_count, meta)
    except StructuralError as exc:
        raise ModelFileError(f"dimension inconsistency: {exc}") from exc


def load_model(path) -> Network:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return model_from_dict(doc)
    except ModelFileError as exc:
        raise ModelFileError(f"{path}: {exc}") from exc


# -- validation against a test set -------------------------------------------

@dataclass(frozen=True)
class ValidationSummary:
    correct: int
    total: int
    class_correct: tuple[int, ...]
    class_total: tuple[int, ...]
    misclassified: tuple[str, ...]

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    @property
    def class_accuracy(self) -> tuple[float | None, ...]:
        return tuple(c / t if t else None for c, t in zip(self.class_correct, self.class_total))

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "class_accuracy": list(self.class_accuracy),
            "class_correct": list(self.class_correct),
            "class_total": list(self.class_total),
            "misclassified": list(self.misclassified),
        }


def validate_model(net: Network, test) -> ValidationSummary:
    """Compare the network's classification of each test row with its label."""
    if len(test) == 0:
        raise DataError("cannot validate against an empty test set")
    if test.n_features != net.input_dim:
        raise StructuralError(
            f"test set has {test.n_features} features, network expects {net.input_dim}"
        )
    pred = predict_labels(net, test.X)
    hit = pred == test.y
    C = net.class_count
    class_total = np.bincount(test.y, minlength=C)
    class_correct = np.bincount(test.y[hit], minlength=C)
    return ValidationSummary(
        correct=int(hit.sum()),
        total=len(test),
        class_correct=tuple(int(v) for v in class_correct[:C]),
        class_total=tuple(int(v) for v in class_total[:C]),
        misclassified=tuple(i for i, h in zip(test.ids, hit) if not h),
    )
