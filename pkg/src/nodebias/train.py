"""Full-batch gradient-descent training of single-hidden-layer ReLU nets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .errors import ConfigError, DataError, TrainingDivergedError
from .model import Layer, Network, ValidationSummary, forward_batch, predict_labels
from .rng import SplitMix64


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 10
    learning_rate: float = 0.05
    epochs: int = 2000
    seed: int = 0
    early_stop_at_train_accuracy: float = 1.0
    l2: float = 0.0

    def __post_init__(self):
        if self.hidden_width < 1:
            raise ConfigError("hidden_width must be positive")
        # lr == 0 is allowed: it leaves the initial parameters untouched.
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be a non-negative finite number")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if not 0.0 < self.early_stop_at_train_accuracy <= 1.0:
            raise ConfigError("early_stop_at_train_accuracy must lie in (0, 1]")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def he_uniform_init(n_in: int, hidden: int, n_out: int, seed: int):
    """Initial weights from SplitMix64(seed): hidden layer first, then
    output layer, each row-major, ``w = (2u - 1) * sqrt(6 / fan_in)``.
    Biases start at zero."""
    gen = SplitMix64(seed)
    params = []
    for fan_in, fan_out in ((n_in, hidden), (hidden, n_out)):
        limit = math.sqrt(6.0 / fan_in)
        u = np.array(gen.uniforms(fan_in * fan_out)).reshape(fan_out, fan_in)
        params.append(((2.0 * u - 1.0) * limit, np.zeros(fan_out)))
    return params


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params, X, y, l2=0.0):
    """Mean softmax cross-entropy (+ ``l2/2 * ||W||^2``) and its gradient.

    ``params`` is ``[(W1, b1), (W2, b2)]``; the gradient has the same shape.
    """
    (W1, b1), (W2, b2) = params
    X = np.asarray(X, dtype=np.float64)
    m = X.shape[0]
    pre = X @ W1.T + b1
    h = np.maximum(pre, 0.0)
    z = h @ W2.T + b2
    logp = _log_softmax(z)
    loss = -logp[np.arange(m), y].mean()
    if l2:
        loss += 0.5 * l2 * ((W1 ** 2).sum() + (W2 ** 2).sum())
    dz = np.exp(logp)
    dz[np.arange(m), y] -= 1.0
    dz /= m
    dW2 = dz.T @ h
    db2 = dz.sum(axis=0)
    dh = (dz @ W2) * (pre > 0)
    dW1 = dh.T @ X
    db1 = dh.sum(axis=0)
    if l2:
        dW1 = dW1 + l2 * W1
        dW2 = dW2 + l2 * W2
    return float(loss), [(dW1, db1), (dW2, db2)]


def _fit_params(X, y, n_classes, cfg: TrainConfig, history=None):
    params = he_uniform_init(X.shape[1], cfg.hidden_width, n_classes, cfg.seed)
    epochs_run = 0
    for epoch in range(cfg.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grad(params, X, y, cfg.l2)
        if not math.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        if history is not None:
            history.append(loss)
        (W1, b1), (W2, b2) = params
        h = np.maximum(X @ W1.T + b1, 0.0)
        acc = float(np.mean(np.argmax(h @ W2.T + b2, axis=1) == y))
        if acc >= cfg.early_stop_at_train_accuracy:
            break
        params = [(W - cfg.learning_rate * gW, b - cfg.learning_rate * gb)
                  for (W, b), (gW, gb) in zip(params, grads)]
        epochs_run = epoch + 1
    for W, b in params:
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise TrainingDivergedError(epochs_run, float("nan"))
    return params, epochs_run


def _network(params, meta) -> Network:
    (W1, b1), (W2, b2) = params
    return Network(
        (Layer(W1, b1, "relu"), Layer(W2, b2, "identity")),
        W1.shape[1],
        W2.shape[0],
        meta,
    )


def train_one(train: Dataset, cfg: TrainConfig, history: list | None = None) -> Network:
    """Train on an already-normalised dataset.

    Stops after ``cfg.epochs`` steps or as soon as training accuracy reaches
    ``cfg.early_stop_at_train_accuracy``. Pass a list as ``history`` to
    collect the loss at every epoch.
    """
    counts = train.class_counts()
    if (counts < 1).any():
        raise DataError("every class needs at least one training row")
    params, epochs_run = _fit_params(train.X, train.y, train.n_classes, cfg, history)
    meta = {
        "seed": str(cfg.seed),
        "dataset_fingerprint": train.fingerprint(),
        "hidden_width": str(cfg.hidden_width),
        "epochs_run": str(epochs_run),
        "class_names": ",".join(train.class_names),
        "feature_names": ",".join(train.feature_names),
    }
    net = _network(params, meta)
    acc = float(np.mean(predict_labels(net, train.X) == train.y))
    return net.with_meta(train_accuracy=repr(acc))


@dataclass(frozen=True)
class Run:
    seed: int
    network: Network
    validation: ValidationSummary | None = None


@dataclass(frozen=True)
class RunSet:
    runs: tuple[Run, ...]
    dataset_fingerprint: str
    config: TrainConfig
    regime: str = "full"

    def __len__(self):
        return len(self.runs)

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(r.seed for r in self.runs)

    @property
    def networks(self) -> tuple[Network, ...]:
        return tuple(r.network for r in self.runs)


def train_runs(
    train: Dataset,
    cfg: TrainConfig,
    seeds: Sequence[int],
    resample: Callable[[Dataset, int], Dataset] | None = None,
    regime: str = "full",
) -> RunSet:
    """One network per seed, in sorted seed order.

    ``resample(train, seed)``, when given, derives the dataset actually used
    for that seed (for example a freshly truncated copy).
    """
    seeds = sorted(seeds)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    runs = []
    for s in seeds:
        ds = resample(train, s) if resample is not None else train
        runs.append(Run(s, train_one(ds, replace(cfg, seed=s))))
    return RunSet(tuple(runs), train.fingerprint(), cfg, regime)


class ReluNetClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn front end for the single-hidden-layer trainer.

    The fitted network is available as ``network_``.
    """

    def __init__(self, hidden_width=10, learning_rate=0.05, epochs=2000,
                 random_state=0, early_stop_at_train_accuracy=1.0, l2=0.0):
        self.hidden_width = hidden_width
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.random_state = random_state
        self.early_stop_at_train_accuracy = early_stop_at_train_accuracy
        self.l2 = l2

    def _config(self) -> TrainConfig:
        return TrainConfig(
            hidden_width=self.hidden_width,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=int(self.random_state or 0),
            early_stop_at_train_accuracy=self.early_stop_at_train_accuracy,
            l2=self.l2,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise DataError("need at least two classes, got 1 class")
        y_idx = np.searchsorted(self.classes_, y)
        params, self.n_iter_ = _fit_params(X, y_idx, len(self.classes_), self._config())
        self.network_ = _network(params, {"seed": str(self.random_state)})
        self.n_features_in_ = X.shape[1]
        return self

    def _logits(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} features, but {type(self).__name__} "
                            f"is expecting {self.n_features_in_} features as input")
        return forward_batch(self.network_, X)

    def decision_function(self, X):
        """Logits; for two classes, the class-1 minus class-0 margin."""
        z = self._logits(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def predict_proba(self, X):
        return np.exp(_log_softmax(self._logits(X)))

    def predict(self, X):
        z = self._logits(X)
        return self.classes_[np.argmax(z, axis=1)]
