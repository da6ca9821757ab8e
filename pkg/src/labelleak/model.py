"""Feedforward rectifier classifier with exact manual backpropagation.

The network is ``x -> relu(W1 x + b1) -> ... -> W_L h + b_L -> softmax``.
Only the final affine layer is visible to the attacks; everything before it
merely shapes the penultimate features ``h``.
"""

import copy
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from .exceptions import DomainError, NumericError, SizeError
from .numerics import make_rng, softmax
from .validation import check_count

CHECKPOINT_FORMAT = "labelleak.model/1"


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    hidden_dims: tuple
    class_count: int
    final_layer_has_bias: bool = True
    init_gain: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.class_count < 2:
            raise DomainError("need at least two classes")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise DomainError("layer widths must be positive")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.class_count)

    @property
    def penultimate_dim(self):
        return self.layer_dims[-2]


@dataclass
class Model:
    """Layer parameters. ``biases[-1]`` is ``None`` for a bias-free final layer."""

    arch: ModelArch
    weights: list
    biases: list
    trained_epochs: int = 0
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        dims = self.arch.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise SizeError("layer count does not match the architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]):
                raise SizeError(f"layer {i} weight has shape {w.shape}, expected {(dims[i + 1], dims[i])}")
            if b is None:
                if i != len(dims) - 2 or self.arch.final_layer_has_bias:
                    raise SizeError(f"layer {i} is missing its bias")
            elif b.shape != (dims[i + 1],):
                raise SizeError(f"layer {i} bias has shape {b.shape}")

    @property
    def final_layer(self):
        return self.weights[-1], self.biases[-1]

    @property
    def n_params(self):
        return sum(w.size + (0 if b is None else b.size) for w, b in zip(self.weights, self.biases))

    def clone(self):
        return copy.deepcopy(self)


@dataclass(frozen=True)
class GradientUpdate:
    """What a client shares: the final-layer gradients and its batch size.

    This carries no labels and no inputs; the attacks see nothing else.
    """

    weight_grad: np.ndarray
    bias_grad: np.ndarray = None
    declared_n: int = 1
    steps_averaged: int = 1

    def __post_init__(self):
        w = np.asarray(self.weight_grad, dtype=np.float64)
        if w.ndim != 2:
            raise SizeError("weight_grad must be K x P")
        object.__setattr__(self, "weight_grad", w)
        if self.bias_grad is not None:
            b = np.asarray(self.bias_grad, dtype=np.float64)
            if b.shape != (w.shape[0],):
                raise SizeError(f"bias_grad has shape {b.shape}, expected ({w.shape[0]},)")
            object.__setattr__(self, "bias_grad", b)
        if self.steps_averaged < 1:
            raise DomainError("steps_averaged must be >= 1")
        if self.declared_n < 1:
            raise DomainError("declared_n must be >= 1")

    @property
    def class_count(self):
        return self.weight_grad.shape[0]

    @property
    def has_bias(self):
        return self.bias_grad is not None

    def flat(self):
        parts = [self.weight_grad.ravel()]
        if self.bias_grad is not None:
            parts.append(self.bias_grad)
        return np.concatenate(parts)


def init_model(arch, rng):
    """Weights ~ U(-a, a) with ``a = init_gain / sqrt(fan_in)``; biases zero."""
    rng = make_rng(rng)
    dims = arch.layer_dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        a = arch.init_gain / np.sqrt(dims[i])
        weights.append(rng.uniform(-a, a, size=(dims[i + 1], dims[i])))
        last = i == len(dims) - 2
        biases.append(None if last and not arch.final_layer_has_bias else np.zeros(dims[i + 1]))
    return Model(arch=arch, weights=weights, biases=biases)


def _as_batch(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise SizeError(f"expected inputs of dimension {model.arch.input_dim}, got shape {X.shape}")
    return X


def _forward_all(model, X):
    acts = [X]
    h = X
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
        acts.append(h)
    w, b = model.final_layer
    logits = h @ w.T
    if b is not None:
        logits = logits + b
    return acts, logits


def forward(model, X):
    """Return ``(penultimate, probs)`` for a batch of flattened inputs."""
    acts, logits = _forward_all(model, _as_batch(model, X))
    return acts[-1], softmax(logits)


def predict_proba(model, X):
    return forward(model, X)[1]


def batch_loss(model, X, y):
    """Mean cross-entropy of the batch."""
    X = _as_batch(model, X)
    _, logits = _forward_all(model, X)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(y)), np.asarray(y)]))


def _check_labels(model, y, n):
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (n,):
        raise SizeError(f"{n} inputs but labels of shape {y.shape}")
    if n == 0:
        raise SizeError("empty batch")
    if y.min() < 0 or y.max() >= model.arch.class_count:
        raise DomainError("label out of range")
    return y


def backprop(model, X, y):
    """Gradients of the mean batch cross-entropy for every layer.

    Returns ``(weight_grads, bias_grads, logit_grads, penultimate, loss)``.
    """
    X = _as_batch(model, X)
    y = _check_labels(model, y, X.shape[0])
    n = X.shape[0]
    acts, logits = _forward_all(model, X)
    delta = softmax(logits)
    loss = float(-np.mean(np.log(np.maximum(delta[np.arange(n), y], np.finfo(float).tiny))))
    delta[np.arange(n), y] -= 1.0
    logit_grads = delta.copy()
    delta /= n
    wgrads, bgrads = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        wgrads[i] = delta.T @ acts[i]
        bgrads[i] = None if model.biases[i] is None else delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i]) * (acts[i] > 0)
    return wgrads, bgrads, logit_grads, acts[-1], loss


def last_layer_gradients(model, X, y):
    """The client's single-step update for batch ``(X, y)``."""
    wgrads, bgrads, _, _, _ = backprop(model, X, y)
    return GradientUpdate(weight_grad=wgrads[-1], bias_grad=bgrads[-1], declared_n=len(y), steps_averaged=1)


def _sgd_step(model, X, y, lr):
    wgrads, bgrads, _, _, loss = backprop(model, X, y)
    for i in range(len(model.weights)):
        model.weights[i] -= lr * wgrads[i]
        if model.biases[i] is not None:
            model.biases[i] -= lr * bgrads[i]
    return wgrads[-1], bgrads[-1], loss


def _xy(data):
    if hasattr(data, "flat") and hasattr(data, "labels"):
        return data.flat(), data.labels
    X, y = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def sgd_train(model, data, epochs, learning_rate=0.01, batch_size=100, rng=0):
    """Plain minibatch SGD over all layers. Returns a trained copy.

    ``data`` is a ``WindowSet`` or an ``(X, y)`` pair. The epoch's mean
    training loss is appended to ``loss_history``.
    """
    epochs = check_count(epochs, "epochs")
    if not learning_rate > 0:
        raise DomainError("learning_rate must be positive")
    batch_size = check_count(batch_size, "batch_size", minimum=1)
    out = model.clone()
    if epochs == 0:
        return out
    X, y = _xy(data)
    X = _as_batch(out, X)
    y = _check_labels(out, y, X.shape[0])
    rng = make_rng(rng)
    for epoch in range(epochs):
        order = rng.permutation(X.shape[0])
        losses = []
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                for s in range(0, len(order), batch_size):
                    idx = order[s:s + batch_size]
                    losses.append(_sgd_step(out, X[idx], y[idx], learning_rate)[2] * len(idx))
            except DomainError:  # non-finite logits
                raise NumericError(f"training diverged in epoch {epoch + 1}") from None
        loss = sum(losses) / len(order)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(w)) for w in out.weights):
            raise NumericError(f"training diverged in epoch {epoch + 1}")
        out.loss_history.append(loss)
        out.trained_epochs += 1
    return out


def multi_step_update(model, batches, learning_rate):
    """Average of the final-layer gradients over ``S`` local SGD steps.

    ``batches`` is a sequence of ``(X, y)`` mini-batches of equal size. The
    caller's model is left untouched.
    """
    batches = [(np.asarray(X, dtype=np.float64), np.asarray(y)) for X, y in batches]
    if not batches:
        raise SizeError("need at least one mini-batch")
    sizes = {len(y) for _, y in batches}
    if len(sizes) != 1:
        raise SizeError(f"mini-batches differ in size: {sorted(sizes)}")
    local = model.clone()
    wsum, bsum = 0.0, 0.0
    for X, y in batches:
        gw, gb, _ = _sgd_step(local, X, y, learning_rate)
        wsum = wsum + gw
        bsum = None if gb is None else bsum + gb
    s = len(batches)
    return GradientUpdate(weight_grad=wsum / s, bias_grad=None if bsum is None else bsum / s,
                          declared_n=s * sizes.pop(), steps_averaged=s)


# -- checkpoints ----------------------------------------------------------------

def model_to_dict(model):
    a = model.arch
    return {
        "format": CHECKPOINT_FORMAT,
        "arch": {"input_dim": a.input_dim, "hidden_dims": list(a.hidden_dims), "class_count": a.class_count,
                 "final_layer_has_bias": a.final_layer_has_bias, "init_gain": a.init_gain},
        "trained_epochs": model.trained_epochs,
        "layers": [
            {"weight": {"shape": list(w.shape), "data": w.ravel().tolist()},
             "bias": None if b is None else {"shape": list(b.shape), "data": b.tolist()}}
            for w, b in zip(model.weights, model.biases)
        ],
    }


def model_from_dict(d):
    if d.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"unsupported checkpoint format {d.get('format')!r}")
    arch = ModelArch(**d["arch"])

    def tensor(t):
        return None if t is None else np.array(t["data"], dtype=np.float64).reshape(t["shape"])

    return Model(arch=arch, weights=[tensor(l["weight"]) for l in d["layers"]],
                 biases=[tensor(l["bias"]) for l in d["layers"]], trained_epochs=d["trained_epochs"])


def save_checkpoint(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
    return path


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


class ReluNetClassifier(BaseEstimator, ClassifierMixin):
    """scikit-learn facade over :func:`init_model` and :func:`sgd_train`.

    Classes are assumed to be ``0 .. n_classes - 1``.
    """

    def __init__(self, hidden_dims=(64, 32), n_classes=None, epochs=100, learning_rate=0.01,
                 batch_size=100, final_layer_has_bias=True, init_gain=0.5, random_state=0):
        self.hidden_dims = hidden_dims
        self.n_classes = n_classes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.final_layer_has_bias = final_layer_has_bias
        self.init_gain = init_gain
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        k = self.n_classes or int(y.max()) + 1
        arch = ModelArch(X.shape[1], tuple(self.hidden_dims), k, self.final_layer_has_bias, self.init_gain)
        init_rng, train_rng = np.random.SeedSequence(self.random_state).spawn(2)
        model = init_model(arch, np.random.Generator(np.random.PCG64(init_rng)))
        self.model_ = sgd_train(model, (X, y), self.epochs, self.learning_rate, self.batch_size,
                                np.random.Generator(np.random.PCG64(train_rng)))
        self.classes_ = np.arange(k)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def snapshot(self):
        """The fitted parameters, as a server would hand them to a client."""
        check_is_fitted(self, "model_")
        return self.model_.clone()
