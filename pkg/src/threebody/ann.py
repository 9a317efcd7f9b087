"""Multilayer perceptrons written directly in numpy.

Two models are used: a regressor from masses ``(m1, m2)`` to orbit
parameters ``(x1, v1, v2, T)`` and a three-way classifier of mass points into
stable orbit / unstable orbit / no orbit.  Everything runs in float64.

Weights are stored as ``W[l]`` with shape ``(fan_in, fan_out)`` so a batch
``X`` of shape ``(n, fan_in)`` maps to ``X @ W[l] + b[l]``.
"""

import base64
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LoadError, ThreeBodyError

log = logging.getLogger(__name__)

MODEL_FORMAT = "1.0"
CLASS_NAMES = ("stable", "unstable", "non-periodic")
ACTIVATIONS = ("relu", "tanh")


class TrainingError(ThreeBodyError, ValueError):
    """Bad training data or a numerically broken optimisation."""


# ---------------------------------------------------------------- model

@dataclass
class MLPModel:
    """Fully connected network with input (and optional output) z-scoring.

    ``norm_stats`` holds ``x_mean``, ``x_std`` and, for regressors, ``y_mean``
    and ``y_std``; missing entries mean no scaling.
    """

    layer_sizes: list
    weights: list
    biases: list
    activation: str = "relu"
    output_mode: str = "linear"
    norm_stats: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_mode not in ("linear", "softmax"):
            raise ValueError(f"unknown output mode {self.output_mode!r}")
        sizes = list(self.layer_sizes)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("need one weight matrix and bias per layer transition")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l}: weight {W.shape} / bias {b.shape} do not chain "
                                 f"{sizes[l]} -> {sizes[l + 1]}")
        for key in ("x_std", "y_std"):
            if key in self.norm_stats and not np.all(np.asarray(self.norm_stats[key]) > 0):
                raise ValueError(f"{key} must be strictly positive")

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def params(self):
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return MLPModel(list(self.layer_sizes), [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], self.activation, self.output_mode,
                        {k: np.array(v, dtype=float) for k, v in self.norm_stats.items()},
                        dict(self.metadata))


def init_model(layer_sizes, output_mode="linear", activation="relu", seed=0):
    """Fan-in scaled uniform initialisation; biases start at zero."""
    rng = np.random.default_rng(seed)
    gain = 6.0 if activation == "relu" else 3.0
    weights, biases = [], []
    for a, b in zip(layer_sizes, layer_sizes[1:]):
        lim = math.sqrt(gain / a)
        weights.append(rng.uniform(-lim, lim, size=(a, b)))
        biases.append(np.zeros(b))
    return MLPModel(list(layer_sizes), weights, biases, activation, output_mode)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(float) if kind == "relu" else 1.0 - a * a


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def standardize(X, mean, std):
    return (np.asarray(X, dtype=float) - mean) / std


def destandardize(Z, mean, std):
    return np.asarray(Z, dtype=float) * std + mean


def _net(model, Xn):
    """Forward pass on normalised inputs; returns pre-activations and activations."""
    zs, acts = [], [Xn]
    a = Xn
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        zs.append(z)
        a = z if l == last else _act(z, model.activation)
        acts.append(a)
    return zs, acts


def _norm_in(model, X):
    st = model.norm_stats
    if "x_mean" in st:
        return standardize(X, st["x_mean"], st["x_std"])
    return np.asarray(X, dtype=float)


def forward(model, X):
    """Evaluate the model on one input vector or a batch of rows.

    Regressors return de-standardised outputs, classifiers class
    probabilities.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    if X2.ndim != 2 or X2.shape[1] != model.n_in:
        raise ValueError(f"expected inputs of width {model.n_in}, got shape {X.shape}")
    _, acts = _net(model, _norm_in(model, X2))
    out = acts[-1]
    if model.output_mode == "softmax":
        out = softmax(out)
    elif "y_mean" in model.norm_stats:
        out = destandardize(out, model.norm_stats["y_mean"], model.norm_stats["y_std"])
    return out[0] if single else out


def predict_class(model, X):
    return np.argmax(forward(model, np.atleast_2d(X)), axis=1)


def backprop(model, Xn, target):
    """Loss and parameter gradients on normalised data.

    For ``linear`` output ``target`` holds standardised outputs and the loss
    is their mean squared error; for ``softmax`` it holds one-hot rows and
    the loss is the mean cross entropy.

    Returns
    -------
    loss : float
    grads : list of arrays, ordered like :meth:`MLPModel.params`
    """
    n = Xn.shape[0]
    zs, acts = _net(model, Xn)
    out = acts[-1]
    if model.output_mode == "softmax":
        p = softmax(out)
        loss = -float(np.sum(target * np.log(np.clip(p, 1e-300, None)))) / n
        delta = (p - target) / n
    else:
        diff = out - target
        loss = float(np.mean(diff * diff))
        delta = 2.0 * diff / diff.size
    grads = [None] * (2 * len(model.weights))
    for l in range(len(model.weights) - 1, -1, -1):
        grads[2 * l] = acts[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * _act_grad(zs[l - 1], acts[l], model.activation)
    return loss, grads


# ---------------------------------------------------------------- optimiser

@dataclass
class AMSGradState:
    """Moments for AMSGrad; ``vhat`` is the running elementwise maximum of ``v``."""

    m: list
    v: list
    vhat: list
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, **hyper):
        z = [np.zeros_like(p, dtype=float) for p in params]
        return cls([a.copy() for a in z], [a.copy() for a in z], [a.copy() for a in z], **hyper)


def amsgrad_step(params, grads, st):
    """One AMSGrad update, applied in place; returns ``(params, st)``.

    ``m <- b1 m + (1-b1) g``, ``v <- b2 v + (1-b2) g^2``,
    ``vhat <- max(vhat, v)``, ``p <- p - alpha m / (sqrt(vhat) + eps)``.
    No bias correction is applied.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for i, g in enumerate(grads):
        g = np.asarray(g, dtype=float)
        if g.shape != np.shape(params[i]):
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {np.shape(params[i])}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise TrainingError(f"non-finite gradient in parameter block {i} ({bad} entries) at step {st.t + 1}")
    st.t += 1
    b1, b2 = st.beta1, st.beta2
    for i, g in enumerate(grads):
        st.m[i] = b1 * st.m[i] + (1 - b1) * g
        st.v[i] = b2 * st.v[i] + (1 - b2) * g * g
        st.vhat[i] = np.maximum(st.vhat[i], st.v[i])
        params[i] -= st.alpha * st.m[i] / (np.sqrt(st.vhat[i]) + st.eps)
    return params, st


# ---------------------------------------------------------------- data

SPLITS = ("train", "validation", "test")


@dataclass
class Dataset:
    """Inputs ``X`` (n, 2), targets ``Y`` (n, k) and a split tag per row."""

    X: np.ndarray
    Y: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.split = np.asarray(self.split, dtype=object)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ValueError("X and Y must be two-dimensional")
        if not (len(self.X) == len(self.Y) == len(self.split)):
            raise ValueError("X, Y and split differ in length")
        unknown = set(self.split) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown split tags {sorted(unknown)}")

    def __len__(self):
        return len(self.X)

    def part(self, name):
        sel = self.split == name
        return self.X[sel], self.Y[sel]

    def counts(self):
        return {s: int(np.sum(self.split == s)) for s in SPLITS}


def split_tags(n, fractions=(0.9, 0.1, 0.0), seed=0):
    """Deterministic shuffled assignment of ``n`` rows to train/validation/test.

    ``fractions`` are for (train, validation, test); counts are rounded
    down for validation and test and the remainder goes to training.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    n_test = int(math.floor(fractions[2] * n + 1e-9))
    order = np.random.default_rng(seed).permutation(n)
    tags = np.empty(n, dtype=object)
    tags[:] = "train"
    tags[order[:n_val]] = "validation"
    tags[order[n_val:n_val + n_test]] = "test"
    return tags


def make_dataset(X, Y, fractions=(0.9, 0.1, 0.0), seed=0):
    return Dataset(X, Y, split_tags(len(X), fractions, seed))


def one_hot(labels, k=3):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _stats(A, what):
    mean = A.mean(axis=0)
    std = A.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            raise TrainingError(f"{what} feature {j} has zero variance on the training split")
    return mean, std


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    """Optimiser and stopping settings shared by both trainers.

    ``plateau`` and ``min_improvement`` drive the regression stop: training
    ends once the best training loss has not dropped by the relative
    amount ``min_improvement`` for ``plateau`` epochs.  ``patience`` is the
    classifier's early-stopping window on validation accuracy.
    """

    hidden: tuple = (1024,) * 6
    activation: str = "relu"
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 50000
    full_batch_limit: int = 10000
    batch_size: int = 256
    plateau: int = 1000
    min_improvement: float = 1e-3
    target_loss: float = 0.0
    patience: int = 200

    @classmethod
    def classifier(cls, **kw):
        base = dict(hidden=(256,) * 6, max_epochs=5000)
        base.update(kw)
        return cls(**base)


def _batches(n, cfg, rng):
    if n <= cfg.full_batch_limit:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for i in range(0, n, cfg.batch_size):
        yield order[i:i + cfg.batch_size]


def _fresh(sizes, output_mode, cfg, seed):
    model = init_model(sizes, output_mode, cfg.activation, seed)
    st = AMSGradState.fresh(model.params(), alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    return model, st


def _mse(model, X, Y):
    if len(X) == 0:
        return math.nan
    st = model.norm_stats
    Xn = standardize(X, st["x_mean"], st["x_std"])
    Yn = standardize(Y, st["y_mean"], st["y_std"])
    return float(np.mean((_net(model, Xn)[1][-1] - Yn) ** 2))


def train_regression(data, cfg=None, seed=0):
    """Fit the mass-to-parameters regressor on the training split.

    Inputs and outputs are z-scored with training-split statistics and the
    loss is the mean squared error of the standardised outputs.  The
    validation and test losses are recorded every epoch (NaN when the split
    is empty).

    Returns
    -------
    model : MLPModel
    history : list of dict
        Per-epoch ``epoch``, ``train``, ``validation``, ``test`` losses.
    """
    cfg = cfg or TrainConfig()
    Xtr, Ytr = data.part("train")
    if len(data) < 4:
        raise TrainingError(f"need at least 4 examples, got {len(data)}")
    if len(Xtr) == 0:
        raise TrainingError("empty training split")
    xm, xs = _stats(Xtr, "input")
    ym, ys = _y_stats(Ytr)
    sizes = [Xtr.shape[1], *cfg.hidden, Ytr.shape[1]]
    model, st = _fresh(sizes, "linear", cfg, seed)
    model.norm_stats = {"x_mean": xm, "x_std": xs, "y_mean": ym, "y_std": ys}
    Xn = standardize(Xtr, xm, xs)
    Yn = standardize(Ytr, ym, ys)
    Xv, Yv = data.part("validation")
    Xt, Yt = data.part("test")
    rng = np.random.default_rng(seed)
    params = model.params()
    history = []
    best, since = math.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        for idx in _batches(len(Xn), cfg, rng):
            _, grads = backprop(model, Xn[idx], Yn[idx])
            amsgrad_step(params, grads, st)
        train = _mse(model, Xtr, Ytr)
        history.append({"epoch": epoch, "train": train, "validation": _mse(model, Xv, Yv),
                        "test": _mse(model, Xt, Yt)})
        if not math.isfinite(train):
            raise TrainingError(f"training loss became {train} at epoch {epoch}")
        if train < best * (1 - cfg.min_improvement):
            best, since = train, 0
        else:
            since += 1
        if train <= cfg.target_loss or since >= cfg.plateau:
            break
    model.metadata.update({"kind": "regression", "seed": seed, "epochs": len(history),
                           "alpha": cfg.alpha, "hidden": list(cfg.hidden)})
    log.info("regression stopped after %d epochs, train loss %.3g", len(history), history[-1]["train"])
    return model, history


def _y_stats(Y):
    # a constant output column is legitimate (e.g. a memorised single example); scale it by 1
    mean = Y.mean(axis=0)
    std = Y.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _accuracy(model, X, Y):
    if len(X) == 0:
        return math.nan
    return float(np.mean(predict_class(model, X) == np.argmax(Y, axis=1)))


def _cross_entropy(model, X, Y):
    if len(X) == 0:
        return math.nan
    p = forward(model, X)
    return -float(np.sum(Y * np.log(np.clip(p, 1e-300, None)))) / len(X)


def train_classifier(data, cfg=None, seed=0, min_classes=2):
    """Fit the softmax classifier with early stopping on validation accuracy.

    The network always has three outputs (stable, unstable, non-periodic).
    Training requires at least ``min_classes`` of them in the training split.
    The returned model is the one with the best validation accuracy seen.
    Without a validation split, the final model is kept.

    Returns
    -------
    model : MLPModel
    history : list of dict
        Per-epoch ``epoch``, ``train`` (cross entropy), ``validation``
        and ``test`` accuracies.
    """
    cfg = cfg or TrainConfig.classifier()
    Xtr, Ytr = data.part("train")
    if len(Xtr) == 0:
        raise TrainingError("empty training split")
    present = np.flatnonzero(Ytr.sum(axis=0) > 0)
    if present.size < min_classes:
        names = [CLASS_NAMES[i] if i < len(CLASS_NAMES) else str(i) for i in present]
        raise TrainingError(f"training split holds classes {names}; need at least {min_classes}")
    xm, xs = _stats(Xtr, "input")
    sizes = [Xtr.shape[1], *cfg.hidden, Ytr.shape[1]]
    model, st = _fresh(sizes, "softmax", cfg, seed)
    model.norm_stats = {"x_mean": xm, "x_std": xs}
    Xn = standardize(Xtr, xm, xs)
    Xv, Yv = data.part("validation")
    Xt, Yt = data.part("test")
    rng = np.random.default_rng(seed)
    params = model.params()
    history = []
    best_acc, best_model, since = -1.0, model.copy(), 0
    for epoch in range(1, cfg.max_epochs + 1):
        loss = 0.0
        for idx in _batches(len(Xn), cfg, rng):
            loss, grads = backprop(model, Xn[idx], Ytr[idx])
            amsgrad_step(params, grads, st)
        if not math.isfinite(loss):
            raise TrainingError(f"cross entropy became {loss} at epoch {epoch}")
        val = _accuracy(model, Xv, Yv)
        history.append({"epoch": epoch, "train": _cross_entropy(model, Xtr, Ytr),
                        "validation": val, "test": _accuracy(model, Xt, Yt)})
        if math.isnan(val):
            best_model = model
            continue
        if val > best_acc:
            best_acc, best_model, since = val, model.copy(), 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    best_model.metadata.update({"kind": "classifier", "seed": seed, "epochs": len(history),
                                "patience": cfg.patience, "best_validation_accuracy": best_acc,
                                "classes": list(CLASS_NAMES[:sizes[-1]])})
    return best_model, history


# ---------------------------------------------------------------- metrics

def confusion_matrix(y_true, y_pred, k=3):
    C = np.zeros((k, k), dtype=int)
    np.add.at(C, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return C


def metrics(confusion):
    """Accuracy, macro F1 and per-class precision/recall of a confusion matrix.

    Rows are true classes and columns predicted classes.  Any square size is
    accepted.  Per-class F1 is 0 when precision and recall are both 0.
    """
    C = np.asarray(confusion, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {C.shape}")
    if np.any(C < 0):
        raise ValueError("confusion counts must be non-negative")
    total = C.sum()
    if total == 0:
        raise ValueError("confusion matrix is all zeros")
    tp = np.diag(C)
    pred = C.sum(axis=0)
    true = C.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {"accuracy": float(tp.sum() / total), "macro_f1": float(f1.mean()),
            "precision": precision.tolist(), "recall": recall.tolist(), "f1": f1.tolist()}


def mean_relative_error(pred, true):
    """Mean of ``|pred - true| / |true|`` over all entries."""
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    return float(np.mean(np.abs(pred - true) / np.abs(true)))


@dataclass
class LinearModel:
    """Affine least-squares baseline ``y = [x, 1] @ coef``."""

    coef: np.ndarray

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.hstack([X, np.ones((len(X), 1))]) @ self.coef


def fit_linear(X, Y):
    X = np.asarray(X, dtype=float)
    A = np.hstack([X, np.ones((len(X), 1))])
    coef, *_ = np.linalg.lstsq(A, np.asarray(Y, dtype=float), rcond=None)
    return LinearModel(coef)


# ---------------------------------------------------------------- persistence

def _enc(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d, where):
    try:
        raw = base64.b64decode(d["data"], validate=True)
        shape = tuple(int(s) for s in d["shape"])
        a = np.frombuffer(raw, dtype="<f8")
        return a.reshape(shape).astype(float)
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"corrupt array {where}: {exc}") from None


def model_to_dict(model):
    return {
        "format": "threebody-mlp",
        "version": MODEL_FORMAT,
        "layer_sizes": list(model.layer_sizes),
        "activation": model.activation,
        "output_mode": model.output_mode,
        "norm_stats": {k: _enc(v) for k, v in model.norm_stats.items()},
        "weights": [_enc(W) for W in model.weights],
        "biases": [_enc(b) for b in model.biases],
        "metadata": model.metadata,
    }


def save_model(model, path=None):
    """Serialise to a JSON document (weights as base64 little-endian float64).

    Returns the document text; also writes it when ``path`` is given.
    """
    text = json.dumps(model_to_dict(model), indent=1, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_model(source):
    """Inverse of :func:`save_model`; ``source`` is a path or document text."""
    text = source
    if not str(source).lstrip().startswith("{"):
        with open(source) as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LoadError(f"model document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != "threebody-mlp":
        raise LoadError("not a model document")
    major = str(doc.get("version", "")).split(".")[0]
    if major != MODEL_FORMAT.split(".")[0]:
        raise LoadError(f"unsupported model format version {doc.get('version')!r}")
    try:
        weights = [_dec(w, f"weights[{i}]") for i, w in enumerate(doc["weights"])]
        biases = [_dec(b, f"biases[{i}]") for i, b in enumerate(doc["biases"])]
        stats = {k: _dec(v, k) for k, v in doc["norm_stats"].items()}
        return MLPModel(doc["layer_sizes"], weights, biases, doc["activation"], doc["output_mode"],
                        stats, doc.get("metadata", {}))
    except KeyError as exc:
        raise LoadError(f"model document lacks field {exc}") from None
    except ValueError as exc:
        raise LoadError(f"inconsistent model document: {exc}") from None


def history_csv(history, path=None):
    """Loss/metric history as CSV with columns epoch, train, validation, test."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train", "validation", "test"])
    for row in history:
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in ("train", "validation", "test")])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
