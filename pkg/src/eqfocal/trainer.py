"""Mini-batch SGD for per-category sigmoid classifiers.

The model is a linear probe (optionally with one ReLU hidden layer) trained
with momentum SGD, linear warmup and global gradient-norm clipping. The
category state is refreshed after every optimizer step from the gradient
magnitudes of that step's loss.
"""
import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .errors import ContractError, NumericalError, ParameterError, ParseError
from .losses import LossHyperParams, batch_loss, sigmoid
from .state import CategoryState, gather_stats
from .synth import rfs_sampler

log = logging.getLogger(__name__)

MODEL_MAGIC = "EQFOCAL-MODEL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    loss: LossHyperParams = field(default_factory=LossHyperParams)
    epochs: int = 10
    batch_size: int = 256
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_iters: int = 500
    grad_clip_norm: float = 35.0
    sampler: str = "random"
    rfs_t: float = 0.001
    seed: int = 0
    prior_prob: float = 0.001
    hidden: int = 0
    max_iters: int = None
    ema_decay: float = None

    def __post_init__(self):
        if not self.lr >= 0:
            raise ParameterError("lr must be >= 0")
        if self.warmup_iters < 0:
            raise ParameterError("warmup_iters must be >= 0")
        if not 0.0 < self.prior_prob < 1.0:
            raise ParameterError("prior_prob must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ParameterError("grad_clip_norm must be > 0 or None")
        if self.sampler not in ("random", "rfs"):
            raise ParameterError(f"sampler must be 'random' or 'rfs', got {self.sampler!r}")
        if self.hidden < 0:
            raise ParameterError("hidden must be >= 0")
        if self.max_iters is not None and self.max_iters < 0:
            raise ParameterError("max_iters must be >= 0")

    def lr_at(self, it):
        if it < self.warmup_iters:
            return self.lr * (it + 1) / self.warmup_iters
        return self.lr


@dataclass
class ModelParams:
    W: np.ndarray
    b: np.ndarray
    W1: np.ndarray = None
    b1: np.ndarray = None

    @classmethod
    def init(cls, feature_dim, num_categories, prior_prob=0.001, hidden=0, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        W1 = b1 = None
        width = feature_dim
        if hidden:
            W1 = rng.normal(0.0, np.sqrt(2.0 / feature_dim), size=(feature_dim, hidden))
            b1 = np.zeros(hidden)
            width = hidden
        W = rng.normal(0.0, 0.01, size=(width, num_categories))
        b = np.full(num_categories, -np.log((1.0 - prior_prob) / prior_prob))
        return cls(W, b, W1, b1)

    @property
    def feature_dim(self):
        return (self.W1 if self.W1 is not None else self.W).shape[0]

    @property
    def num_categories(self):
        return self.W.shape[1]

    def params(self):
        if self.W1 is None:
            return [self.W, self.b]
        return [self.W1, self.b1, self.W, self.b]

    def copy(self):
        return ModelParams(*(None if p is None else p.copy() for p in (self.W, self.b, self.W1, self.b1)))

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise ContractError(f"expected N x {self.feature_dim} features, got {X.shape}")
        if self.W1 is None:
            return X @ self.W + self.b, None
        h = np.maximum(X @ self.W1 + self.b1, 0.0)
        return h @ self.W + self.b, h

    def backward(self, X, cache, G):
        """Parameter gradients (same order as ``params()``) for dLoss/dlogits = G."""
        if self.W1 is None:
            return [X.T @ G, G.sum(axis=0)]
        h = cache
        dh = (G @ self.W.T) * (h > 0)
        return [X.T @ dh, dh.sum(axis=0), h.T @ G, G.sum(axis=0)]

    def serialize(self):
        H = 0 if self.W1 is None else self.W1.shape[1]
        lines = [checkpoint.format_header(MODEL_MAGIC, MODEL_VERSION,
                                          {"D": self.feature_dim, "C": self.num_categories, "H": H})]
        names = ["W", "b"] if H == 0 else ["W1", "b1", "W", "b"]
        for name, p in zip(names, self.params()):
            for i, row in enumerate(np.atleast_2d(p)):
                lines.append(f"{name} {i} {checkpoint.format_floats(row)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text):
        lines = text.splitlines()
        if not lines:
            raise ParseError("empty model file", line=1)
        fields = checkpoint.parse_header(lines[0], MODEL_MAGIC, MODEL_VERSION)
        D = checkpoint.header_value(fields, "D", int)
        C = checkpoint.header_value(fields, "C", int)
        H = checkpoint.header_value(fields, "H", int)
        width = H or D
        shapes = {"W": (width, C), "b": (1, C)}
        if H:
            shapes.update({"W1": (D, H), "b1": (1, H)})
        arrays = {k: np.empty(s) for k, s in shapes.items()}
        filled = {k: 0 for k in shapes}
        for lineno, line in enumerate(lines[1:], start=2):
            name, _, rest = line.partition(" ")
            if name not in arrays:
                raise ParseError(f"unknown record {name!r}", line=lineno, column=1)
            row_tok, _, values = rest.partition(" ")
            row = checkpoint.parse_numbers(row_tok, lineno, int)[0]
            if row != filled[name] or row >= shapes[name][0]:
                raise ParseError(f"unexpected row {row} for {name}", line=lineno)
            vals = checkpoint.parse_numbers(values, lineno)
            if len(vals) != shapes[name][1]:
                raise ParseError(f"{name} row needs {shapes[name][1]} values, got {len(vals)}", line=lineno)
            arrays[name][row] = vals
            filled[name] += 1
        for name, s in shapes.items():
            if filled[name] != s[0]:
                raise ParseError(f"{name} has {filled[name]} of {s[0]} rows", line=len(lines))
        return cls(arrays["W"], arrays["b"][0], arrays.get("W1"),
                   arrays["b1"][0] if H else None)

    def save(self, path):
        checkpoint.atomic_write_text(path, self.serialize())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.deserialize(fh.read())


def predict(model, features):
    logits, _ = model.forward(features)
    return sigmoid(logits)


@dataclass
class TrainLog:
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    g: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    weight: list = field(default_factory=list)

    def record(self, it, loss, lr, grad_norm, state):
        self.iteration.append(it)
        self.loss.append(loss)
        self.lr.append(lr)
        self.grad_norm.append(grad_norm)
        self.g.append(state.g.copy())
        self.gamma.append(state.gamma.copy())
        self.weight.append(state.weight.copy())

    def __len__(self):
        return len(self.iteration)

    def g_matrix(self):
        return np.array(self.g).reshape(len(self), -1)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "lr", "grad_norm", "g_min", "g_max"])
        for it, loss, lr, gn, g in zip(self.iteration, self.loss, self.lr, self.grad_norm, self.g):
            w.writerow([it, repr(float(loss)), repr(float(lr)), repr(float(gn)), repr(float(g.min())), repr(float(g.max()))])
        return buf.getvalue()

    def trajectory_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "category", "g", "gamma", "weight"])
        for it, g, gam, wt in zip(self.iteration, self.g, self.gamma, self.weight):
            for j in range(len(g)):
                w.writerow([it, j, repr(float(g[j])), repr(float(gam[j])), repr(float(wt[j]))])
        return buf.getvalue()


def _batches(dataset, config, rng):
    n = len(dataset)
    if config.sampler == "rfs":
        epochs = rfs_sampler(dataset, config.rfs_t, seed=int(rng.integers(2**63)))
    for _ in range(config.epochs):
        order = next(epochs) if config.sampler == "rfs" else rng.permutation(n)
        for start in range(0, len(order), config.batch_size):
            yield order[start:start + config.batch_size]


def _check_finite(it, what, M, loss=0.0):
    if np.isfinite(loss) and np.all(np.isfinite(M)):
        return
    bad = np.argwhere(~np.isfinite(M))
    cat = int(bad[0, 1]) if len(bad) else None
    raise NumericalError(f"non-finite {what} at iteration {it}"
                         + (f", category {cat}" if cat is not None else ""),
                         iteration=it, category=cat)


def train(dataset, config, model=None):
    """Train on ``dataset``; returns (model, category state, log).

    Each iteration: forward, batch loss, gradient statistics, clipped
    momentum SGD step, then the category state update.
    """
    hp = config.loss
    C = dataset.num_categories
    if model is None:
        model = ModelParams.init(dataset.features.shape[1], C, config.prior_prob, config.hidden, config.seed)
    else:
        model = model.copy()
    state = CategoryState.init(C, hp, ema_decay=config.ema_decay)
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 4]))
    trainlog = TrainLog()

    it = 0
    for idx in _batches(dataset, config, rng):
        if config.max_iters is not None and it >= config.max_iters:
            break
        X = dataset.features[idx]
        T = dataset.targets(idx)
        with np.errstate(over="ignore", invalid="ignore"):
            logits, cache = model.forward(X)
        _check_finite(it, "logits", logits)
        loss, G = batch_loss(logits, T, hp, state)
        _check_finite(it, "loss or gradient", G, loss)
        pos_mag, neg_mag = gather_stats(G, T)

        grads = model.backward(X, cache, G)
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if config.grad_clip_norm is not None and norm > config.grad_clip_norm:
            scale = config.grad_clip_norm / norm
            grads = [g * scale for g in grads]
        lr = config.lr_at(it)
        with np.errstate(over="ignore", invalid="ignore"):
            for p, v, g in zip(params, velocity, grads):
                v *= config.momentum
                v += g + config.weight_decay * p
                p -= lr * v

        state.update(pos_mag, neg_mag)
        trainlog.record(it, loss, lr, norm, state)
        if it % 200 == 0:
            log.debug("iter %d loss %.6f lr %.5f |grad| %.4f", it, loss, lr, norm)
        it += 1
    return model, state, trainlog
