"""Per-category gradient statistics driving the equalized focusing factor."""
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .errors import ContractError, ParseError

MAGIC = "EQFOCAL-STATE"
VERSION = 1

# EQLv2 gradient-guided mapping (its published defaults)
EQLV2_GAMMA = 12.0
EQLV2_MU = 0.8
EQLV2_ALPHA = 4.0


def gather_stats(grads, targets):
    """Sum |grad| over positive and negative entries of each category."""
    grads = np.asarray(grads, dtype=np.float64)
    targets = np.asarray(targets)
    if grads.ndim != 2 or grads.shape != targets.shape:
        raise ContractError(f"grads {grads.shape} and targets {targets.shape} must be equal N x C arrays")
    mag = np.abs(grads)
    pos = targets == 1
    pos_mag = np.where(pos, mag, 0.0).sum(axis=0)
    neg_mag = np.where(pos, 0.0, mag).sum(axis=0)
    return pos_mag, neg_mag


@dataclass
class CategoryState:
    """Accumulated positive/negative gradient magnitudes per category.

    ``g`` is the clamped positive-to-negative ratio. Everything else
    (``gamma_v``, ``gamma``, ``weight``) is derived from it. With
    ``ema_decay=None`` accumulators are lifetime sums; otherwise they are
    exponential moving averages with that decay.
    """

    num_categories: int
    gamma_b: float = 2.0
    s: float = 8.0
    eps: float = 1e-12
    ema_decay: float = None
    steps: int = 0
    pos_grad_acc: np.ndarray = field(default=None, repr=False)
    neg_grad_acc: np.ndarray = field(default=None, repr=False)
    g: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        C = self.num_categories
        if int(C) != C or C < 1:
            raise ContractError(f"need at least one category, got {C}")
        self.num_categories = int(C)
        if self.ema_decay is not None and not 0.0 <= self.ema_decay < 1.0:
            raise ContractError("ema_decay must lie in [0, 1)")
        if not self.eps > 0:
            raise ContractError("eps must be positive")
        if self.pos_grad_acc is None:
            self.pos_grad_acc = np.zeros(C)
        if self.neg_grad_acc is None:
            self.neg_grad_acc = np.zeros(C)
        if self.g is None:
            self.g = np.ones(C)
        self._derive()

    @classmethod
    def init(cls, num_categories, hp, eps=1e-12, ema_decay=None):
        return cls(num_categories, gamma_b=float(hp.gamma_b), s=float(hp.s), eps=eps, ema_decay=ema_decay)

    def _derive(self):
        self.gamma_v = self.s * (1.0 - self.g)
        self.gamma = self.gamma_b + self.gamma_v
        self.weight = self.gamma / self.gamma_b

    def update(self, pos_mag, neg_mag):
        pos_mag = np.asarray(pos_mag, dtype=np.float64)
        neg_mag = np.asarray(neg_mag, dtype=np.float64)
        shape = (self.num_categories,)
        if pos_mag.shape != shape or neg_mag.shape != shape:
            raise ContractError(f"magnitudes must have shape {shape}")
        if np.any(~(pos_mag >= 0)) or np.any(~(neg_mag >= 0)):
            raise ContractError("gradient magnitudes must be non-negative")
        if self.ema_decay is None:
            self.pos_grad_acc = self.pos_grad_acc + pos_mag
            self.neg_grad_acc = self.neg_grad_acc + neg_mag
        else:
            d = self.ema_decay
            self.pos_grad_acc = d * self.pos_grad_acc + (1.0 - d) * pos_mag
            self.neg_grad_acc = d * self.neg_grad_acc + (1.0 - d) * neg_mag
        self.steps += 1
        self._recompute_g()
        return self

    def _recompute_g(self):
        # eps only guards an empty denominator; pos == neg must give exactly 1
        self.g = np.clip(self.pos_grad_acc / np.maximum(self.neg_grad_acc, self.eps), 0.0, 1.0)
        self._derive()

    def eqlv2_weights(self):
        """(positive, negative) per-category weights of the EQLv2 mapping."""
        f = 1.0 / (1.0 + np.exp(-EQLV2_GAMMA * (self.g - EQLV2_MU)))
        return 1.0 + EQLV2_ALPHA * (1.0 - f), f

    def copy(self):
        return CategoryState(self.num_categories, self.gamma_b, self.s, self.eps, self.ema_decay,
                             self.steps, self.pos_grad_acc.copy(), self.neg_grad_acc.copy(), self.g.copy())

    def serialize(self):
        header = checkpoint.format_header(MAGIC, VERSION, {
            "C": self.num_categories,
            "gamma_b": float(self.gamma_b),
            "s": float(self.s),
            "eps": float(self.eps),
            "ema_decay": "none" if self.ema_decay is None else repr(float(self.ema_decay)),
            "steps": self.steps,
        })
        lines = [header]
        for j in range(self.num_categories):
            lines.append(f"{j} {float(self.pos_grad_acc[j])!r} {float(self.neg_grad_acc[j])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text):
        lines = text.splitlines()
        if not lines:
            raise ParseError("empty state file", line=1)
        fields = checkpoint.parse_header(lines[0], MAGIC, VERSION)
        C = checkpoint.header_value(fields, "C", int)
        gamma_b = checkpoint.header_value(fields, "gamma_b", float)
        s = checkpoint.header_value(fields, "s", float)
        eps = checkpoint.header_value(fields, "eps", float)
        decay = checkpoint.header_value(fields, "ema_decay", lambda v: None if v == "none" else float(v))
        steps = checkpoint.header_value(fields, "steps", int)
        if C < 1:
            raise ParseError("C must be >= 1", line=1)
        records = lines[1:]
        if len(records) != C:
            raise ParseError(f"expected {C} category records, found {len(records)}", line=len(lines))
        pos = np.zeros(C)
        neg = np.zeros(C)
        for i, line in enumerate(records):
            lineno = i + 2
            parts = line.split(" ")
            if len(parts) != 3:
                raise ParseError("category record needs: index pos_acc neg_acc", line=lineno)
            idx = checkpoint.parse_numbers(parts[0], lineno, int)[0]
            if idx != i:
                raise ParseError(f"expected category index {i}, got {idx}", line=lineno, column=1)
            p, n = checkpoint.parse_numbers(" ".join(parts[1:]), lineno)
            if p < 0 or n < 0:
                raise ParseError("accumulators must be non-negative", line=lineno)
            pos[i], neg[i] = p, n
        state = cls(C, gamma_b, s, eps, decay, steps, pos, neg)
        if steps > 0:
            state._recompute_g()
        return state

    def save(self, path):
        checkpoint.atomic_write_text(path, self.serialize())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.deserialize(fh.read())
