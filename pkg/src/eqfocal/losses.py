"""Forward and backward kernels for the focal-loss family.

All kernels take raw logits ``x`` and binary targets ``y`` (scalars or
broadcastable arrays) and return the per-element loss or its derivative
with respect to ``x``. Log-probabilities are computed through a stable
log-sigmoid, so the kernels stay finite for arbitrarily large ``|x|``.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractError, DomainError, ParameterError


class Variant(str, Enum):
    FL = "FL"
    EFL = "EFL"
    EQLV2_FOCAL = "EQLV2_FOCAL"
    EQFL = "EQFL"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_").replace("&", "_")
        aliases = {"EQLV2": "EQLV2_FOCAL", "EQLV2FOCAL": "EQLV2_FOCAL"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ParameterError(f"unknown loss variant {name!r} (expected one of {choices})") from None


@dataclass(frozen=True)
class LossHyperParams:
    """Hyper-parameters shared by every kernel.

    ``use_alpha=False`` sets the class-balance weight to 1 for both
    positives and negatives, which is the convention of the loss-curve
    plots and of the closed-form derivative.
    """

    alpha_t: float = 0.25
    gamma_b: float = 2.0
    s: float = 8.0
    variant: Variant = Variant.EFL
    use_alpha: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not 0.0 < self.alpha_t < 1.0:
            raise ParameterError(f"alpha_t must lie in (0, 1), got {self.alpha_t}")
        if not self.gamma_b > 0.0:
            raise ParameterError(f"gamma_b must be > 0, got {self.gamma_b}")
        if not self.s >= 0.0:
            raise ParameterError(f"s must be >= 0, got {self.s}")

    def replace(self, **changes):
        fields = dict(alpha_t=self.alpha_t, gamma_b=self.gamma_b, s=self.s,
                      variant=self.variant, use_alpha=self.use_alpha)
        fields.update(changes)
        return LossHyperParams(**fields)


def log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def sigmoid(z):
    return np.exp(log_sigmoid(z))


def _result(value):
    value = np.asarray(value, dtype=np.float64)
    return float(value) if value.ndim == 0 else value


def _check_x(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("logits must be finite")
    return x


def _check_y(y):
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ParameterError("binary targets must be 0 or 1")
    return y.astype(np.int8)


def _check_gamma_v(gamma_v, hp):
    gv = np.asarray(gamma_v, dtype=np.float64)
    if np.any(gv < 0.0) or np.any(gv > hp.s) or not np.all(np.isfinite(gv)):
        raise ParameterError(f"gamma_v must lie in [0, s={hp.s}]")
    return gv


def _alpha_eff(y, hp):
    if not hp.use_alpha:
        return 1.0
    return np.where(y == 1, hp.alpha_t, 1.0 - hp.alpha_t)


def signed_logit(x, y):
    """x_t = (2y - 1) x."""
    return np.where(np.asarray(y) == 1, x, -np.asarray(x))


def _modulated(x, y, alpha, gamma, weight):
    xt = signed_logit(x, y)
    log_pt = log_sigmoid(xt)
    log_qt = log_sigmoid(-xt)  # log(1 - p_t)
    return -alpha * weight * np.exp(gamma * log_qt) * log_pt


def _modulated_grad(x, y, alpha, gamma, weight):
    xt = signed_logit(x, y)
    log_pt = log_sigmoid(xt)
    log_qt = log_sigmoid(-xt)
    pt = np.exp(log_pt)
    qt = np.exp(log_qt)
    sign = 2.0 * y - 1.0
    # p_t - 1 is evaluated as -(1 - p_t) to keep precision when p_t -> 1
    return alpha * weight * sign * np.exp(gamma * log_qt) * (gamma * pt * log_pt - qt)


def focal_loss(x, y, hp, gamma):
    if np.any(np.asarray(gamma) < 0):
        raise ParameterError("gamma must be >= 0")
    x, y = _check_x(x), _check_y(y)
    return _result(_modulated(x, y, _alpha_eff(y, hp), np.asarray(gamma, dtype=np.float64), 1.0))


def focal_grad(x, y, hp, gamma):
    if np.any(np.asarray(gamma) < 0):
        raise ParameterError("gamma must be >= 0")
    x, y = _check_x(x), _check_y(y)
    return _result(_modulated_grad(x, y, _alpha_eff(y, hp), np.asarray(gamma, dtype=np.float64), 1.0))


def efl_factors(gamma_v, hp):
    """Focusing factor gamma_b + gamma_v and weighting factor (gamma_b + gamma_v) / gamma_b."""
    gamma = hp.gamma_b + np.asarray(gamma_v, dtype=np.float64)
    return gamma, gamma / hp.gamma_b


def efl(x, y, hp, gamma_v):
    x, y = _check_x(x), _check_y(y)
    gamma, weight = efl_factors(_check_gamma_v(gamma_v, hp), hp)
    return _result(_modulated(x, y, _alpha_eff(y, hp), gamma, weight))


def efl_grad(x, y, hp, gamma_v):
    x, y = _check_x(x), _check_y(y)
    gamma, weight = efl_factors(_check_gamma_v(gamma_v, hp), hp)
    return _result(_modulated_grad(x, y, _alpha_eff(y, hp), gamma, weight))


def _check_w(w_t):
    w = np.asarray(w_t, dtype=np.float64)
    if np.any(~(w > 0.0)):
        raise ParameterError("w_t must be > 0")
    return w


def eqlv2_focal(x, y, hp, gamma, w_t):
    w = _check_w(w_t)
    return _result(w * focal_loss(x, y, hp, gamma))


def eqlv2_focal_grad(x, y, hp, gamma, w_t):
    w = _check_w(w_t)
    return _result(w * focal_grad(x, y, hp, gamma))


def _quality_target(y, quality):
    q = np.asarray(quality, dtype=np.float64)
    if np.any(q < 0.0) or np.any(q > 1.0) or not np.all(np.isfinite(q)):
        raise ParameterError("quality must lie in [0, 1]")
    return np.where(y == 1, q, 0.0)


def eqfl(p, y, hp, gamma_v, quality=1.0):
    """Equalized quality focal loss evaluated at probability ``p``.

    Positives regress towards ``quality``; negatives towards 0.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise DomainError("p must lie in the open interval (0, 1)")
    y = _check_y(y)
    target = _quality_target(y, quality)
    gamma, weight = efl_factors(_check_gamma_v(gamma_v, hp), hp)
    ce = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    return _result(weight * np.abs(target - p) ** gamma * ce)


def _eqfl_parts(x, target):
    log_p, log_q = log_sigmoid(x), log_sigmoid(-x)
    p, q = np.exp(log_p), np.exp(log_q)
    diff = (1.0 - target) * p - target * q  # p - y' without cancellation
    ce = -(target * log_p + (1.0 - target) * log_q)
    return p, q, diff, ce


def eqfl_logits(x, y, hp, gamma_v, quality=1.0):
    """Same loss as :func:`eqfl`, parameterised by the logit."""
    x, y = _check_x(x), _check_y(y)
    target = _quality_target(y, quality)
    gamma, weight = efl_factors(_check_gamma_v(gamma_v, hp), hp)
    _, _, diff, ce = _eqfl_parts(x, target)
    return _result(weight * np.abs(diff) ** gamma * ce)


def eqfl_grad(x, y, hp, gamma_v, quality=1.0):
    """d eqfl / d logit, with the category factors held constant."""
    x, y = _check_x(x), _check_y(y)
    target = _quality_target(y, quality)
    gamma, weight = efl_factors(_check_gamma_v(gamma_v, hp), hp)
    return _result(_eqfl_grad(x, target, gamma, weight))


def _eqfl_grad(x, target, gamma, weight):
    p, q, diff, ce = _eqfl_parts(x, target)
    mag = np.abs(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = weight * np.sign(diff) * mag ** (gamma - 1.0) * (gamma * p * q * ce + mag * mag)
    return np.where(mag == 0.0, 0.0, g)


def category_factors(state, hp, targets):
    """Per-element (gamma, weight) arrays used by :func:`batch_loss`."""
    C = targets.shape[1]
    if hp.variant is Variant.EFL or hp.variant is Variant.EQFL:
        gamma = np.broadcast_to(state.gamma, targets.shape)
        weight = np.broadcast_to(state.weight, targets.shape)
    elif hp.variant is Variant.EQLV2_FOCAL:
        pos_w, neg_w = state.eqlv2_weights()
        gamma = np.full(targets.shape, hp.gamma_b)
        weight = np.where(targets == 1, pos_w, neg_w)
    else:
        gamma = np.full(targets.shape, hp.gamma_b)
        weight = np.ones((1, C))
        weight = np.broadcast_to(weight, targets.shape)
    return gamma, weight


def batch_loss(scores, targets, hp, state, quality=None):
    """Total loss over an N x C batch and its gradient w.r.t. the scores.

    Both are divided by ``max(1, number of positive targets)``. The category
    state is read as a constant; no gradient flows through it.
    """
    scores = _check_x(scores)
    targets = _check_y(targets)
    if scores.ndim != 2 or scores.shape != targets.shape:
        raise ContractError(f"scores {scores.shape} and targets {targets.shape} must be equal N x C arrays")
    if state.num_categories != scores.shape[1]:
        raise ContractError(f"state tracks {state.num_categories} categories, batch has {scores.shape[1]}")
    if state.gamma_b != hp.gamma_b or state.s != hp.s:
        raise ContractError("state and loss hyper-parameters disagree on gamma_b or s")

    norm = max(1, int(targets.sum()))
    gamma, weight = category_factors(state, hp, targets)
    if hp.variant is Variant.EQFL:
        q = np.ones(targets.shape) if quality is None else np.asarray(quality, dtype=np.float64)
        if q.shape != targets.shape:
            raise ContractError("quality must match the targets shape")
        target = _quality_target(targets, q)
        _, _, diff, ce = _eqfl_parts(scores, target)
        elem = weight * np.abs(diff) ** gamma * ce
        grad = _eqfl_grad(scores, target, gamma, weight)
    else:
        alpha = _alpha_eff(targets, hp)
        elem = _modulated(scores, targets, alpha, gamma, weight)
        grad = _modulated_grad(scores, targets, alpha, gamma, weight)
    # fixed row-major summation order keeps the total reproducible
    total = float(np.sum(elem.ravel())) / norm
    return total, grad / norm
