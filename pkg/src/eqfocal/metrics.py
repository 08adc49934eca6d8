"""Evaluation of trained per-category classifiers.

``ap_cls`` is a one-vs-rest classification average precision: the mean,
over positives, of the precision at each positive's rank. It is not a box
detection AP.
"""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .losses import LossHyperParams, batch_loss, efl, focal_loss
from .synth import GROUPS
from .trainer import predict


def ap_cls(scores, labels):
    """Rank-based AP; ties are broken by sample index. NaN without positives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, n_pos + 1) / ranks
    return float(precision.mean())


def f1_at(scores, labels, threshold=0.5):
    labels = np.asarray(labels).astype(bool)
    pred = np.asarray(scores) >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


@dataclass
class MetricsReport:
    groups: list
    counts: np.ndarray
    ap_cls: np.ndarray
    f1: np.ndarray
    mean_pos: np.ndarray
    mean_neg: np.ndarray
    group_ap: dict
    group_margin: dict
    macro_ap: float

    @property
    def margin(self):
        return self.mean_pos - self.mean_neg

    def percat_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "group", "ap_cls", "f1", "margin"])
        for j in range(len(self.groups)):
            w.writerow([j, self.groups[j], _num(self.ap_cls[j]), _num(self.f1[j]), _num(self.margin[j])])
        return buf.getvalue()

    def groups_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "n_categories", "ap_cls", "margin"])
        for g in GROUPS + ("all",):
            members = [j for j, gj in enumerate(self.groups) if g == "all" or gj == g]
            ap = self.macro_ap if g == "all" else self.group_ap[g]
            w.writerow([g, len(members), _num(ap), _num(self.group_margin[g])])
        return buf.getvalue()


def _num(v):
    return "" if v is None or np.isnan(v) else repr(float(v))


def _mean_or_nan(values):
    values = [v for v in values if not np.isnan(v)]
    return float(np.mean(values)) if values else float("nan")


def evaluate_scores(probs, dataset):
    probs = np.asarray(probs, dtype=np.float64)
    targets = dataset.targets()
    C = dataset.num_categories
    ap = np.empty(C)
    f1 = np.empty(C)
    mean_pos = np.empty(C)
    mean_neg = np.empty(C)
    for j in range(C):
        y = targets[:, j] == 1
        s = probs[:, j]
        ap[j] = ap_cls(s, y)
        f1[j] = f1_at(s, y)
        mean_pos[j] = s[y].mean() if y.any() else np.nan
        mean_neg[j] = s[~y].mean() if (~y).any() else np.nan
    margin = mean_pos - mean_neg
    group_ap, group_margin = {}, {}
    for g in GROUPS:
        members = [j for j in range(C) if dataset.groups[j] == g]
        group_ap[g] = _mean_or_nan(ap[members])
        group_margin[g] = _mean_or_nan(margin[members])
    group_margin["all"] = _mean_or_nan(margin)
    return MetricsReport(list(dataset.groups), np.asarray(dataset.counts), ap, f1, mean_pos, mean_neg,
                         group_ap, group_margin, _mean_or_nan(ap))


def evaluate(model, dataset):
    return evaluate_scores(predict(model, dataset.features), dataset)


def margins(model, dataset):
    """(category, group, margin) rows sorted by descending training count."""
    report = evaluate(model, dataset)
    order = np.argsort(-np.asarray(dataset.counts), kind="stable")
    return [(int(j), report.groups[j], float(report.margin[j])) for j in order]


def margins_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "group", "margin"])
    for j, g, m in rows:
        w.writerow([j, g, _num(m)])
    return buf.getvalue()


def dataset_loss(model, dataset, hp, state):
    logits, _ = model.forward(dataset.features)
    return batch_loss(logits, dataset.targets(), hp, state)[0]


def loss_curves(gamma_v_list, x_t, include_weighting, hp=None):
    """Rows (x_t, gamma_v, weighted, loss) of the single-category loss.

    The class-balance weight is ignored; ``include_weighting`` toggles the
    (gamma_b + gamma_v) / gamma_b factor.
    """
    hp = (LossHyperParams() if hp is None else hp).replace(use_alpha=False)
    x_t = np.asarray(x_t, dtype=np.float64)
    if not np.all(np.isfinite(x_t)):
        raise ParameterError("x_t grid must be finite")
    rows = []
    for gv in gamma_v_list:
        if not 0.0 <= gv <= hp.s:
            raise ParameterError(f"gamma_v={gv} outside [0, s={hp.s}]")
        if include_weighting:
            loss = efl(x_t, np.ones_like(x_t), hp, gv)
        else:
            loss = focal_loss(x_t, np.ones_like(x_t), hp, hp.gamma_b + gv)
        rows.extend((float(x), float(gv), bool(include_weighting), float(v))
                    for x, v in zip(np.atleast_1d(x_t), np.atleast_1d(loss)))
    return rows


def curves_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_t", "gamma_v", "weighted", "loss"])
    for x, gv, weighted, v in rows:
        w.writerow([repr(float(x)), repr(float(gv)), int(weighted), repr(float(v))])
    return buf.getvalue()
