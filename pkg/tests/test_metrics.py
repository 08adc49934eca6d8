import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqfocal.losses import LossHyperParams
from eqfocal.metrics import (ap_cls, curves_csv, evaluate, evaluate_scores, f1_at, loss_curves, margins,
                             margins_csv)
from eqfocal.errors import ParameterError
from eqfocal.synth import DatasetSpec, SyntheticDataset, make_dataset
from eqfocal.trainer import ModelParams

from oracles import brute_ap


def test_ap_hand_case():
    assert ap_cls([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == pytest.approx((1 + 2 / 3) / 2, rel=1e-15)


def test_ap_no_positives_is_nan():
    assert np.isnan(ap_cls([0.2, 0.1], [0, 0]))


def test_ap_ties_broken_by_index():
    assert ap_cls([0.5, 0.5], [0, 1]) == 0.5
    assert ap_cls([0.5, 0.5], [1, 0]) == 1.0


def test_ap_random_scores_match_prevalence():
    rng = np.random.default_rng(0)
    for prevalence in (0.05, 0.2, 0.5):
        labels = rng.random(10_000) < prevalence
        assert ap_cls(rng.random(10_000), labels) == pytest.approx(labels.mean(), abs=0.02)


@settings(max_examples=100, deadline=None)
@given(data=st.lists(st.tuples(st.integers(-20, 20), st.booleans()), min_size=1, max_size=40))
def test_ap_matches_brute_force_and_is_rank_invariant(data):
    scores = np.array([float(d[0]) for d in data])
    labels = np.array([d[1] for d in data])
    ref = brute_ap(scores.tolist(), labels.tolist())
    got = ap_cls(scores, labels)
    if np.isnan(ref):
        assert np.isnan(got)
        return
    assert got == pytest.approx(ref, abs=1e-12)
    assert ap_cls(np.exp(scores) * 3 + 1, labels) == pytest.approx(got, abs=1e-12)
    assert 0.0 < got <= 1.0


def test_f1():
    assert f1_at([0.9, 0.6, 0.2], [1, 0, 1]) == pytest.approx(0.5)
    assert f1_at([0.1], [0]) == 0.0


def _toy():
    spec = DatasetSpec(C=2, zipf_exponent=0.0, n_max=2, bg_ratio=1.0, feature_dim=2)
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    labels = np.array([0, 0, 1, 1, -1, -1])
    return SyntheticDataset(spec, X, labels, np.array([120, 5]), ["frequent", "rare"])


def test_perfect_separator():
    ds = _toy()
    model = ModelParams(np.array([[10.0, -10.0], [-10.0, 10.0]]), np.array([-5.0, -5.0]))
    rep = evaluate(model, ds)
    assert np.all(rep.ap_cls == 1.0) and np.all(rep.margin > 0)
    assert rep.group_ap == {"rare": 1.0, "common": pytest.approx(np.nan, nan_ok=True), "frequent": 1.0}
    assert rep.macro_ap == 1.0


def test_constant_model_zero_margin():
    ds = make_dataset(DatasetSpec(C=4, n_max=30, bg_ratio=2, feature_dim=4, seed=1))
    rep = evaluate(ModelParams(np.zeros((4, 4)), np.full(4, 0.3)), ds)
    assert np.allclose(rep.margin, 0.0, rtol=0, atol=1e-15)


def test_margins_match_brute_means():
    ds = make_dataset(DatasetSpec(C=3, zipf_exponent=1.0, n_max=12, bg_ratio=2, feature_dim=3, seed=5))
    rng = np.random.default_rng(2)
    model = ModelParams(rng.normal(size=(3, 3)), rng.normal(size=3))
    rows = margins(model, ds)
    assert [r[0] for r in rows] == [0, 1, 2]
    logits = ds.features @ model.W + model.b
    for j, _, m in rows:
        pos = [1 / (1 + np.exp(-logits[i, j])) for i in range(len(ds)) if ds.labels[i] == j]
        neg = [1 / (1 + np.exp(-logits[i, j])) for i in range(len(ds)) if ds.labels[i] != j]
        assert m == pytest.approx(sum(pos) / len(pos) - sum(neg) / len(neg), abs=1e-12)
    assert margins_csv(rows).splitlines()[0] == "category,group,margin"


def test_missing_positives_excluded_from_group_mean():
    ds = _toy()
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8], [0.3, 0.3], [0.1, 0.1]])
    ds.labels[ds.labels == 1] = -1
    rep = evaluate_scores(probs, ds)
    assert np.isnan(rep.ap_cls[1]) and np.isnan(rep.group_ap["rare"])
    assert rep.macro_ap == rep.ap_cls[0]
    assert ",rare,," in rep.percat_csv()


def test_report_csvs():
    ds = _toy()
    rep = evaluate_scores(np.full((6, 2), 0.5), ds)
    assert rep.percat_csv().splitlines()[0] == "category,group,ap_cls,f1,margin"
    groups = rep.groups_csv().splitlines()
    assert groups[0] == "group,n_categories,ap_cls,margin"
    assert [g.split(",")[0] for g in groups[1:]] == ["rare", "common", "frequent", "all"]


class TestCurves:
    X = np.linspace(-6, 6, 25)

    def values(self, gv, weighted):
        return np.array([r[3] for r in loss_curves([gv], self.X, weighted)])

    def test_gamma_v0_is_focal(self):
        from eqfocal.losses import focal_loss
        expected = focal_loss(self.X, np.ones_like(self.X), LossHyperParams(use_alpha=False), 2.0)
        assert np.array_equal(self.values(0.0, False), expected)
        assert np.array_equal(self.values(0.0, True), expected)

    def test_unweighted_ordering(self):
        for lo, hi in [(0.0, 2.0), (2.0, 8.0)]:
            assert np.all(self.values(hi, False) < self.values(lo, False))

    def test_weighted_hard_samples(self):
        w = dict(zip(self.X, self.values(8.0, True)))
        base = dict(zip(self.X, self.values(0.0, True)))
        assert w[-5.0] > base[-5.0]

    def test_easy_samples_vanish(self):
        rows = loss_curves([0.0, 4.0, 8.0], [5.0], True)
        assert all(r[3] < 0.03 for r in rows)

    def test_csv_and_validation(self):
        text = curves_csv(loss_curves([0.0, 2.0], [0.0], False))
        assert text.splitlines() == ["x_t,gamma_v,weighted,loss", f"0.0,0.0,0,{0.25 * math.log(2)!r}",
                                     f"0.0,2.0,0,{0.0625 * math.log(2)!r}"]
        with pytest.raises(ParameterError):
            loss_curves([9.0], self.X, True)
