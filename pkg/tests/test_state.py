from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqfocal.errors import ContractError, ParseError
from eqfocal.losses import LossHyperParams
from eqfocal.state import CategoryState, gather_stats

from oracles import brute_gather

GOLDEN = Path(__file__).parent / "data" / "state_v1.txt"
HP = LossHyperParams()


def fresh(C=1, **kw):
    return CategoryState.init(C, HP.replace(**kw) if kw else HP)


class TestGather:
    def test_zero(self):
        pos, neg = gather_stats(np.zeros((4, 3)), np.zeros((4, 3), int))
        assert np.all(pos == 0) and np.all(neg == 0)

    def test_single_entry(self):
        pos, neg = gather_stats([[-0.3]], [[1]])
        assert pos.tolist() == [0.3] and neg.tolist() == [0.0]

    def test_random_matches_loop(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=(3, 2))
        targets = rng.integers(0, 2, (3, 2))
        pos, neg = gather_stats(grads, targets)
        bp, bn = brute_gather(grads.tolist(), targets.tolist())
        assert np.allclose(pos, bp, rtol=0, atol=1e-15) and np.allclose(neg, bn, rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            gather_stats(np.zeros((2, 3)), np.zeros((3, 2)))


class TestUpdate:
    def test_worked_example(self):
        s = fresh().update([2.0], [10.0])
        assert s.g[0] == 0.2
        assert s.gamma_v[0] == pytest.approx(6.4, abs=1e-15)
        assert s.gamma[0] == pytest.approx(8.4, abs=1e-15)
        assert s.weight[0] == pytest.approx(4.2, abs=1e-15)

    def test_balanced_category_is_plain_focal(self):
        s = fresh(2).update([3.0, 5.0], [3.0, 1.0])
        assert s.g.tolist() == [1.0, 1.0]
        assert s.gamma.tolist() == [2.0, 2.0] and s.weight.tolist() == [1.0, 1.0]

    def test_no_positive_gradient_is_maximal(self):
        s = fresh().update([0.0], [0.7])
        assert (s.g[0], s.gamma[0], s.weight[0]) == (0.0, 10.0, 5.0)

    def test_accumulates(self):
        s = fresh().update([1.0], [10.0]).update([1.0], [0.0])
        assert s.pos_grad_acc[0] == 2.0 and s.neg_grad_acc[0] == 10.0 and s.steps == 2
        assert s.g[0] == pytest.approx(0.2)

    def test_ema_mode(self):
        s = CategoryState.init(1, HP, ema_decay=0.5)
        s.update([1.0], [4.0]).update([1.0], [0.0])
        assert s.pos_grad_acc[0] == 0.75 and s.neg_grad_acc[0] == 1.0

    @pytest.mark.parametrize("pos,neg", [([-1.0], [1.0]), ([1.0], [-0.1]), ([np.nan], [1.0])])
    def test_rejects_negative(self, pos, neg):
        with pytest.raises(ContractError):
            fresh().update(pos, neg)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ContractError):
            fresh(2).update([1.0], [1.0])

    def test_init(self):
        s = fresh(5)
        assert np.all(s.gamma == HP.gamma_b) and np.all(s.weight == 1.0) and np.all(s.g == 1.0)
        with pytest.raises(ContractError):
            fresh(0)

    def test_eqlv2_weights_balanced(self):
        pos_w, neg_w = fresh().eqlv2_weights()
        f = 1 / (1 + np.exp(-12 * 0.2))
        assert pos_w[0] == pytest.approx(1 + 4 * (1 - f)) and neg_w[0] == pytest.approx(f)


mags = st.lists(st.floats(0, 1e6, allow_subnormal=False), min_size=3, max_size=3)


@settings(max_examples=300, deadline=None)
@given(seq=st.lists(st.tuples(mags, mags), min_size=1, max_size=8), s=st.floats(0, 20))
def test_fuzzed_bounds(seq, s):
    state = fresh(3, s=s)
    for pos, neg in seq:
        state.update(pos, neg)
        assert np.all((state.g >= 0) & (state.g <= 1))
        assert np.all((state.gamma >= 2.0) & (state.gamma <= 2.0 + s))
        assert np.all((state.weight >= 1.0) & (state.weight <= (2.0 + s) / 2.0))


@settings(max_examples=200, deadline=None)
@given(seq=st.lists(st.tuples(mags, mags), min_size=1, max_size=6))
def test_s0_is_inert(seq):
    state = fresh(3, s=0.0)
    for pos, neg in seq:
        state.update(pos, neg)
    assert np.all(state.gamma == 2.0) and np.all(state.weight == 1.0)


@settings(max_examples=200, deadline=None)
@given(pos=st.floats(0, 100), extra=st.floats(0, 100), neg=st.floats(0, 100))
def test_monotone_response(pos, extra, neg):
    a = fresh().update([pos], [neg])
    b = fresh().update([pos + extra], [neg])
    assert b.g[0] >= a.g[0]
    assert b.gamma[0] <= a.gamma[0]


class TestSerialize:
    def roundtrip(self, state):
        back = CategoryState.deserialize(state.serialize())
        for name in ("pos_grad_acc", "neg_grad_acc", "g", "gamma", "weight"):
            assert np.array_equal(getattr(back, name), getattr(state, name))
        assert (back.num_categories, back.gamma_b, back.s, back.eps, back.ema_decay, back.steps) == \
            (state.num_categories, state.gamma_b, state.s, state.eps, state.ema_decay, state.steps)
        assert back.serialize() == state.serialize()

    def test_init_roundtrip(self):
        self.roundtrip(fresh(7))

    def test_updated_roundtrip(self):
        rng = np.random.default_rng(2)
        s = fresh(5)
        for _ in range(3):
            s.update(rng.random(5) * 1e-3, rng.random(5) / 3)
        self.roundtrip(s)

    def test_ema_roundtrip(self):
        s = CategoryState.init(2, HP.replace(s=3.5), eps=1e-9, ema_decay=0.99).update([0.1, 0.2], [0.3, 0.1])
        self.roundtrip(s)

    def test_golden_file(self, tmp_path):
        s = CategoryState.load(GOLDEN)
        assert s.steps == 4 and s.num_categories == 3
        assert s.g.tolist() == [0.2, 0.0, 1.0]
        assert s.weight[0] == pytest.approx(4.2)
        out = tmp_path / "state.txt"
        s.save(out)
        assert out.read_bytes() == GOLDEN.read_bytes()

    @pytest.mark.parametrize("text,line", [
        ("EQFOCAL-MODEL v1 C=1\n0 0.0 0.0\n", 1),
        ("EQFOCAL-STATE v2 C=1 gamma_b=2.0 s=8.0 eps=1e-12 ema_decay=none steps=0\n0 0.0 0.0\n", 1),
        ("EQFOCAL-STATE v1 C=x gamma_b=2.0 s=8.0 eps=1e-12 ema_decay=none steps=0\n0 0.0 0.0\n", 1),
        ("EQFOCAL-STATE v1 C=2 gamma_b=2.0 s=8.0 eps=1e-12 ema_decay=none steps=0\n0 0.0 0.0\n", 2),
        ("EQFOCAL-STATE v1 C=1 gamma_b=2.0 s=8.0 eps=1e-12 ema_decay=none steps=1\n0 1.0 abc\n", 2),
        ("", 1),
    ])
    def test_malformed(self, text, line):
        with pytest.raises(ParseError) as err:
            CategoryState.deserialize(text)
        assert err.value.line == line

    def test_error_reports_column(self):
        with pytest.raises(ParseError) as err:
            CategoryState.deserialize("EQFOCAL-STATE v1 C=x gamma_b=2.0 s=8.0 eps=1e-12 ema_decay=none steps=0\n")
        assert err.value.column == 18
        assert "line 1, column 18" in str(err.value)
