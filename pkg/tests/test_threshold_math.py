import math

import pytest
from hypothesis import given, settings, strategies as st

from bika.threshold_math import (
    AffineSignParams,
    DegenerateQuantizationError,
    DegenerateWeightError,
    DomainError,
    MixedItem,
    MixedThresholdSet,
    PiecewiseConstantFn,
    WeightedThreshold,
    WeightedThresholdSet,
    affine_to_threshold,
    decompose,
    decomposition_report,
    eval_piecewise,
    eval_weighted_threshold,
    quantize_mix,
    reconstruct,
    reconstruct_mixed,
    sample_piecewise,
)


@st.composite
def piecewise_fns(draw, max_slots=64, max_out=100.0):
    t = draw(st.integers(1, max_slots))
    deltas = draw(st.lists(st.floats(0.01, 10.0), min_size=t, max_size=t))
    start = draw(st.floats(-50.0, 50.0))
    bounds = [start]
    for d in deltas:
        bounds.append(bounds[-1] + d)
    outs = draw(st.lists(st.floats(-max_out, max_out), min_size=t, max_size=t))
    return PiecewiseConstantFn(tuple(bounds), tuple(outs))


def slot_probes(f):
    for i in range(f.num_slots):
        lo, hi = f.boundaries[i], f.boundaries[i + 1]
        yield i, lo
        yield i, lo + (hi - lo) / 2


class TestEvalPiecewise:
    def test_slot_lookup(self):
        f = PiecewiseConstantFn((0, 1, 2, 3), (-1, 1, 3))
        assert eval_piecewise(f, 1.5) == 1

    def test_single_slot(self):
        f = PiecewiseConstantFn((0, 1), (5,))
        assert eval_piecewise(f, 0) == 5

    def test_right_end_excluded(self):
        f = PiecewiseConstantFn((0, 1), (5,))
        with pytest.raises(DomainError):
            eval_piecewise(f, 1)

    def test_below_domain(self):
        f = PiecewiseConstantFn((0, 1), (5,))
        with pytest.raises(DomainError):
            eval_piecewise(f, -0.1)

    def test_invalid_boundaries(self):
        with pytest.raises(ValueError):
            PiecewiseConstantFn((0, 0), (1,))
        with pytest.raises(ValueError):
            PiecewiseConstantFn((0, 1, 2), (1,))


class TestWeightedThreshold:
    def test_fires_at_threshold(self):
        assert eval_weighted_threshold(WeightedThreshold(2, 1), 1) == 2

    def test_below_threshold(self):
        assert eval_weighted_threshold(WeightedThreshold(2, 1), 0.999) == -2

    def test_negative_weight(self):
        assert eval_weighted_threshold(WeightedThreshold(-1, 0), 5) == -1


class TestDecompose:
    def test_three_slot_example(self):
        f = PiecewiseConstantFn((0, 1, 2, 3), (-1, 1, 3))
        wts = decompose(f)
        assert [w.alpha for w in wts.items] == [1, 1, 1]
        assert [w.threshold for w in wts.items] == [0, 1, 2]
        assert [reconstruct(wts, x) for x in (0.5, 1.5, 2.5)] == [-1, 1, 3]

    def test_single_slot(self):
        wts = decompose(PiecewiseConstantFn((0, 1), (5,)))
        assert [(w.alpha, w.threshold) for w in wts.items] == [(5, 0)]

    def test_two_slot_reconstruction(self):
        f = PiecewiseConstantFn((0, 1, 2), (-1, 3))
        wts = decompose(f)
        assert [w.alpha for w in wts.items] == [1, 2]
        assert reconstruct(wts, 0.5) == -1
        assert reconstruct(wts, 1.5) == 3

    @settings(max_examples=150, deadline=None)
    @given(piecewise_fns())
    def test_exactness(self, f):
        wts = decompose(f)
        for i, x in slot_probes(f):
            got = reconstruct(wts, x)
            assert got == pytest.approx(f.outputs[i], rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(piecewise_fns())
    def test_closed_form_recurrences(self, f):
        alphas = [w.alpha for w in decompose(f).items]
        o = f.outputs
        assert o[0] == pytest.approx(alphas[0] - sum(alphas[1:]), rel=1e-9, abs=1e-9)
        for i in range(1, f.num_slots):
            assert o[i] == pytest.approx(o[i - 1] + 2 * alphas[i], rel=1e-9, abs=1e-9)


class TestReconstruct:
    def test_empty_sum(self):
        assert reconstruct(WeightedThresholdSet(()), 12.3) == 0

    def test_duplicated_thresholds(self):
        wts = WeightedThresholdSet(
            (WeightedThreshold(1, 0), WeightedThreshold(1, 0))
        )
        assert reconstruct(wts, 1) == 2


class TestQuantizeMix:
    def test_duplication(self):
        wts = WeightedThresholdSet(
            (WeightedThreshold(1, 0), WeightedThreshold(2, 1))
        )
        ms = quantize_mix(wts)
        assert ms.m == 3
        assert [(it.threshold, it.polarity) for it in ms.items] == [
            (0, 1), (1, 1), (1, 1)
        ]

    def test_rounding(self):
        ms = quantize_mix(WeightedThresholdSet((WeightedThreshold(1.4, 0),)))
        assert ms.m == 1
        assert ms.items[0] == MixedItem(0, 1)

    def test_ties_away_from_zero(self):
        assert quantize_mix(WeightedThresholdSet((WeightedThreshold(0.5, 0),))).m == 1
        assert quantize_mix(WeightedThresholdSet((WeightedThreshold(-0.5, 0),))).m == 1

    def test_all_zero_rounds_error(self):
        with pytest.raises(DegenerateQuantizationError):
            quantize_mix(WeightedThresholdSet((WeightedThreshold(0.2, 0),)))

    def test_negative_weight_polarity(self):
        ms = quantize_mix(WeightedThresholdSet((WeightedThreshold(-2, 1),)))
        assert ms.m == 2
        assert all(it.polarity == -1 for it in ms.items)
        # -2*Thres(x) at x=2 is -2; the two negative-polarity copies agree
        assert reconstruct_mixed(ms, 2) == -2
        assert reconstruct_mixed(ms, 0) == 2

    @settings(max_examples=100, deadline=None)
    @given(piecewise_fns(max_slots=16), st.randoms(use_true_random=False))
    def test_order_independence(self, f, rnd):
        try:
            ms = quantize_mix(decompose(f))
        except DegenerateQuantizationError:
            return
        items = list(ms.items)
        rnd.shuffle(items)
        shuffled = MixedThresholdSet(ms.m, tuple(items))
        for _, x in slot_probes(f):
            assert reconstruct_mixed(shuffled, x) == reconstruct_mixed(ms, x)

    @settings(max_examples=100, deadline=None)
    @given(piecewise_fns(max_slots=16))
    def test_output_range_and_parity(self, f):
        try:
            ms = quantize_mix(decompose(f))
        except DegenerateQuantizationError:
            return
        for _, x in slot_probes(f):
            v = reconstruct_mixed(ms, x)
            assert -ms.m <= v <= ms.m
            assert (v - ms.m) % 2 == 0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-50, 50), min_size=1, max_size=16))
    def test_even_integer_subclass_exact(self, outs):
        # force even pairwise differences and an even O_0 + O_{t-1}
        outs = [2 * o for o in outs]
        if all(o == 0 for o in outs):
            outs[0] = 2  # the zero function has no unit thresholds to emit
        f = PiecewiseConstantFn(tuple(range(len(outs) + 1)), tuple(outs))
        ms = quantize_mix(decompose(f))
        for i, x in slot_probes(f):
            assert reconstruct_mixed(ms, x) == f.outputs[i]

    @settings(max_examples=100, deadline=None)
    @given(piecewise_fns(max_slots=16))
    def test_error_bound(self, f):
        try:
            ms = quantize_mix(decompose(f))
        except DegenerateQuantizationError:
            return
        bound = f.num_slots / 2 + 1e-9
        for i, x in slot_probes(f):
            assert abs(reconstruct_mixed(ms, x) - f.outputs[i]) <= bound


class TestAffineToThreshold:
    def test_positive_weight(self):
        item = affine_to_threshold(AffineSignParams(2, -6))
        assert item == MixedItem(3, 1)

    def test_negative_weight(self):
        item = affine_to_threshold(AffineSignParams(-1, 2))
        assert item == MixedItem(2, -1)

    def test_zero_weight(self):
        with pytest.raises(DegenerateWeightError):
            affine_to_threshold(AffineSignParams(0, 1))


class TestMonotoneFidelity:
    @pytest.mark.parametrize("target", [math.tanh, lambda x: x ** 3 / 30,
                                        lambda x: math.exp(x / 3)])
    def test_error_non_increasing_in_slots(self, target):
        lo, hi = -3.0, 3.0
        grid = [lo + i * (hi - lo) / 999 for i in range(999)]
        errs = []
        for t in (8, 16, 32, 64):
            f = sample_piecewise(target, lo, hi, t)
            wts = decompose(f)
            errs.append(max(abs(reconstruct(wts, x) - target(x)) for x in grid))
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_decomposition_report_fields():
    rep = decomposition_report(PiecewiseConstantFn((0, 1, 2, 3), (-1, 1, 3)))
    assert rep == {
        "alphas": [1, 1, 1],
        "thresholds": [0, 1, 2],
        "m": 3,
        "max_abs_error": 0,
    }
