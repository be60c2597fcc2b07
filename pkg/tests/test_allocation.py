import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ctxbai.bandit import BanditInstance, Bounds
from ctxbai.allocation import (
    AllocationTable,
    RateReport,
    gap_variance,
    instance_allocation,
    lower_bound_rate,
    maximin_objective,
    omega,
    optimal_allocation,
    oracle_maximin_allocation,
    uniform_allocation,
    upper_bound_rate,
)

WIDE = Bounds(c_sigma2=1e4, c_nu=1e8)
sd_tables = st.integers(2, 6).flatmap(
    lambda K: st.integers(1, 3).flatmap(
        lambda M: arrays(float, (K, M), elements=st.floats(0.05, 20.0))
    )
)


def equal_gap_instance(sds, probs=None, gap=1.0):
    K, M = np.shape(sds)
    means = np.zeros((K, M))
    means[0] = gap
    return BanditInstance.gaussian(means, sds, probs, bounds=WIDE)


class TestTable:
    def test_validation(self):
        with pytest.raises(ValueError):
            AllocationTable([[0.5, 0.5], [0.5, 0.4]])
        with pytest.raises(ValueError):
            AllocationTable([[1.0], [0.0]])
        with pytest.raises(ValueError):
            AllocationTable([0.5, 0.5])
        assert AllocationTable([[1.0]]).K == 1

    def test_uniform(self):
        assert np.all(uniform_allocation(2).w == 0.5)
        w = uniform_allocation(5, 3)
        assert w.w.shape == (5, 3) and np.all(w.w == 0.2)
        assert np.all(uniform_allocation(1).w == 1.0)


class TestClosedForm:
    def test_two_arm_example(self):
        w = optimal_allocation([1.0, 2.0], best=0)
        assert w.w[:, 0] == pytest.approx([1 / 3, 2 / 3], abs=1e-15)
        assert optimal_allocation([1.0, 1.0], 0).w[:, 0].tolist() == [0.5, 0.5]

    def test_three_arm_example(self):
        w = optimal_allocation([2.0, 1.0, 1.0], best=0).w[:, 0]
        assert w[0] == pytest.approx(2 / (2 + math.sqrt(2)), abs=1e-15)
        # frozen oracle values (grid search at step 1e-3 gives 0.586, 0.207, 0.207)
        assert w == pytest.approx([0.5857864376269049, 0.20710678118654752, 0.20710678118654752], abs=1e-15)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            optimal_allocation([1.0, 0.0], 0)
        with pytest.raises(ValueError):
            optimal_allocation([1.0], 0)
        with pytest.raises(ValueError):
            optimal_allocation([1.0, 1.0], 2)

    @given(sd_tables, st.data())
    def test_kkt_equalisation(self, sds, data):
        best = data.draw(st.integers(0, sds.shape[0] - 1))
        w = optimal_allocation(sds, best).w
        ratio = np.delete(sds**2 / w, best, axis=0)
        assert np.all(np.ptp(ratio, axis=0) <= 1e-9 * max(1.0, ratio.max()))
        assert np.all(np.abs(w.sum(axis=0) - 1.0) <= 1e-12)
        assert np.all(w > 0)

    @settings(max_examples=1000)
    @given(st.floats(0.05, 20.0), st.floats(0.05, 20.0))
    def test_two_arm_reduction(self, s1, s2):
        w = optimal_allocation([s1, s2], 0).w[:, 0]
        assert abs(w[0] - s1 / (s1 + s2)) <= 1e-15
        assert abs(w[1] - s2 / (s1 + s2)) <= 1e-15

    @given(sd_tables, st.floats(0.1, 10.0))
    def test_scale_covariance(self, sds, c):
        sds = np.clip(sds, 0.5, 5.0)
        w1 = optimal_allocation(sds, 0).w
        w2 = optimal_allocation(c * sds, 0).w
        assert np.allclose(w1, w2, rtol=0, atol=1e-14)
        v1, _ = maximin_objective(equal_gap_instance(sds), w1)
        v2, _ = maximin_objective(equal_gap_instance(c * sds), w2)
        assert v2 == pytest.approx(v1 / c**2, rel=1e-12)

    def test_relabelling_symmetric_arms(self):
        w = optimal_allocation([[1.5], [0.7], [0.7], [2.0]], 0).w[:, 0]
        assert w[1] == w[2]


class TestObjective:
    def test_omega_examples(self):
        inst = equal_gap_instance([[1.0], [1.0]])
        assert omega(inst, uniform_allocation(2), 1) == 4.0
        inst = equal_gap_instance([[1.0], [2.0]])
        assert omega(inst, instance_allocation(inst), 1) == pytest.approx(9.0, abs=1e-12)
        # contexts with per-context terms 4 and 9 average to 6.5
        inst = equal_gap_instance([[1.0, 1.0], [1.0, 2.0]], [0.5, 0.5])
        w = AllocationTable([[0.5, 1 / 3], [0.5, 2 / 3]])
        assert omega(inst, w, 1) == pytest.approx(6.5, abs=1e-12)
        with pytest.raises(ValueError):
            omega(inst, w, 0)

    def test_maximin_example(self):
        inst = BanditInstance.gaussian([0.25, 0.0], [1.0, 1.0])
        value, binding = maximin_objective(inst, uniform_allocation(2))
        assert value == 0.0078125 and binding == 1

    def test_binding_tie_goes_to_lowest_arm(self):
        inst = equal_gap_instance([[1.0], [1.0], [1.0]])
        assert maximin_objective(inst, uniform_allocation(3))[1] == 1

    @given(sd_tables)
    def test_formula_value_equals_lower_bound(self, sds):
        inst = equal_gap_instance(sds, gap=0.5)
        value, _ = maximin_objective(inst, instance_allocation(inst))
        assert value == pytest.approx(lower_bound_rate(inst), rel=1e-12)

    @settings(max_examples=200)
    @given(
        st.integers(2, 5),
        st.integers(1, 3),
        st.integers(0, 2**32 - 1),
    )
    def test_no_allocation_beats_formula_where_it_is_optimal(self, K, M, seed):
        # K = 2 (any contexts, any gaps) or one context with equal gaps
        rng = np.random.default_rng(seed)
        if K > 2:
            M = 1
        sds = rng.uniform(0.5, 2.0, (K, M))
        means = np.zeros((K, M))
        means[0] = 1.0
        if K == 2:
            means[1] = rng.uniform(-1.0, 0.9, M)
        inst = BanditInstance.gaussian(means, sds, rng.dirichlet(np.ones(M)) * 0.999 + 0.001 / M)
        star, _ = maximin_objective(inst, instance_allocation(inst))
        for _ in range(20):
            w = rng.dirichlet(np.ones(K), size=M).T
            assert maximin_objective(inst, w)[0] <= star + 1e-12

    def test_closed_form_is_not_the_joint_maximin(self):
        # With K >= 3 and several contexts the maximin does not separate by
        # context: shifting suboptimal mass across contexts beats the formula.
        inst = equal_gap_instance([[1.0, 1.0], [2.0, 0.1], [0.1, 2.0]], [0.5, 0.5])
        w = instance_allocation(inst)
        assert omega(inst, w, 1) == pytest.approx(9.015, abs=1e-3)
        grid, grid_value = oracle_maximin_allocation(inst)
        assert omega(inst, grid, 1) == pytest.approx(6.175, abs=1e-3)
        assert grid_value > maximin_objective(inst, w)[0] + 0.02


class TestOracle:
    def test_two_arm_bracket(self):
        inst = equal_gap_instance([[1.0], [2.0]])
        w, value = oracle_maximin_allocation(inst, 1e-3)
        assert 0.332 <= w.w[0, 0] <= 0.335
        assert value <= maximin_objective(inst, instance_allocation(inst))[0]

    def test_symmetric_two_arm(self):
        w, _ = oracle_maximin_allocation(equal_gap_instance([[1.0], [1.0]]))
        assert 0.499 <= w.w[0, 0] <= 0.501

    def test_three_arm_value(self):
        inst = equal_gap_instance([[2.0], [1.0], [1.0]])
        _, value = oracle_maximin_allocation(inst, 1e-3)
        star, _ = maximin_objective(inst, instance_allocation(inst))
        assert abs(value - star) <= 1e-4

    def test_contexts_two_arms_match_formula(self):
        inst = equal_gap_instance([[1.0, 0.6, 1.8], [1.7, 1.2, 0.5]], [0.2, 0.3, 0.5])
        w, value = oracle_maximin_allocation(inst, 1e-3)
        star, _ = maximin_objective(inst, instance_allocation(inst))
        assert star >= value - 1e-9
        assert np.max(np.abs(w.w - instance_allocation(inst).w)) <= 2e-3

    def test_limits(self):
        with pytest.raises(ValueError):
            oracle_maximin_allocation(equal_gap_instance(np.ones((6, 1))))
        with pytest.raises(ValueError):
            oracle_maximin_allocation(equal_gap_instance(np.ones((2, 4))))
        with pytest.raises(ValueError):
            oracle_maximin_allocation(equal_gap_instance(np.ones((2, 1))), grid_step=1e-4)


class TestRates:
    def test_lower_bound_examples(self):
        assert lower_bound_rate(BanditInstance.gaussian([0.25, 0.0], [1.0, 1.0])) == 0.0078125
        assert lower_bound_rate(BanditInstance.gaussian([0.2, 0.0], [3.0, 1.0])) == pytest.approx(0.00125, abs=1e-17)

    def test_lower_bound_uses_smallest_gap(self):
        inst = BanditInstance.gaussian([1.0, 0.5, 0.8], [1.0, 1.0, 1.0])
        root = 1.0 + math.sqrt(2.0)
        assert lower_bound_rate(inst) == pytest.approx(0.04 / (2 * root**2), rel=1e-14)

    def test_equal_variance_two_arm_bernoulli(self):
        # p(1-p) is symmetric about 1/2, so these arms share one variance
        inst = BanditInstance.bernoulli([0.55, 0.45])
        var = 0.55 * 0.45
        uniform_value, _ = maximin_objective(inst, uniform_allocation(2))
        assert uniform_value == pytest.approx(0.01 / (4 * 2 * var), rel=1e-12)
        assert lower_bound_rate(inst) == pytest.approx(uniform_value, rel=1e-12)

    def test_equal_variances_three_arms_favour_best_arm(self):
        # Under the variance functional, uniform is not the maximiser for K >= 3.
        inst = BanditInstance.gaussian([[1.0], [0.9], [0.9]], 0.5)
        w = instance_allocation(inst).w[:, 0]
        assert w[0] == pytest.approx(1 / (1 + math.sqrt(2)), abs=1e-15)
        assert maximin_objective(inst, w)[0] > maximin_objective(inst, uniform_allocation(3))[0]

    def test_upper_equals_lower_for_constant_gaps(self):
        inst = BanditInstance.gaussian([[1.0, 2.0], [0.7, 1.7], [0.5, 1.5]], [[1.0, 2.0], [0.5, 1.5], [1.2, 0.8]])
        rep = upper_bound_rate(inst)
        assert rep.context_constant_gaps
        assert rep.binding_arm == 1
        assert rep.upper_exponent == pytest.approx(lower_bound_rate(inst), rel=1e-12)
        assert 0 < rep.upper_exponent / rep.lower_exponent <= 1 + 1e-9

    def test_upper_bound_extra_term(self):
        # gaps per context 0.1 and 0.3, marginal gap 0.2
        inst = BanditInstance.gaussian([[0.1, 0.3], [0.0, 0.0]], 1.0, [0.5, 0.5])
        assert gap_variance(inst)[1] == pytest.approx(4.0 + 0.01, abs=1e-14)
        rep = upper_bound_rate(inst)
        assert rep.upper_exponent == pytest.approx(0.04 / (2 * 4.01), rel=1e-14)
        assert not rep.context_constant_gaps
        assert rep.upper_exponent < rep.lower_exponent

    @given(sd_tables)
    def test_upper_bound_below_maximin_with_constant_gaps(self, sds):
        inst = equal_gap_instance(sds)
        star, _ = maximin_objective(inst, instance_allocation(inst))
        assert upper_bound_rate(inst).upper_exponent <= star + 1e-12

    def test_report_round_trip(self, ctx_instance):
        rep = upper_bound_rate(ctx_instance)
        back = RateReport.from_dict(rep.to_dict())
        assert back.to_dict() == rep.to_dict()
        assert math.isinf(back.per_arm_upper[ctx_instance.best])
        assert rep.per_arm_omega[ctx_instance.best] == 0.0
