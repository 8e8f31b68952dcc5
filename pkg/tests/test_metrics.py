import numpy as np
import pytest

from helpers import naive_lof
from robust_recourse.data import BINARY, CONTINUOUS, FeatureSpec
from robust_recourse.metrics import (MetricReport, l_mix, lof, report,
                                     robustness, validity)
from robust_recourse.models import LinearModel


def linear(theta):
    return LinearModel(theta=np.asarray(theta, dtype=float))


class FakeEnsemble:
    def __init__(self, members):
        self.members = members


class TestValidity:
    def test_all_above_threshold(self):
        m = linear([1.0, 0.0])
        ces = [np.array([1.0]), np.array([2.0])]
        assert validity(m, ces) == 1.0

    def test_none(self):
        m = linear([1.0, 0.0])
        assert validity(m, [np.array([-1.0])]) == 0.0

    def test_three_of_four(self):
        m = linear([1.0, 0.0])
        ces = [np.array([v]) for v in (1.0, 2.0, 3.0, -1.0)]
        assert validity(m, ces) == 0.75

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            validity(linear([1.0, 0.0]), [])

    def test_flagged_counts_invalid(self):
        from robust_recourse.recourse import Counterfactual
        cf = Counterfactual(x_c=np.array([5.0]), robust_logit=1.0,
                            baseline_logit=5.0, worst_theta=np.zeros(2),
                            l2=0.0, l0=0, l_mix=None, steps_used=1,
                            source="continuous", robust=False)
        assert validity(linear([1.0, 0.0]), [cf]) == 0.0


class TestRobustness:
    def test_singleton_base_equals_validity(self):
        m = linear([1.0, 0.0])
        ces = [np.array([v]) for v in (1.0, -2.0, 3.0)]
        ens = FakeEnsemble([m])
        assert robustness(ens, ces) == validity(m, ces)

    def test_one_dissenter_halves(self):
        agree = linear([1.0, 0.0])
        dissent = linear([-1.0, 0.0])
        ces = [np.array([1.0]), np.array([-1.0])]
        # member set classifies ce1 as (1,0) -> not unanimous; ce2 as (0,1) -> no
        ens = FakeEnsemble([agree, dissent])
        assert robustness(ens, ces) == 0.0
        ens2 = FakeEnsemble([agree, agree])
        assert robustness(ens2, ces) == 0.5

    def test_monotone_in_ensemble_growth(self):
        rng = np.random.default_rng(0)
        members = [linear(rng.normal(size=3)) for _ in range(6)]
        ces = [rng.normal(size=2) for _ in range(10)]
        prev = 1.0
        for k in range(1, 7):
            r = robustness(FakeEnsemble(members[:k]), ces)
            assert r <= prev + 1e-12
            prev = r

    def test_empty_ensemble_errors(self):
        with pytest.raises(ValueError):
            robustness(FakeEnsemble([]), [np.zeros(2)])


class TestMixedDistance:
    def specs(self, ubar=1.0):
        return [
            FeatureSpec("c1", CONTINUOUS),
            FeatureSpec("c2", CONTINUOUS),
            FeatureSpec("g=a", BINARY, group="g", group_index=0, change_cost=ubar),
            FeatureSpec("g=b", BINARY, group="g", group_index=1, change_cost=ubar),
        ]

    def test_identical_is_zero(self):
        x = np.array([1.0, 2.0, 1.0, 0.0])
        assert l_mix(x, x, self.specs()) == 0.0

    def test_single_group_change_unit_weight(self):
        x1 = np.array([0.0, 0.0, 1.0, 0.0])
        x2 = np.array([0.0, 0.0, 0.0, 1.0])
        assert l_mix(x1, x2, self.specs()) == pytest.approx(1.0)

    def test_hand_formula(self):
        # continuous deltas (3, 4), one categorical change with weight 2
        x1 = np.array([0.0, 0.0, 1.0, 0.0])
        x2 = np.array([3.0, 4.0, 0.0, 1.0])
        assert l_mix(x1, x2, self.specs(ubar=2.0)) == pytest.approx(np.sqrt(27.0))

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x1 = rng.normal(size=4)
            x2 = rng.normal(size=4)
            d12 = l_mix(x1, x2, self.specs())
            assert d12 >= 0.0
            assert d12 == pytest.approx(l_mix(x2, x1, self.specs()))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            l_mix(np.zeros(3), np.zeros(3), self.specs())

    def test_ungrouped_binary_indicator(self):
        specs = [FeatureSpec("flag", BINARY, change_cost=3.0)]
        assert l_mix(np.array([0.0]), np.array([1.0]), specs) == pytest.approx(np.sqrt(3.0))


class TestLof:
    def test_duplicate_in_uniform_cluster_near_one(self):
        rng = np.random.default_rng(2)
        S = rng.uniform(size=(200, 2))
        x = S[17].copy()
        assert 0.9 <= lof(S, x, k=10) <= 1.1

    def test_far_query_matches_naive(self):
        S = np.array([[0.0], [1.0], [2.0], [3.0]])
        x = np.array([13.0])
        mine = lof(S, x, k=2)
        ref = naive_lof(S, x, k=2)
        assert mine > 1.0
        assert mine == pytest.approx(ref, abs=1e-9)

    def test_grid_interior_near_one(self):
        xs, ys = np.meshgrid(np.arange(10.0), np.arange(10.0))
        S = np.column_stack([xs.ravel(), ys.ravel()])
        interior = S[(S[:, 0] > 1) & (S[:, 0] < 8) & (S[:, 1] > 1) & (S[:, 1] < 8)]
        for pt in interior[::7]:
            val = lof(S, pt, k=4)
            ref = naive_lof(S, pt, k=4)
            assert val == pytest.approx(ref, abs=1e-9)
            assert abs(val - 1.0) <= 0.05

    def test_random_agreement_with_naive(self):
        rng = np.random.default_rng(3)
        S = rng.normal(size=(60, 3))
        for _ in range(10):
            x = rng.normal(size=3) * 2.0
            assert lof(S, x, k=5) == pytest.approx(naive_lof(S, x, k=5), abs=1e-9)

    def test_k_capped_at_reference_size(self):
        S = np.array([[0.0], [1.0], [2.0]])
        val = lof(S, np.array([0.5]), k=20)     # capped to |S| - 1
        assert np.isfinite(val)

    def test_too_small_reference_errors(self):
        with pytest.raises(ValueError):
            lof(np.array([[0.0]]), np.array([1.0]), k=1)


class TestReport:
    def test_report_fields_and_json(self):
        rng = np.random.default_rng(4)
        m = linear([1.0, 0.5, 0.0])
        specs = [FeatureSpec("a", CONTINUOUS), FeatureSpec("b", CONTINUOUS)]
        x0s = [rng.normal(size=2) for _ in range(4)]
        ces = [x + np.array([2.0, 0.0]) for x in x0s]
        ens = FakeEnsemble([m])
        rep = report(m, ces, x0s, specs, ensemble=ens,
                     lof_reference=rng.normal(size=(50, 2)), k=5)
        assert isinstance(rep, MetricReport)
        assert rep.n == 4
        assert 0.0 <= rep.validity <= 1.0
        assert rep.robustness <= rep.validity + 1e-12   # base is in the ensemble
        import json
        parsed = json.loads(rep.to_json())
        assert parsed["n"] == 4
        rows = rep.to_csv_rows()
        assert rows[0][0] == "index" and len(rows) == 5
