import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from camrobust import (
    DimensionMismatch,
    Image,
    KendallsWResult,
    LabelSetMismatch,
    LengthMismatch,
    NonFiniteValue,
    NotAPermutation,
    RboParams,
    RboVariant,
    SaliencyMap,
    ScoredLabel,
    SegmentationMap,
    ShapeError,
    SingleClassOnly,
    TooFewElements,
    ZeroDenominator,
    auc_from_scores,
    kendall_tau,
    kendalls_w,
    rank_segments,
    rbo,
    segment_mean_saliency,
    spearman_rho,
    stability_ratio,
)
from _oracles import auc_pair_count, rbo_reference, rho_pearson_of_ranks, tau_pair_scan

GB_MATRIX = [[3, 1, 6, 2, 4, 5], [3, 1, 6, 2, 5, 4], [3, 1, 6, 2, 4, 5]]


def permutation_strategy(n):
    return st.permutations(list(range(n)))


# ---------------------------------------------------------------------------
# segment aggregation and ranking


class TestSegmentRanking:
    def test_mean_saliency_per_segment(self):
        smap = SaliencyMap(values=np.array([[1.0, 2.0], [3.0, 5.0]], np.float32))
        seg = SegmentationMap(labels=np.array([[0, 0], [1, 1]], np.int32), segment_count=2)
        means = segment_mean_saliency(smap, seg)
        assert means.tolist() == [1.5, 4.0]

    def test_dimension_mismatch(self):
        smap = SaliencyMap(values=np.zeros((2, 3), np.float32))
        seg = SegmentationMap(labels=np.zeros((3, 3), np.int32), segment_count=1)
        with pytest.raises(DimensionMismatch):
            segment_mean_saliency(smap, seg)

    def test_rank_is_descending_with_id_tiebreak(self):
        ranked = rank_segments([0.2, 0.9, 0.2, 0.5])
        assert ranked.order == (1, 3, 0, 2)
        assert ranked.means == (0.9, 0.5, 0.2, 0.2)
        assert ranked.has_ties
        assert len(ranked) == 4

    def test_no_ties_flag(self):
        assert not rank_segments([3.0, 1.0, 2.0]).has_ties

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteValue):
            rank_segments([1.0, float("nan")])


# ---------------------------------------------------------------------------
# rank-biased overlap


class TestRbo:
    def test_worked_example(self):
        a, b = [1, 2, 3], [1, 3, 2]
        assert rbo(a, b, RboParams(persistence=0.9)) == pytest.approx(0.955, abs=1e-12)
        trunc = RboParams(persistence=0.9, variant=RboVariant.TRUNCATED)
        assert rbo(a, b, trunc) == pytest.approx(0.226, abs=1e-12)

    def test_reversed_pair(self):
        ext = rbo(["a", "b"], ["b", "a"], RboParams(persistence=0.9))
        trunc = rbo(
            ["a", "b"], ["b", "a"], RboParams(persistence=0.9, variant=RboVariant.TRUNCATED)
        )
        assert ext == pytest.approx(0.90, abs=1e-12)
        assert trunc == pytest.approx(0.09, abs=1e-12)

    def test_identity_is_exactly_one(self):
        for n in range(1, 9):
            order = list(range(n))
            assert rbo(order, order, RboParams(persistence=0.9)) == 1.0

    @pytest.mark.parametrize("p", [0.5, 0.9])
    def test_matches_reference_on_all_small_permutations(self, p):
        for n in range(1, 6):
            base = list(range(n))
            for perm in itertools.permutations(base):
                ref_ext, ref_trunc = rbo_reference(base, perm, p)
                got_ext = rbo(base, perm, RboParams(persistence=p))
                got_trunc = rbo(
                    base, perm, RboParams(persistence=p, variant=RboVariant.TRUNCATED)
                )
                assert got_ext == pytest.approx(ref_ext, abs=1e-12)
                assert got_trunc == pytest.approx(ref_trunc, abs=1e-12)
                assert got_ext >= got_trunc

    def test_symmetry(self):
        rng = random.Random(7)
        for _ in range(50):
            a = list(range(6))
            b = list(range(6))
            rng.shuffle(a)
            rng.shuffle(b)
            params = RboParams(persistence=0.9)
            assert rbo(a, b, params) == rbo(b, a, params)

    def test_bounds(self):
        rng = random.Random(13)
        for _ in range(200):
            n = rng.randint(1, 8)
            a = list(range(n))
            b = list(range(n))
            rng.shuffle(b)
            v = rbo(a, b, RboParams(persistence=rng.choice([0.5, 0.9, 0.99])))
            assert 0.0 <= v <= 1.0

    def test_length_and_id_set_checks(self):
        with pytest.raises(LengthMismatch):
            rbo([0, 1], [0, 1, 2])
        with pytest.raises(LabelSetMismatch):
            rbo([0, 1, 2], [0, 1, 5])

    def test_persistence_validation(self):
        with pytest.raises(ValueError):
            RboParams(persistence=1.0)
        with pytest.raises(ValueError):
            RboParams(persistence=0.0)


# ---------------------------------------------------------------------------
# rank correlations


class TestRankCorrelations:
    def test_tau_worked_example(self):
        assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4 / 6)

    def test_rho_worked_example(self):
        assert spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_identity_and_reversal(self):
        order = list(range(5))
        assert kendall_tau(order, order) == 1.0
        assert kendall_tau(order, order[::-1]) == -1.0
        assert spearman_rho(order, order) == 1.0
        assert spearman_rho([1, 2, 3], [3, 2, 1]) == -1.0

    def test_too_few_elements(self):
        with pytest.raises(TooFewElements):
            kendall_tau([1], [1])
        with pytest.raises(TooFewElements):
            spearman_rho([1], [1])

    def test_id_set_mismatch(self):
        with pytest.raises(LabelSetMismatch):
            kendall_tau([0, 1], [0, 2])
        with pytest.raises(LabelSetMismatch):
            spearman_rho([0, 1], [0, 2])

    @given(permutation_strategy(6), permutation_strategy(6))
    def test_tau_matches_pair_scan(self, a, b):
        assert kendall_tau(a, b) == pytest.approx(tau_pair_scan(a, b), abs=1e-12)

    @given(permutation_strategy(6), permutation_strategy(6))
    def test_rho_matches_pearson_of_ranks(self, a, b):
        assert spearman_rho(a, b) == pytest.approx(rho_pearson_of_ranks(a, b), abs=1e-12)

    @given(permutation_strategy(5), permutation_strategy(5))
    def test_symmetry(self, a, b):
        assert kendall_tau(a, b) == kendall_tau(b, a)
        assert spearman_rho(a, b) == pytest.approx(spearman_rho(b, a), abs=1e-15)


# ---------------------------------------------------------------------------
# Kendall's W


class TestKendallsW:
    def test_blur_ablation_matrix(self):
        result = kendalls_w(GB_MATRIX)
        assert result.w == pytest.approx(float(Fraction(1842, 1890)), abs=1e-12)
        assert result.p_value < 0.01
        assert result.p_method == "exact"

    def test_identical_rows_give_exactly_one(self):
        result = kendalls_w([[3, 1, 6, 2, 4, 5]] * 3)
        assert result.w == 1.0
        assert result.p_value < 0.01

    def test_exact_null_regression_values(self):
        # 16 of the 720^2 free rater pairs reach the blur matrix's S;
        # only the identity pair reaches perfect concordance
        gb = kendalls_w(GB_MATRIX, p_method="exact")
        assert gb.p_value == pytest.approx(16 / 518400, rel=1e-12)
        perfect = kendalls_w([[3, 1, 6, 2, 4, 5]] * 3, p_method="exact")
        assert perfect.p_value == pytest.approx(1 / 518400, rel=1e-12)

    def test_chi2_fallback_regression_values(self):
        # the approximation is anti-conservative here: both p-values land
        # above 0.01 despite near-perfect and perfect concordance
        gb = kendalls_w(GB_MATRIX, p_method="chi2")
        assert gb.p_method == "chi2"
        assert gb.p_value == pytest.approx(0.012120355962, abs=1e-9)
        perfect = kendalls_w([[3, 1, 6, 2, 4, 5]] * 3, p_method="chi2")
        assert perfect.p_value == pytest.approx(0.010362337916, abs=1e-9)

    def test_reversed_rows_give_zero(self):
        result = kendalls_w([[1, 2, 3, 4], [4, 3, 2, 1]])
        assert result.w == 0.0

    def test_item_relabeling_invariance(self):
        # applying one permutation to the columns of every row keeps W
        base = np.array(GB_MATRIX)
        rng = np.random.default_rng(3)
        for _ in range(10):
            cols = rng.permutation(base.shape[1])
            assert kendalls_w(base[:, cols]).w == pytest.approx(kendalls_w(base).w)

    def test_row_order_invariance(self):
        rows = [[1, 3, 2], [2, 1, 3], [3, 2, 1]]
        w0 = kendalls_w(rows).w
        for perm in itertools.permutations(rows):
            assert kendalls_w(list(perm)).w == pytest.approx(w0)

    def test_shape_and_permutation_errors(self):
        with pytest.raises(ShapeError):
            kendalls_w([1, 2, 3])
        with pytest.raises(ShapeError):
            kendalls_w([[1, 2, 3]])
        with pytest.raises(NotAPermutation):
            kendalls_w([[1, 2, 2], [1, 2, 3]])
        with pytest.raises(NotAPermutation):
            kendalls_w([[0, 1, 2], [1, 2, 3]])
        with pytest.raises(ValueError):
            kendalls_w([[1, 2], [2, 1]], p_method="bogus")

    def test_result_is_typed(self):
        assert isinstance(kendalls_w([[1, 2], [1, 2]]), KendallsWResult)

    def test_chi2_used_when_exact_infeasible(self):
        # 10 raters over 10 items: (10!)^9 states, far past enumeration
        rng = np.random.default_rng(0)
        mat = np.stack([rng.permutation(10) + 1 for _ in range(10)])
        assert kendalls_w(mat).p_method == "chi2"


# ---------------------------------------------------------------------------
# AUC


class TestAuc:
    def scored(self, unchanged, changed):
        out = [ScoredLabel(score=v, class_changed=False) for v in unchanged]
        out += [ScoredLabel(score=v, class_changed=True) for v in changed]
        return out

    def test_perfect_separation(self):
        assert auc_from_scores(self.scored([0.8, 0.9], [0.1, 0.2])) == 1.0

    def test_all_ties(self):
        assert auc_from_scores(self.scored([0.5], [0.5])) == 0.5

    def test_partial_separation(self):
        assert auc_from_scores(self.scored([0.9, 0.4], [0.6, 0.1])) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(SingleClassOnly):
            auc_from_scores(self.scored([0.5, 0.6], []))
        with pytest.raises(SingleClassOnly):
            auc_from_scores(self.scored([], [0.5]))

    def test_score_bounds_enforced(self):
        with pytest.raises(ValueError):
            ScoredLabel(score=1.5, class_changed=True)
        with pytest.raises(ValueError):
            ScoredLabel(score=-0.1, class_changed=False)

    def test_matches_brute_force_exactly(self):
        rng = random.Random(99)
        for _ in range(300):
            n = rng.randint(2, 50)
            # draw from a small grid so ties actually occur
            pairs = [(rng.randint(0, 10) / 10.0, rng.random() < 0.5) for _ in range(n)]
            if not any(c for _, c in pairs):
                pairs[0] = (pairs[0][0], True)
            if all(c for _, c in pairs):
                pairs[0] = (pairs[0][0], False)
            samples = [ScoredLabel(score=s, class_changed=c) for s, c in pairs]
            assert auc_from_scores(samples) == auc_pair_count(pairs)

    def test_matches_mann_whitney(self):
        from scipy.stats import mannwhitneyu

        rng = random.Random(4)
        for _ in range(50):
            unchanged = [rng.random() for _ in range(rng.randint(1, 20))]
            changed = [rng.random() for _ in range(rng.randint(1, 20))]
            got = auc_from_scores(self.scored(unchanged, changed))
            u = mannwhitneyu(unchanged, changed).statistic
            assert got == pytest.approx(u / (len(unchanged) * len(changed)), abs=1e-12)


# ---------------------------------------------------------------------------
# stability ratio


class TestStability:
    def maps(self, a, b):
        return (
            SaliencyMap(values=np.array(a, np.float32)),
            SaliencyMap(values=np.array(b, np.float32)),
        )

    def test_hand_computed_quadruple(self):
        e_x, e_xp = self.maps([[0.0, 1.0]], [[0.5, 0.5]])  # L1 change = 1.0
        x = Image.from_float(np.zeros((8, 8, 3)))
        data = np.zeros((8, 8, 3))
        data[0, 0, 0] = 51 / 255  # single channel differs by exactly 0.2
        xp = Image.from_float(data)
        assert stability_ratio(e_x, e_xp, x, xp) == pytest.approx(1.0 / 0.2)

    def test_identical_explanations_give_zero(self):
        e_x, e_xp = self.maps([[0.3]], [[0.3]])
        x = Image.from_float(np.zeros((8, 8, 3)))
        xp = Image.from_float(np.full((8, 8, 3), 1.0))
        assert stability_ratio(e_x, e_xp, x, xp) == 0.0

    def test_identical_images_rejected(self):
        e_x, e_xp = self.maps([[0.0]], [[1.0]])
        x = Image(np.zeros((8, 8, 3), np.uint8))
        with pytest.raises(ZeroDenominator):
            stability_ratio(e_x, e_xp, x, x)

    def test_dimension_checks(self):
        e_x, _ = self.maps([[0.0]], [[1.0]])
        e_big = SaliencyMap(values=np.zeros((2, 2), np.float32))
        x = Image(np.zeros((8, 8, 3), np.uint8))
        xp = Image(np.full((8, 8, 3), 9, np.uint8))
        x9 = Image(np.zeros((9, 8, 3), np.uint8))
        with pytest.raises(DimensionMismatch):
            stability_ratio(e_x, e_big, x, xp)
        with pytest.raises(DimensionMismatch):
            stability_ratio(e_x, e_x, x, x9)
