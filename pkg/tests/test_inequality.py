import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occuprobe.errors import UndefinedDistributionError, ValidationError
from occuprobe.extract import FrequencyMatrix
from occuprobe.inequality import (
    OverRepPoint,
    cumulative_quantile,
    diversity_metrics,
    gini,
    lorenz,
    man_woman_range,
    overrep_factors,
    rank_distribution,
    relative_gini,
    top_jobs,
)

positive_counts = st.lists(st.integers(0, 1000), min_size=1, max_size=60).filter(
    lambda xs: any(x > 0 for x in xs)
)


class TestGini:
    def test_perfect_equality(self):
        assert gini([5, 5, 5, 5]) == 0.0

    def test_two_point_example(self):
        assert math.isclose(gini([1, 3]), 0.25, abs_tol=1e-12)

    def test_all_zero_rejected(self):
        with pytest.raises(UndefinedDistributionError):
            gini([0, 0, 0])
        with pytest.raises(UndefinedDistributionError):
            gini([])

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            gini([1, -1])

    @given(positive_counts)
    @settings(max_examples=100, deadline=None)
    def test_one_hot_and_range(self, xs):
        value = gini(xs)
        assert 0.0 <= value < 1.0

    @given(st.integers(2, 400))
    @settings(max_examples=50, deadline=None)
    def test_one_hot_vector(self, n):
        one_hot = [0] * (n - 1) + [7]
        assert abs(gini(one_hot) - (n - 1) / n) < 1e-12

    @given(positive_counts, st.floats(0.01, 1000.0))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, xs, k):
        assert abs(gini(xs) - gini([k * x for x in xs])) < 1e-12

    @given(positive_counts, st.randoms(use_true_random=False))
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariance(self, xs, rnd):
        shuffled = list(xs)
        rnd.shuffle(shuffled)
        assert abs(gini(xs) - gini(shuffled)) < 1e-12

    @given(positive_counts, st.data())
    @settings(max_examples=100, deadline=None)
    def test_majorization_monotonicity(self, xs, data):
        """Robin Hood transfers produce a majorized vector with lower gini."""
        a = sorted(xs, reverse=True)
        if len(a) < 2 or a[0] == a[-1]:
            return
        b = list(a)
        transfer = data.draw(st.integers(0, (b[0] - b[-1]) // 2))
        b[0] -= transfer
        b[-1] += transfer
        # sorting oracle: descending partial sums of a dominate b's
        pa, pb = np.cumsum(sorted(a, reverse=True)), np.cumsum(sorted(b, reverse=True))
        assert np.all(pa >= pb)
        assert gini(a) >= gini(b) - 1e-12


class TestRelativeGini:
    def test_identity_is_100(self):
        assert relative_gini(0.933, 0.933) == 100.0

    def test_paper_rounding_points(self):
        assert round(relative_gini(0.951, 0.933), 2) == 101.93
        assert round(relative_gini(0.929, 0.933), 2) == 99.57

    def test_zero_base_rejected(self):
        with pytest.raises(ValidationError):
            relative_gini(0.9, 0.0)


class TestQuantiles:
    def test_uniform_ten_jobs(self):
        dist = rank_distribution(Counter({f"j{i}": 10 for i in range(10)}))
        assert cumulative_quantile(dist, 0.5) == 5

    def test_ninety_ten(self):
        dist = rank_distribution(Counter({"a": 90, "b": 10}))
        assert cumulative_quantile(dist, 0.9) == 1

    def test_share_bounds(self):
        dist = rank_distribution(Counter({"a": 1}))
        with pytest.raises(ValidationError):
            cumulative_quantile(dist, 0.0)
        with pytest.raises(ValidationError):
            cumulative_quantile(dist, 1.5)

    @given(positive_counts, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_share(self, xs, s1, s2):
        row = Counter({f"j{i}": x for i, x in enumerate(xs) if x > 0})
        dist = rank_distribution(row)
        lo, hi = sorted((s1, s2))
        assert cumulative_quantile(dist, lo) <= cumulative_quantile(dist, hi)


class TestLorenz:
    def test_two_equal(self):
        assert lorenz([1, 1]) == [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]

    def test_one_three(self):
        assert lorenz([1, 3]) == [(0.0, 0.0), (0.5, 0.25), (1.0, 1.0)]

    def test_zero_four(self):
        assert lorenz([0, 4]) == [(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)]

    def test_all_zero_rejected(self):
        with pytest.raises(UndefinedDistributionError):
            lorenz([0, 0])

    @given(positive_counts)
    @settings(max_examples=100, deadline=None)
    def test_monotone_convex_below_diagonal(self, xs):
        points = lorenz(xs)
        assert points[0] == (0.0, 0.0)
        assert points[-1] == (1.0, 1.0)
        for (x0, y0), (x1, y1) in zip(points, points[1:]):
            assert x1 >= x0 and y1 >= y0 - 1e-12
        for x, y in points:
            assert y <= x + 1e-12


class TestTopJobs:
    def test_golden(self):
        row = Counter({"nurse": 50, "maid": 30, "cook": 20})
        top, cumsum = top_jobs(row, 2)
        assert top == [("nurse", 0.5), ("maid", 0.3)]
        assert math.isclose(cumsum, 0.8)

    def test_ties_break_lexicographically(self):
        row = Counter({"b": 10, "a": 10, "c": 5})
        top, _ = top_jobs(row, 2)
        assert [j for j, _p in top] == ["a", "b"]

    def test_k_larger_than_distinct(self):
        row = Counter({"a": 1, "b": 1})
        top, cumsum = top_jobs(row, 10)
        assert len(top) == 2
        assert math.isclose(cumsum, 1.0)

    def test_k_must_be_positive(self):
        with pytest.raises(ValidationError):
            top_jobs(Counter({"a": 1}), 0)


def _religion_matrix(cell_counts):
    """cell_counts: {(gender, value): {job: count}} over the religion scheme."""
    matrix = FrequencyMatrix()
    for (gender, value), jobs in cell_counts.items():
        key = f"religion|{gender}|{value}|"
        matrix.ensure_row(key)
        matrix.calls[key] = 1000
        for job, count in jobs.items():
            matrix.counts[key][job] = count
    return matrix


RELIGIONS = ("Buddhist", "Christian", "Hindu", "Jewish", "Muslim")


class TestOverRep:
    def test_equal_spread_lies_on_baseline(self, registry):
        # equal spread across values within each gender, unequal gender split
        cells = {}
        for value in RELIGIONS:
            cells[("man", value)] = {"clerk": 80}
            cells[("woman", value)] = {"clerk": 20}
        points = overrep_factors(_religion_matrix(cells), registry["religion"])
        assert len(points) == 5
        for point in points:
            assert math.isclose(point.man_factor, 1.0)
            assert math.isclose(point.woman_factor, 1.0)
            assert abs(point.distance) < 1e-12

    def test_concentrated_value_gets_full_factor(self, registry):
        cells = {}
        for value in registry["ethnicity"].values:
            cells[("man", value)] = {"nurse": 10}
            cells[("woman", value)] = {"nurse": 40 if value == "Asian" else 0}
        matrix = FrequencyMatrix()
        for (gender, value), jobs in cells.items():
            key = f"ethnicity|{gender}|{value}|"
            matrix.ensure_row(key)
            matrix.calls[key] = 1000
            for job, count in jobs.items():
                if count:
                    matrix.counts[key][job] = count
        points = overrep_factors(matrix, registry["ethnicity"])
        by_value = {p.value: p for p in points}
        assert math.isclose(by_value["Asian"].woman_factor, 4.0)
        for value in ("Black", "Hispanic", "White"):
            assert by_value[value].woman_factor == 0.0

    def test_zero_gender_mentions_flagged_not_zero(self, registry):
        cells = {("woman", value): {"nun": 5} for value in RELIGIONS}
        for value in RELIGIONS:
            cells[("man", value)] = {}
        points = overrep_factors(_religion_matrix(cells), registry["religion"])
        for point in points:
            assert point.man_factor is None
            assert point.woman_factor is not None

    def test_dominant_cell_is_scheme_maximum(self, registry):
        cells = {}
        for value in RELIGIONS:
            cells[("man", value)] = {"nun": 1}
            cells[("woman", value)] = {"nun": 50 if value == "Buddhist" else 2}
        points = overrep_factors(_religion_matrix(cells), registry["religion"])
        woman_factors = {p.value: p.woman_factor for p in points}
        assert max(woman_factors, key=woman_factors.get) == "Buddhist"

    def test_base_scheme_rejected(self, registry):
        with pytest.raises(ValidationError):
            overrep_factors(FrequencyMatrix(), registry["base"])

    def test_range_ranking(self):
        points = [
            OverRepPoint("a", "X", 1.0, 1.0, 2.0, 0.0, 0.0),
            OverRepPoint("b", "X", 1.0, 1.0, 1.0, 1.0, 0.0),
        ]
        ranges = man_woman_range(points)
        assert ranges["a"] == 2.0 and ranges["b"] == 0.0


class TestDiversityMetrics:
    def test_uniform_row(self):
        row = Counter({f"j{i}": 10 for i in range(20)})
        metrics = diversity_metrics(row)
        assert metrics["unique_jobs"] == 20
        assert math.isclose(metrics["top5_share"], 0.25)
        assert metrics["n_jobs_95"] == 19
