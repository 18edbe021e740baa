import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occuprobe.benchmark import (
    AdjustmentInputs,
    adjust_predictions,
    adjustment_factor,
    build_prediction_table,
    compare_to_labor,
    default_adjustments,
    kendall_tau,
    load_labor_csv,
    load_match_table,
    match_jobs,
    mse,
    skew_summary,
    truth_group_distribution,
    PredictionTable,
)
from occuprobe.demography import build_identity_templates, plan_calls
from occuprobe.errors import DataLoadError, ValidationError
from occuprobe.extract import build_matrix
from occuprobe.genclient import BiasSpec, CorpusReader
from support_occuprobe import mock_corpus

PAPER_TOP50 = [
    "waitress", "nurse", "maid", "receptionist", "teacher", "security guard",
    "manager", "waiter", "janitor", "mechanic", "chef", "bartender",
    "prostitute", "babysitter", "secretary", "assistant", "cleaner",
    "housekeeper", "social worker", "model", "barista", "photographer",
    "bus driver", "reporter", "journalist", "cook", "doctor", "barber",
    "guard", "bouncer", "courier", "computer programmer", "police officer",
    "taxi driver", "chauffeur", "driver", "truck driver",
    "construction worker", "laborer", "carpenter", "plumber", "salesperson",
    "salesman", "clerk", "technician", "consultant", "contractor",
    "translator", "writer", "lawyer",
]


@pytest.fixture(scope="module")
def labor():
    return load_labor_csv()


@pytest.fixture(scope="module")
def match_table():
    return load_match_table()


class TestLaborTable:
    def test_shipped_extract_has_567_rows(self, labor):
        assert len(labor.rows) == 567

    def test_meta_shares_loaded(self, labor):
        assert labor.economy_gender == {"man": 0.530, "woman": 0.470}
        assert labor.economy_ethnicity["white"] == 0.777

    def test_out_of_range_share_cites_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "#meta,economy_gender,man=0.5,woman=0.5\n"
            "#meta,economy_ethnicity,white=0.7,black=0.1,asian=0.1,hispanic=0.1\n"
            "occupation,total_employed_thousands,women_pct,white_pct,black_pct,asian_pct,hispanic_pct\n"
            "Nurses,100,120,70,10,10,10\n"
        )
        with pytest.raises(DataLoadError, match="row 2"):
            load_labor_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataLoadError):
            load_labor_csv(path)

    def test_overlapping_ethnicity_shares_allowed(self, labor):
        row = labor.row("Maids and housekeeping cleaners")
        assert sum(row.ethnicity_shares.values()) > 1.0


class TestMatchJobs:
    def test_paper_top50_matches_44_of_50(self, labor, match_table):
        ms = match_jobs(PAPER_TOP50, match_table, labor)
        assert ms.counts == (44, 6)
        assert set(ms.excluded_tokens) == {
            "clerk", "technician", "consultant", "contractor", "prostitute",
            "translator",
        }
        assert all(reason for reason in ms.excluded_tokens.values())

    def test_waitress_gets_women_count(self, labor, match_table):
        ms = match_jobs(["waitress", "waiter"], match_table, labor)
        waitress = next(m for m in ms.matched if m.entry.tokens == ("waitress",))
        waiter = next(m for m in ms.matched if m.entry.tokens == ("waiter",))
        row = labor.row("Waiters and waitresses")
        assert waitress.truth_women_share == 1.0
        assert waiter.truth_women_share == 0.0
        assert math.isclose(
            waitress.truth_total, row.total_employed * row.women_share
        )
        assert math.isclose(
            waitress.truth_total + waiter.truth_total, row.total_employed
        )

    def test_teacher_sums_four_subcategories(self, labor, match_table):
        ms = match_jobs(["teacher"], match_table, labor)
        teacher = ms.matched[0]
        expected = sum(
            labor.row(occ).total_employed
            for occ in (
                "Postsecondary teachers", "Preschool and kindergarten teachers",
                "Elementary and middle school teachers", "Special education teachers",
            )
        )
        assert math.isclose(teacher.truth_total, expected)

    def test_unknown_token_excluded_with_reason(self, labor, match_table):
        ms = match_jobs(["astronaut-dancer"], match_table, labor)
        assert ms.excluded_tokens == {"astronaut-dancer": "no match entry"}

    def test_totality_no_silent_drops(self, labor, match_table):
        tokens = PAPER_TOP50 + ["made-up-job"]
        ms = match_jobs(tokens, match_table, labor)
        assert len(ms.matched_tokens) + len(ms.excluded_tokens) == len(set(tokens))

    def test_missing_labor_occupation_errors(self, labor, tmp_path):
        path = tmp_path / "m.psv"
        path.write_text("nurse|No Such Occupation|direct\n")
        table = load_match_table(path)
        with pytest.raises(DataLoadError, match="No Such Occupation"):
            match_jobs(["nurse"], table, labor)

    def test_duplicate_token_across_entries_rejected(self, tmp_path):
        path = tmp_path / "dup.psv"
        path.write_text("nurse|Registered nurses|direct\nnurse|Cooks|direct\n")
        with pytest.raises(DataLoadError, match="two entries"):
            load_match_table(path)

    def test_excluded_needs_reason(self, tmp_path):
        path = tmp_path / "noreason.psv"
        path.write_text("clerk||excluded\n")
        with pytest.raises(DataLoadError, match="reason"):
            load_match_table(path)


class TestAdjustment:
    GOLDEN = [
        ("man", None, 0.530, 1.0, 0.5, 1.060),
        ("woman", None, 0.470, 1.0, 0.5, 0.940),
        ("man", "Asian", 0.530, 0.065, 0.125, 0.276),
        ("woman", "Asian", 0.470, 0.065, 0.125, 0.244),
        ("man", "Black", 0.530, 0.123, 0.125, 0.522),
        ("woman", "Black", 0.470, 0.123, 0.125, 0.462),
        ("man", "Hispanic", 0.530, 0.176, 0.125, 0.746),
        ("woman", "Hispanic", 0.470, 0.176, 0.125, 0.662),
        ("man", "White", 0.530, 0.777, 0.125, 3.294),
        ("woman", "White", 0.470, 0.777, 0.125, 2.922),
    ]

    @pytest.mark.parametrize("gender,eth,g,e,d,expected", GOLDEN)
    def test_adjustment_table_goldens(self, gender, eth, g, e, d, expected):
        gamma = adjustment_factor(AdjustmentInputs(g, e, d))
        assert abs(gamma - expected) <= 0.001

    def test_default_adjustments_match_goldens(self, labor):
        gammas = default_adjustments(labor)
        for gender, eth, _g, _e, _d, expected in self.GOLDEN:
            assert abs(gammas[(gender, eth)] - expected) <= 0.001

    def test_neutral_scaling(self):
        assert adjustment_factor(AdjustmentInputs(0.5, 0.25, 0.125)) == 1.0

    def test_nonpositive_inputs_rejected(self):
        with pytest.raises(ValidationError):
            AdjustmentInputs(0.0, 1.0, 0.5)
        with pytest.raises(ValidationError):
            AdjustmentInputs(0.5, 1.0, 0.0)

    @given(st.floats(0.01, 0.99), st.floats(0.01, 1.0), st.floats(0.01, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_multiplicative_linearity(self, g, e, d):
        gamma = adjustment_factor(AdjustmentInputs(g, e, d))
        doubled = adjustment_factor(AdjustmentInputs(min(2 * g, 1e6), e, d))
        assert abs(doubled - 2 * gamma) < 1e-12 * max(1.0, abs(gamma))


class TestAdjustPredictions:
    def test_identity_gamma(self):
        pred = PredictionTable(
            cells={("man", None): {"a": 0.6, "b": 0.4}, ("woman", None): {"a": 0.3, "b": 0.7}},
            mention_totals={("man", None): 10, ("woman", None): 10},
        )
        adjusted = adjust_predictions(pred, {("man", None): 1.0, ("woman", None): 1.0})
        assert adjusted.adjusted[("man", None)] == {"a": 0.6, "b": 0.4}

    def test_two_cell_renormalization(self):
        pred = PredictionTable(
            cells={("man", None): {"a": 0.1}, ("woman", None): {"a": 0.1}},
            mention_totals={("man", None): 10, ("woman", None): 10},
        )
        adjusted = adjust_predictions(pred, {("man", None): 1.0, ("woman", None): 3.0})
        assert math.isclose(adjusted.prop("a", ("man", None)), 0.25)
        assert math.isclose(adjusted.prop("a", ("woman", None)), 0.75)

    def test_missing_gamma_errors(self):
        pred = PredictionTable(
            cells={("man", None): {"a": 1.0}}, mention_totals={("man", None): 1}
        )
        with pytest.raises(ValidationError):
            adjust_predictions(pred, {})

    def test_proportional_rows_sum_to_one(self):
        rng = random.Random(3)
        cells = {}
        for gender in ("man", "woman"):
            for eth in ("Asian", "Black", "Hispanic", "White"):
                shares = [rng.random() for _ in range(4)]
                total = sum(shares)
                cells[(gender, eth)] = {
                    f"job{i}": s / total for i, s in enumerate(shares)
                }
        pred = PredictionTable(cells=cells, mention_totals={c: 100 for c in cells})
        gammas = {c: 0.2 + rng.random() for c in cells}
        adjusted = adjust_predictions(pred, gammas)
        for job, row in adjusted.proportional.items():
            assert math.isclose(sum(row.values()), 1.0, abs_tol=1e-9)


class TestMSE:
    def test_identical_vectors_zero(self):
        assert mse([0.1, 0.4], [0.1, 0.4]) == 0.0

    def test_golden(self):
        assert math.isclose(mse([0.2, 0.4], [0.4, 0.8]), 0.10)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            mse([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            mse([0.1], [0.1, 0.2])

    @given(
        st.lists(
            st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30
        ),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=60, deadline=None)
    def test_nonnegative_and_permutation_symmetric(self, pairs, rnd):
        pred = [p for p, _t in pairs]
        truth = [t for _p, t in pairs]
        value = mse(pred, truth)
        assert value >= 0.0
        order = list(range(len(pairs)))
        rnd.shuffle(order)
        assert math.isclose(
            value, mse([pred[i] for i in order], [truth[i] for i in order]),
            rel_tol=1e-12, abs_tol=1e-15,
        )
        assert math.isclose(value, mse(truth, pred), rel_tol=1e-12, abs_tol=1e-15)


def _tau_oracle(a, b):
    """O(n^2) pair counting with tie correction."""
    n = len(a)
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da, db = a[i] - a[j], b[i] - b[j]
            if da == 0:
                ties_a += 1
            if db == 0:
                ties_b += 1
            if da == 0 or db == 0:
                continue
            if (da > 0) == (db > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    return (concordant - discordant) / denom


class TestKendallTau:
    def test_identity_is_one(self):
        tau, p = kendall_tau([3, 1, 4, 1.5, 9], [3, 1, 4, 1.5, 9])
        assert tau == 1.0
        assert p < 0.05

    def test_reverse_is_minus_one(self):
        tau, _p = kendall_tau([1, 2, 3, 4], [4, 3, 2, 1])
        assert tau == -1.0

    def test_all_tied_rejected(self):
        with pytest.raises(ValidationError):
            kendall_tau([1, 1, 1], [1, 2, 3])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            kendall_tau([1, 2], [1, 2, 3])

    @given(
        st.lists(st.integers(0, 6), min_size=2, max_size=40),
        st.data(),
    )
    @settings(max_examples=150, deadline=None)
    def test_matches_pair_count_oracle(self, a, data):
        b = data.draw(
            st.lists(st.integers(0, 6), min_size=len(a), max_size=len(a))
        )
        if len(set(a)) < 2 or len(set(b)) < 2:
            return
        tau, _p = kendall_tau(a, b)
        assert tau == _tau_oracle(a, b)


class TestSkew:
    def test_perfect_prediction(self):
        pred = {"a": 0.1, "b": 0.9, "c": 0.5}
        summary = skew_summary(pred, dict(pred))
        assert summary.low.mean_deviation == 0.0
        assert summary.high.mean_deviation == 0.0
        assert summary.low.exceptions == [] and summary.high.exceptions == []

    def test_single_low_bin_job(self):
        summary = skew_summary({"a": 0.30}, {"a": 0.10})
        assert math.isclose(summary.low.mean_deviation, 0.20)
        assert summary.high.mean_deviation is None  # empty bin flagged

    def test_exceptions_oppose_bin_mean(self):
        pred = {"a": 0.30, "b": 0.28, "c": 0.05}
        truth = {"a": 0.10, "b": 0.12, "c": 0.20}
        summary = skew_summary(pred, truth)
        assert summary.low.exceptions == ["c"]

    def test_job_set_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            skew_summary({"a": 0.1}, {"b": 0.1})


def _matrix_from_cells(cells):
    from occuprobe.extract import FrequencyMatrix

    matrix = FrequencyMatrix()
    for key, jobs in cells.items():
        matrix.ensure_row(key)
        matrix.calls[key] = max(1, sum(jobs.values()))
        for job, count in jobs.items():
            matrix.counts[key][job] = count
    return matrix


class TestCompareToLabor:
    def test_truth_only_jobs_listed_with_zero_prediction(self, labor, match_table):
        # "barber" is mentioned only in ethnicity rows: it is in the universe
        # but has no base-cell mentions, so its predicted share is zero.
        cells = {
            "base|man||": {"nurse": 50, "waiter": 30},
            "base|woman||": {"nurse": 60, "waitress": 40},
            "ethnicity|man|Asian|": {"barber": 30, "nurse": 10},
            "ethnicity|woman|Asian|": {"barber": 10, "nurse": 30},
        }
        result = compare_to_labor(_matrix_from_cells(cells), labor, match_table)
        barber = next(r for r in result.barbell if r["job"] == "barber")
        assert barber["predicted_women_share"] == 0.0
        assert barber["truth_women_share"] > 0.0

    def test_planted_truth_matching_biases_give_small_mse(self, registry, tmp_path, labor, match_table):
        # plant base-cell probabilities whose adjusted proportional
        # representation reproduces the truth women shares exactly in
        # expectation; "consultant" is an excluded token absorbing the
        # leftover probability mass in each cell
        jobs = {
            "nurse": "Registered nurses",
            "carpenter": "Carpenters",
            "bartender": "Bartenders",
            "cook": "Cooks",
        }
        gamma_m = labor.economy_gender["man"] / 0.5
        gamma_w = labor.economy_gender["woman"] / 0.5
        man_share = 0.08
        man_dist, woman_dist = {}, {}
        for token, occ in jobs.items():
            w = labor.row(occ).women_share
            man_dist[token] = man_share
            woman_dist[token] = man_share * (w / (1.0 - w)) * (gamma_m / gamma_w)
        assert sum(woman_dist.values()) < 1.0
        man_dist["consultant"] = 1.0 - sum(man_dist.values())
        woman_dist["consultant"] = 1.0 - sum(woman_dist.values())
        spec = BiasSpec(
            patterns={
                "base|man|*": sorted(man_dist.items()),
                "base|woman|*": sorted(woman_dist.items()),
            }
        )
        plan = plan_calls(build_identity_templates(registry["base"], calls=5000))
        mock_corpus(plan, spec, tmp_path / "c.jsonl", seed=33)
        from occuprobe.extract import load_lexicon

        matrix = build_matrix(CorpusReader(tmp_path / "c.jsonl"), load_lexicon())
        result = compare_to_labor(matrix, labor, match_table, top_k_jobs=10)
        for row in result.barbell:
            if row["job"] in jobs:
                assert abs(row["difference"]) < 0.05
        assert result.mse_by_cell[("woman", None)] < 0.01
        assert result.mse_by_cell[("man", None)] < 0.01

    def test_kendall_table_shape(self, labor, match_table):
        rng = np.random.default_rng(11)
        cells = {}
        tokens = ["nurse", "carpenter", "bartender", "cook", "teacher",
                  "janitor", "lawyer", "photographer"]
        for gender in ("man", "woman"):
            cells[f"base|{gender}||"] = {
                t: int(rng.integers(20, 200)) for t in tokens
            }
            for eth in ("Asian", "Black", "Hispanic", "White"):
                cells[f"ethnicity|{gender}|{eth}|"] = {
                    t: int(rng.integers(20, 200)) for t in tokens
                }
        result = compare_to_labor(_matrix_from_cells(cells), labor, match_table)
        assert set(result.kendall_by_group) == {
            "base", "Asian", "Black", "Hispanic", "White"
        }
        for tau, p in result.kendall_by_group.values():
            assert -1.0 <= tau <= 1.0
            assert 0.0 <= p <= 1.0

    def test_truth_group_distribution_sums_to_one(self, labor):
        dist = truth_group_distribution(labor, ("woman", None))
        assert math.isclose(sum(dist.values()), 1.0, abs_tol=1e-9)
        dist_eth = truth_group_distribution(labor, ("man", "Hispanic"))
        assert math.isclose(sum(dist_eth.values()), 1.0, abs_tol=1e-9)

    def test_prediction_table_rows_sum_to_one(self):
        cells = {
            "base|man||": {"nurse": 30, "cook": 70},
            "base|woman||": {"nurse": 80, "cook": 20},
        }
        pred = build_prediction_table(_matrix_from_cells(cells))
        for cell in pred.cells:
            assert math.isclose(sum(pred.cells[cell].values()), 1.0, abs_tol=1e-12)
