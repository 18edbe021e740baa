import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occuprobe.demography import SubjectProfile, build_identity_templates, plan_calls
from occuprobe.errors import CorpusIntegrityError, ValidationError
from occuprobe.extract import (
    FrequencyMatrix,
    Lexicon,
    apply_threshold,
    build_matrix,
    canonicalize,
    extract_titles,
    singularize,
    threshold_cutoff,
)
from occuprobe.genclient import BiasSpec, CorpusReader

from support_occuprobe import mock_corpus


class FakeRecord:
    def __init__(self, subject, completion):
        self.subject = subject
        self.completion = completion


BASE_MAN = SubjectProfile(gender="man", scheme="base")
BASE_WOMAN = SubjectProfile(gender="woman", scheme="base")


class TestExtractTitles:
    def test_conjunction_yields_two_entries(self, lexicon):
        got = extract_titles("The woman works as a waitress and a maid", lexicon)
        assert got == ["waitress", "maid"]

    def test_unlisted_title_is_a_miss(self, lexicon):
        assert "volunteer" not in lexicon.titles
        assert extract_titles("The man works as a volunteer", lexicon) == []

    def test_empty_input(self, lexicon):
        assert extract_titles("", lexicon) == []

    def test_scan_restricted_to_after_anchor(self, lexicon):
        # "baker" is a lexicon title but appears before the anchor
        assert extract_titles("Baker works as a nurse", lexicon) == ["nurse"]

    def test_completion_without_anchor_scanned_whole(self, lexicon):
        assert extract_titles(" nurse in the city", lexicon) == ["nurse"]

    def test_longest_match_wins(self, lexicon):
        got = extract_titles("works as a nurse practitioner now", lexicon)
        assert got == ["nurse practitioner"]

    def test_case_insensitive(self, lexicon):
        assert extract_titles("WORKS AS A Security Guard", lexicon) == ["security guard"]

    def test_plural_forms(self, lexicon):
        assert extract_titles("works as a nurses", lexicon) == ["nurse"]
        assert extract_titles("one of the waitresses", lexicon) == ["waitress"]
        assert extract_titles("both security guards", lexicon) == ["security guard"]
        assert extract_titles("the salesmen", lexicon) == ["salesman"]
        assert extract_titles("two secretaries", lexicon) == ["secretary"]

    def test_hyphenated_compound_missed(self, lexicon):
        got = extract_titles("works as a consultant-development worker", lexicon)
        assert got == []

    def test_deterministic_and_order_stable(self, lexicon):
        text = "works as a waitress, a cook and a nurse"
        assert extract_titles(text, lexicon) == extract_titles(text, lexicon)
        assert extract_titles(text, lexicon) == ["waitress", "cook", "nurse"]


class TestSingularize:
    @pytest.mark.parametrize(
        "plural,singular",
        [
            ("nurses", "nurse"), ("secretaries", "secretary"),
            ("waitresses", "waitress"), ("salesmen", "salesman"),
            ("coaches", "coach"), ("boss", "boss"), ("bus", "bus"),
        ],
    )
    def test_suffix_rules(self, plural, singular):
        assert singularize(plural) == singular


class TestCanonicalize:
    def test_merge_duplicates(self, lexicon):
        assert canonicalize("nurse practitioner", lexicon) == "nurse"

    def test_protected_never_merged(self, lexicon):
        assert canonicalize("waitress", lexicon) == "waitress"
        assert canonicalize("salesman", lexicon) == "salesman"
        assert canonicalize("assistant professor", lexicon) == "assistant professor"

    def test_idempotent(self, lexicon):
        assert canonicalize("nurse", lexicon) == "nurse"
        for phrase in sorted(lexicon.titles):
            once = canonicalize(phrase, lexicon)
            assert canonicalize(once, lexicon) == once


class TestLexiconValidation:
    def test_required_protected_set(self):
        with pytest.raises(ValidationError, match="must protect"):
            Lexicon(titles={"nurse"}, merge_map={}, protected=set())

    def test_protected_cannot_merge(self, tiny_lexicon):
        with pytest.raises(ValidationError, match="must not be merged"):
            Lexicon(
                titles=tiny_lexicon.titles,
                merge_map={"waitress": "waiter"},
                protected=tiny_lexicon.protected,
            )

    def test_merge_target_must_be_canonical(self, tiny_lexicon):
        with pytest.raises(ValidationError, match="not a canonical token"):
            Lexicon(
                titles=tiny_lexicon.titles | {"scrub nurse"},
                merge_map={"scrub nurse": "missing job"},
                protected=tiny_lexicon.protected,
            )


class TestBuildMatrix:
    def test_degenerate_distribution_counts(self, tiny_lexicon):
        records = [FakeRecord(BASE_WOMAN, " nurse in the city") for _ in range(100)]
        matrix = build_matrix(records, tiny_lexicon)
        key = BASE_WOMAN.key()
        assert matrix.counts[key]["nurse"] == 100
        assert matrix.misses[key] == 0
        assert matrix.calls[key] == 100

    def test_misses_plus_titled_equals_calls(self, tiny_lexicon):
        records = [
            FakeRecord(BASE_MAN, " nurse here"),
            FakeRecord(BASE_MAN, " nothing to see"),
            FakeRecord(BASE_MAN, " a waitress and a maid"),
        ]
        matrix = build_matrix(records, tiny_lexicon)
        key = BASE_MAN.key()
        assert matrix.calls[key] == 3
        assert matrix.misses[key] == 1
        # one sentence yielded two titles: counts exceed calls - misses
        assert sum(matrix.counts[key].values()) == 3

    def test_unknown_profile_is_hard_error(self, tiny_lexicon):
        records = [FakeRecord(BASE_MAN, " nurse")]
        with pytest.raises(CorpusIntegrityError, match="unplanned profile"):
            build_matrix(records, tiny_lexicon, expected_profiles={BASE_WOMAN.key()})

    def test_exclusion_list_drops_name_rows(self, tiny_lexicon):
        princess = SubjectProfile(
            gender="woman", scheme="continent", value="Africa", name="Princess"
        )
        records = [FakeRecord(princess, " maid"), FakeRecord(BASE_WOMAN, " maid")]
        matrix = build_matrix(records, tiny_lexicon, exclude_names={"Princess"})
        assert princess.key() not in matrix.counts
        assert matrix.excluded_records == 1
        assert matrix.counts[BASE_WOMAN.key()]["maid"] == 1

    def test_loss_rate_tracks_mock_miss_rate(self, registry, tiny_lexicon, tmp_path):
        plan = plan_calls(build_identity_templates(registry["base"], calls=7000))
        spec = BiasSpec(
            patterns={"*|*|*": [("nurse", 0.5), ("teacher", 0.5)]}, miss_rate=0.106
        )
        mock_corpus(plan, spec, tmp_path / "c.jsonl", seed=11)
        matrix = build_matrix(CorpusReader(tmp_path / "c.jsonl"), tiny_lexicon)
        assert matrix.total_calls() == 14000
        assert math.isclose(matrix.overall_loss_rate(), 0.106, abs_tol=0.011)

    def test_streaming_additivity(self, tiny_lexicon):
        records = [
            FakeRecord(BASE_MAN, " nurse"), FakeRecord(BASE_MAN, " cook"),
            FakeRecord(BASE_WOMAN, " maid"), FakeRecord(BASE_WOMAN, " nothing"),
            FakeRecord(BASE_WOMAN, " waitress and a maid"),
        ]
        whole = build_matrix(records, tiny_lexicon)
        left = build_matrix(records[:2], tiny_lexicon)
        right = build_matrix(records[2:], tiny_lexicon)
        left.merge(right)
        assert left.counts == whole.counts
        assert left.calls == whole.calls
        assert left.misses == whole.misses

    def test_csv_round_trip(self, tiny_lexicon, tmp_path):
        records = [
            FakeRecord(BASE_MAN, " nurse"), FakeRecord(BASE_WOMAN, " maid"),
            FakeRecord(BASE_WOMAN, " nothing"),
        ]
        matrix = build_matrix(records, tiny_lexicon)
        path = tmp_path / "m.csv"
        matrix.to_csv(path)
        loaded = FrequencyMatrix.from_csv(path)
        assert loaded.counts == matrix.counts
        assert loaded.calls == matrix.calls
        assert loaded.misses == matrix.misses


class TestThreshold:
    def test_cutoffs_for_paper_pools(self):
        assert threshold_cutoff(14000) == 35
        assert threshold_cutoff(56000) == 140
        assert threshold_cutoff(70000) == 175
        assert threshold_cutoff(28000) == 70
        assert threshold_cutoff(200000) == 500

    def test_threshold_drops_rare_columns(self):
        matrix = FrequencyMatrix()
        key = BASE_MAN.key()
        matrix.ensure_row(key)
        matrix.calls[key] = 14000
        matrix.counts[key]["nurse"] = 40
        matrix.counts[key]["cook"] = 34
        out = apply_threshold(matrix)
        assert "nurse" in out.counts[key]
        assert "cook" not in out.counts[key]
        assert out.threshold.cutoff == 35
        assert out.threshold.dropped_jobs == 1
        assert math.isclose(out.threshold.preserved_share, 40 / 74)

    def test_boundary_count_survives(self):
        matrix = FrequencyMatrix()
        key = BASE_MAN.key()
        matrix.ensure_row(key)
        matrix.calls[key] = 14000
        matrix.counts[key]["nurse"] = 35
        out = apply_threshold(matrix)
        assert out.counts[key]["nurse"] == 35

    def test_frac_bounds_rejected(self):
        matrix = FrequencyMatrix()
        with pytest.raises(ValidationError):
            apply_threshold(matrix, frac=0.0)
        with pytest.raises(ValidationError):
            apply_threshold(matrix, frac=1.0)

    @given(
        counts=st.lists(
            st.tuples(st.sampled_from(["a", "b", "c", "d"]), st.integers(0, 200)),
            min_size=1, max_size=12,
        ),
        frac=st.floats(0.001, 0.2),
    )
    @settings(max_examples=60, deadline=None)
    def test_never_increases_counts_never_drops_rows(self, counts, frac):
        matrix = FrequencyMatrix()
        key_man, key_woman = BASE_MAN.key(), BASE_WOMAN.key()
        for k in (key_man, key_woman):
            matrix.ensure_row(k)
            matrix.calls[k] = 500
        for i, (job, count) in enumerate(counts):
            key = key_man if i % 2 else key_woman
            matrix.counts[key][job] += count
        out = apply_threshold(matrix, frac=frac)
        assert set(out.counts) == set(matrix.counts)
        for key in matrix.counts:
            for job, count in out.counts[key].items():
                assert count == matrix.counts[key][job]
