"""Job-title extraction, canonical merging, and the frequency matrix.

A rule-based gazetteer replaces statistical NER: case-insensitive
longest-match scanning over the text following the "works as" anchor,
with a small plural-suffix table applied before lookup. Hyphenated
compounds stay single tokens, so unlisted compounds count as losses.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .demography import SubjectProfile, packaged_data_path
from .errors import CorpusIntegrityError, DataLoadError, ValidationError

ANCHOR = "works as"

# Gendered and hierarchy pairs that must never be merged together.
REQUIRED_PROTECTED = frozenset(
    {"waitress", "waiter", "salesman", "salesperson", "assistant professor", "professor"}
)

_WORD_RE = re.compile(r"[A-Za-z][A-Za-z'-]*")


def singularize(word: str) -> str:
    """Reduce a plural surface form with a small suffix-rule table."""
    if len(word) <= 3:
        return word
    if word.endswith("men"):
        return word[:-3] + "man"
    if word.endswith("ies"):
        return word[:-3] + "y"
    if word.endswith(("sses", "shes", "ches", "xes", "zes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


@dataclass
class Lexicon:
    """Longest-match gazetteer of job phrases with merge and protection rules."""

    titles: set[str]
    merge_map: dict[str, str]
    protected: set[str]
    max_phrase_words: int = field(init=False)

    def __post_init__(self):
        missing = REQUIRED_PROTECTED - self.protected
        if missing:
            raise ValidationError(f"lexicon must protect {sorted(missing)}")
        canonical_tokens = self.canonical_tokens()
        for phrase, target in self.merge_map.items():
            if phrase in self.protected:
                raise ValidationError(f"protected phrase {phrase!r} must not be merged")
            if target not in canonical_tokens:
                raise ValidationError(
                    f"merge target {target!r} (from {phrase!r}) is not a canonical token"
                )
        self.max_phrase_words = max((len(t.split()) for t in self.titles), default=1)

    def canonical_tokens(self) -> set[str]:
        return {t for t in self.titles if t not in self.merge_map}


def load_lexicon(path: str | Path | None = None) -> Lexicon:
    """Load a ``phrase,canonical,protected_flag`` CSV lexicon.

    ``#``-prefixed lines are provenance comments. An empty canonical field
    means the phrase is its own canonical token.
    """
    path = Path(path) if path is not None else packaged_data_path("lexicon.csv")
    titles: set[str] = set()
    merge_map: dict[str, str] = {}
    protected: set[str] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["phrase", "canonical", "protected_flag"]:
        raise DataLoadError(f"lexicon {path}: expected header phrase,canonical,protected_flag")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise DataLoadError(f"lexicon {path}:{lineno}: expected 3 fields")
        phrase, canonical, flag = (c.strip().lower() for c in row)
        if not phrase:
            raise DataLoadError(f"lexicon {path}:{lineno}: empty phrase")
        if phrase in titles:
            raise DataLoadError(f"lexicon {path}:{lineno}: duplicate phrase {phrase!r}")
        titles.add(phrase)
        if canonical and canonical != phrase:
            merge_map[phrase] = canonical
        if flag == "1":
            protected.add(phrase)
    try:
        return Lexicon(titles=titles, merge_map=merge_map, protected=protected)
    except ValidationError as exc:
        raise DataLoadError(f"lexicon {path}: {exc}") from exc


def extract_titles(text: str, lexicon: Lexicon) -> list[str]:
    """All job phrases in ``text``, in textual order.

    Scanning is restricted to the text after the "works as" anchor when the
    anchor is present (full-sentence input); otherwise the whole string is
    scanned (the input is assumed to already be post-anchor completion text).
    """
    low = text.lower()
    idx = low.find(ANCHOR)
    scan = low[idx + len(ANCHOR):] if idx >= 0 else low
    words = _WORD_RE.findall(scan)
    found: list[str] = []
    i = 0
    n = len(words)
    while i < n:
        matched = None
        for length in range(min(lexicon.max_phrase_words, n - i), 0, -1):
            gram = words[i:i + length]
            exact = " ".join(gram)
            if exact in lexicon.titles:
                matched = exact
                break
            sing = " ".join(gram[:-1] + [singularize(gram[-1])])
            if sing in lexicon.titles:
                matched = sing
                break
        if matched is None:
            i += 1
        else:
            found.append(matched)
            i += len(matched.split())
    return found


def canonicalize(phrase: str, lexicon: Lexicon) -> str:
    """Merge a phrase to its canonical token; protected tokens pass through."""
    phrase = phrase.lower()
    if phrase in lexicon.protected:
        return phrase
    return lexicon.merge_map.get(phrase, phrase)


@dataclass
class ThresholdInfo:
    """How a matrix was thresholded and how much mass survived."""

    frac: float
    pool_calls: int
    cutoff: float
    dropped_jobs: int
    preserved_share: float
    preserved_share_per_row: dict[str, float]


class FrequencyMatrix:
    """Counts of canonical job tokens per subject profile.

    Rows are profile keys (``scheme|gender|value|name``); a row's counts sum
    to the number of extracted titles for that row, which can exceed
    calls - misses because one sentence may yield several titles.
    """

    def __init__(self):
        self.counts: dict[str, Counter] = {}
        self.calls: dict[str, int] = {}
        self.misses: dict[str, int] = {}
        self.excluded_records: int = 0
        self.threshold: ThresholdInfo | None = None

    # -- construction ------------------------------------------------------

    def ensure_row(self, key: str) -> None:
        if key not in self.counts:
            self.counts[key] = Counter()
            self.calls[key] = 0
            self.misses[key] = 0

    def add_sentence(self, key: str, tokens: list[str]) -> None:
        """Record one call: its canonical tokens, or a miss if none."""
        self.ensure_row(key)
        self.calls[key] += 1
        if not tokens:
            self.misses[key] += 1
        else:
            self.counts[key].update(tokens)

    def merge(self, other: "FrequencyMatrix") -> None:
        """Entry-wise addition (streaming additivity over corpus shards)."""
        for key in other.counts:
            self.ensure_row(key)
            self.counts[key].update(other.counts[key])
            self.calls[key] += other.calls[key]
            self.misses[key] += other.misses[key]
        self.excluded_records += other.excluded_records

    # -- views -------------------------------------------------------------

    def rows(self) -> list[str]:
        return sorted(self.counts)

    def jobs(self) -> list[str]:
        seen: set[str] = set()
        for counter in self.counts.values():
            seen.update(counter)
        return sorted(seen)

    def profiles(self) -> list[SubjectProfile]:
        return [SubjectProfile.from_key(k) for k in self.rows()]

    def restrict(self, scheme: str) -> "FrequencyMatrix":
        """Sub-matrix containing only one scheme's rows."""
        sub = FrequencyMatrix()
        prefix = scheme + "|"
        for key in self.counts:
            if key.startswith(prefix):
                sub.counts[key] = Counter(self.counts[key])
                sub.calls[key] = self.calls[key]
                sub.misses[key] = self.misses[key]
        return sub

    def pooled_row(self, keys: Iterable[str]) -> Counter:
        pooled: Counter = Counter()
        for key in keys:
            pooled.update(self.counts[key])
        return pooled

    def total_calls(self) -> int:
        return sum(self.calls.values())

    def total_mentions(self) -> int:
        return sum(sum(c.values()) for c in self.counts.values())

    def overall_loss_rate(self) -> float:
        calls = self.total_calls()
        return sum(self.misses.values()) / calls if calls else 0.0

    # -- persistence -------------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        jobs = self.jobs()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["profile"] + jobs + ["_calls", "_miss"])
            for key in self.rows():
                counter = self.counts[key]
                writer.writerow(
                    [key]
                    + [counter.get(j, 0) for j in jobs]
                    + [self.calls[key], self.misses[key]]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "FrequencyMatrix":
        matrix = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "profile" or header[-2:] != ["_calls", "_miss"]:
                raise DataLoadError(f"matrix {path}: malformed header")
            jobs = header[1:-2]
            for row in reader:
                key = row[0]
                SubjectProfile.from_key(key)
                matrix.ensure_row(key)
                for job, cell in zip(jobs, row[1:-2]):
                    count = int(cell)
                    if count:
                        matrix.counts[key][job] = count
                matrix.calls[key] = int(row[-2])
                matrix.misses[key] = int(row[-1])
        return matrix


def build_matrix(
    records: Iterable,
    lexicon: Lexicon,
    expected_profiles: set[str] | None = None,
    exclude_names: Iterable[str] = (),
) -> FrequencyMatrix:
    """Single-pass accumulation of a corpus into a FrequencyMatrix.

    Records need ``subject`` and ``completion`` attributes. With
    ``expected_profiles`` set, any record outside the plan is a hard error.
    Rows for names in ``exclude_names`` are dropped (legacy-corpus hook for
    name/job collisions) and tallied in ``excluded_records``.
    """
    excluded = set(exclude_names)
    matrix = FrequencyMatrix()
    for record in records:
        subject: SubjectProfile = record.subject
        key = subject.key()
        if expected_profiles is not None and key not in expected_profiles:
            raise CorpusIntegrityError(f"corpus record for unplanned profile {key!r}")
        if subject.name is not None and subject.name in excluded:
            matrix.excluded_records += 1
            continue
        tokens = [canonicalize(t, lexicon) for t in extract_titles(record.completion, lexicon)]
        matrix.add_sentence(key, tokens)
    return matrix


def threshold_cutoff(pool_calls: int, frac: float = 0.0025) -> float:
    """Minimum mention count a job needs to survive in a pool of calls."""
    return frac * pool_calls


def apply_threshold(
    matrix: FrequencyMatrix, frac: float = 0.0025
) -> FrequencyMatrix:
    """Drop jobs mentioned fewer than ``frac`` x pool calls times.

    The pool is the whole matrix passed in, so restrict to one scheme first
    when thresholding per intersection. Rows are never dropped and no
    surviving count changes.
    """
    if not (0.0 < frac < 1.0):
        raise ValidationError(f"threshold fraction must be in (0,1): {frac}")
    pool_calls = matrix.total_calls()
    cutoff = threshold_cutoff(pool_calls, frac)
    totals: Counter = Counter()
    for counter in matrix.counts.values():
        totals.update(counter)
    keep = {job for job, count in totals.items() if count >= cutoff}
    out = FrequencyMatrix()
    preserved_per_row: dict[str, float] = {}
    for key in matrix.counts:
        out.ensure_row(key)
        row = matrix.counts[key]
        kept = Counter({job: c for job, c in row.items() if job in keep})
        out.counts[key] = kept
        out.calls[key] = matrix.calls[key]
        out.misses[key] = matrix.misses[key]
        row_total = sum(row.values())
        preserved_per_row[key] = (sum(kept.values()) / row_total) if row_total else 1.0
    grand = sum(totals.values())
    preserved = (sum(totals[j] for j in keep) / grand) if grand else 1.0
    out.excluded_records = matrix.excluded_records
    out.threshold = ThresholdInfo(
        frac=frac,
        pool_calls=pool_calls,
        cutoff=cutoff,
        dropped_jobs=len(totals) - len(keep),
        preserved_share=preserved,
        preserved_share_per_row=preserved_per_row,
    )
    return out
