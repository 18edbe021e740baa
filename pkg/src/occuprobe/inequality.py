"""Distributional analysis of job-frequency rows.

Gini, Lorenz, rank-frequency quantiles, top-k tables, and over-representation
factors against the equi-proportion baseline.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .demography import GENDERS, CategoryScheme
from .errors import UndefinedDistributionError, ValidationError
from .extract import FrequencyMatrix


def gini(counts: Sequence[float]) -> float:
    """Gini coefficient of a count vector.

    Computed as sum((2i - n - 1) * x_i) / (n * sum(x)) over ascending-sorted
    values with 1-based ranks i; input order is irrelevant.
    """
    x = np.asarray(counts, dtype=float)
    if x.size == 0 or not np.any(x > 0):
        raise UndefinedDistributionError("gini undefined for empty or all-zero counts")
    if np.any(x < 0):
        raise ValidationError("gini requires non-negative counts")
    x = np.sort(x)
    n = x.size
    ranks = 2.0 * np.arange(1, n + 1) - n - 1
    return float(np.sum(ranks * x) / (n * np.sum(x)))


def relative_gini(g: float, base: float) -> float:
    """Gini as a percentage of a baseline coefficient."""
    if base <= 0:
        raise ValidationError(f"relative gini needs a positive base, got {base}")
    return 100.0 * g / base


@dataclass(frozen=True)
class RankDistribution:
    """Jobs sorted by descending count with cumulative shares."""

    jobs: tuple[str, ...]
    counts: tuple[float, ...]
    cumulative_shares: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.jobs)


def rank_distribution(row: Counter | dict[str, float]) -> RankDistribution:
    """Build a descending rank-frequency distribution; ties break lexicographically."""
    items = sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))
    if not items or not any(c > 0 for _j, c in items):
        raise UndefinedDistributionError("rank distribution undefined for all-zero row")
    total = float(sum(c for _j, c in items))
    cumulative: list[float] = []
    running = 0.0
    for _job, count in items:
        running += count
        cumulative.append(running / total)
    return RankDistribution(
        jobs=tuple(j for j, _c in items),
        counts=tuple(float(c) for _j, c in items),
        cumulative_shares=tuple(cumulative),
    )


def cumulative_quantile(dist: RankDistribution, share: float) -> int:
    """Smallest number of top-ranked jobs whose summed share reaches ``share``."""
    if not 0.0 < share <= 1.0:
        raise ValidationError(f"share must be in (0,1]: {share}")
    for k, cum in enumerate(dist.cumulative_shares, start=1):
        if cum >= share - 1e-12:
            return k
    return dist.n


def lorenz(counts: Sequence[float] | RankDistribution) -> list[tuple[float, float]]:
    """Lorenz points from (0,0) to (1,1) over ascending-sorted counts."""
    if isinstance(counts, RankDistribution):
        counts = counts.counts
    x = np.asarray(counts, dtype=float)
    if x.size == 0 or not np.any(x > 0):
        raise UndefinedDistributionError("lorenz undefined for empty or all-zero counts")
    if np.any(x < 0):
        raise ValidationError("lorenz requires non-negative counts")
    x = np.sort(x)
    n = x.size
    cum = np.cumsum(x) / np.sum(x)
    points = [(0.0, 0.0)]
    points.extend((float(i) / n, float(cum[i - 1])) for i in range(1, n + 1))
    return points


def top_jobs(row: Counter | dict[str, float], k: int) -> tuple[list[tuple[str, float]], float]:
    """Top-k jobs with proportions of the row total, plus their cumulative sum."""
    if k < 1:
        raise ValidationError(f"k must be >= 1: {k}")
    total = float(sum(row.values()))
    if total <= 0:
        return [], 0.0
    items = sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    top = [(job, count / total) for job, count in items]
    return top, float(sum(p for _j, p in top))


@dataclass(frozen=True)
class OverRepPoint:
    """One (job, category value) point against the equi-proportion baseline.

    Factors are per-gender shares of the value among that gender's mentions
    of the job, in multiples of 1/|c|; None when that gender never mentions
    the job (flagged, never silently zero). The distance is the perpendicular
    distance of the job-split point (per-value man and woman shares of the
    job total, in the same 1x units) to the baseline segment.
    """

    job: str
    value: str
    man_factor: float | None
    woman_factor: float | None
    man_split: float
    woman_split: float
    distance: float


def _segment_distance(x: float, y: float) -> float:
    # distance to the segment from (1,0) to (0,1)
    t = (1.0 - x + y) / 2.0
    t = min(1.0, max(0.0, t))
    sx, sy = 1.0 - t, t
    return float(np.hypot(x - sx, y - sy))


def overrep_factors(
    matrix: FrequencyMatrix, scheme: CategoryScheme
) -> list[OverRepPoint]:
    """Per-(job, value) over-representation against the 1/|c| baseline.

    Expects a thresholded matrix restricted to the scheme's rows.
    """
    size = len(scheme.values)
    if size < 2:
        raise ValidationError(f"scheme {scheme.name} has no intersection values")
    cells: dict[tuple[str, str], Counter] = {}
    for key in matrix.rows():
        parts = key.split("|")
        if parts[0] != scheme.name:
            raise ValidationError(
                f"matrix row {key!r} does not belong to scheme {scheme.name!r}"
            )
        gender, value = parts[1], parts[2]
        cell = cells.setdefault((gender, value), Counter())
        cell.update(matrix.counts[key])

    jobs = matrix.jobs()
    gender_job_totals = {
        g: {job: sum(cells.get((g, v), Counter()).get(job, 0) for v in scheme.values)
            for job in jobs}
        for g in GENDERS
    }
    points: list[OverRepPoint] = []
    for job in jobs:
        man_total = gender_job_totals["man"][job]
        woman_total = gender_job_totals["woman"][job]
        job_total = man_total + woman_total
        if job_total == 0:
            continue
        for value in scheme.values:
            man_count = cells.get(("man", value), Counter()).get(job, 0)
            woman_count = cells.get(("woman", value), Counter()).get(job, 0)
            man_factor = size * man_count / man_total if man_total else None
            woman_factor = size * woman_count / woman_total if woman_total else None
            man_split = size * man_count / job_total
            woman_split = size * woman_count / job_total
            points.append(
                OverRepPoint(
                    job=job,
                    value=value,
                    man_factor=man_factor,
                    woman_factor=woman_factor,
                    man_split=man_split,
                    woman_split=woman_split,
                    distance=_segment_distance(man_split, woman_split),
                )
            )
    return points


def man_woman_range(points: Iterable[OverRepPoint]) -> dict[str, float]:
    """Per-job largest per-value gender disparity, for ranking bar charts."""
    ranges: dict[str, float] = {}
    for point in points:
        spread = abs(point.man_split - point.woman_split)
        ranges[point.job] = max(ranges.get(point.job, 0.0), spread)
    return ranges


def pooled_gender_counts(matrix: FrequencyMatrix, gender: str) -> Counter:
    """Pool all of one gender's rows in a (scheme-restricted) matrix."""
    pooled: Counter = Counter()
    for key in matrix.rows():
        if key.split("|")[1] == gender:
            pooled.update(matrix.counts[key])
    return pooled


def diversity_metrics(row: Counter | dict[str, float]) -> dict[str, float]:
    """Ablation metrics: top-5 share, jobs to 95% cumulative share, unique jobs."""
    dist = rank_distribution(row)
    _top, top5 = top_jobs(row, 5)
    return {
        "top5_share": top5,
        "n_jobs_95": cumulative_quantile(dist, 0.95),
        "unique_jobs": dist.n,
    }
