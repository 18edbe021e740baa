"""Ground-truth comparison against labor-market statistics.

Loads an occupation share table and a token-to-occupation match table,
rescales the uniformly sampled predictions to the real population's
gender x ethnicity composition, and quantifies agreement with MSE,
tie-corrected Kendall rank correlation, and skew-direction summaries.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .demography import packaged_data_path
from .errors import DataLoadError, ValidationError
from .extract import FrequencyMatrix
from .inequality import top_jobs

ETHNICITY_KEYS = ("white", "black", "asian", "hispanic")
ETHNICITY_LABELS = {"White": "white", "Black": "black", "Asian": "asian", "Hispanic": "hispanic"}

# Cell identifiers: (gender, ethnicity-label-or-None); None is the base family.
Cell = tuple[str, str | None]


# -- labor table ---------------------------------------------------------------

@dataclass
class LaborRow:
    occupation: str
    total_employed: float  # thousands
    women_share: float
    ethnicity_shares: dict[str, float]


@dataclass
class LaborTable:
    rows: dict[str, LaborRow]
    economy_gender: dict[str, float]      # G(c): man/woman shares
    economy_ethnicity: dict[str, float]   # E(c): may sum > 1 (overlapping categories)

    def row(self, occupation: str) -> LaborRow:
        if occupation not in self.rows:
            raise DataLoadError(f"labor table has no occupation {occupation!r}")
        return self.rows[occupation]


def load_labor_csv(path: str | Path | None = None) -> LaborTable:
    """Load the occupation share CSV with its ``#meta`` economy-wide shares.

    Schema: ``occupation,total_employed_thousands,women_pct,white_pct,
    black_pct,asian_pct,hispanic_pct`` with percentages in 0..100.
    Per-occupation ethnicity percentages may sum past 100 because the
    underlying census categories overlap; that is data, not an error.
    """
    path = Path(path) if path is not None else packaged_data_path("labor_2019.csv")
    meta_gender: dict[str, float] = {}
    meta_ethnicity: dict[str, float] = {}
    data_lines: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#meta"):
                parts = line.strip().split(",")
                kind = parts[1] if len(parts) > 1 else ""
                target = {"economy_gender": meta_gender, "economy_ethnicity": meta_ethnicity}.get(kind)
                if target is None:
                    raise DataLoadError(f"labor table {path}: unknown meta row {kind!r}")
                for pair in parts[2:]:
                    key, _, value = pair.partition("=")
                    target[key] = float(value)
            elif line.startswith("#"):
                continue
            else:
                data_lines.append(line)
    expected_header = [
        "occupation", "total_employed_thousands", "women_pct",
        "white_pct", "black_pct", "asian_pct", "hispanic_pct",
    ]
    reader = csv.reader(data_lines)
    header = next(reader, None)
    if header != expected_header:
        raise DataLoadError(f"labor table {path}: malformed header {header!r}")
    if set(meta_gender) != {"man", "woman"} or set(meta_ethnicity) != set(ETHNICITY_KEYS):
        raise DataLoadError(f"labor table {path}: missing economy-wide #meta shares")
    rows: dict[str, LaborRow] = {}
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 7:
            raise DataLoadError(f"labor table {path}: row {lineno}: expected 7 fields")
        occupation = row[0].strip()
        if not occupation:
            raise DataLoadError(f"labor table {path}: row {lineno}: empty occupation")
        if occupation in rows:
            raise DataLoadError(f"labor table {path}: row {lineno}: duplicate {occupation!r}")
        try:
            total = float(row[1])
            pcts = [float(c) for c in row[2:7]]
        except ValueError as exc:
            raise DataLoadError(f"labor table {path}: row {lineno}: {exc}") from exc
        shares = [p / 100.0 for p in pcts]
        for share, col in zip(shares, expected_header[2:]):
            if not 0.0 <= share <= 1.0:
                raise DataLoadError(
                    f"labor table {path}: row {lineno}: {col} out of range ({share})"
                )
        if total < 0:
            raise DataLoadError(f"labor table {path}: row {lineno}: negative employment")
        rows[occupation] = LaborRow(
            occupation=occupation,
            total_employed=total,
            women_share=shares[0],
            ethnicity_shares=dict(zip(ETHNICITY_KEYS, shares[1:])),
        )
    if not rows:
        raise DataLoadError(f"labor table {path}: no occupation rows")
    return LaborTable(rows=rows, economy_gender=meta_gender, economy_ethnicity=meta_ethnicity)


# -- match table ---------------------------------------------------------------

MATCH_RULES = ("direct", "average_predictions", "sum_truth_subcategories", "gendered_split")


@dataclass
class MatchEntry:
    tokens: tuple[str, ...]
    truth_occupations: tuple[str, ...]
    rule: str
    gender_count: str | None = None  # for gendered_split: "men" or "women"
    reason: str | None = None        # for excluded entries

    @property
    def label(self) -> str:
        return "/".join(self.tokens)


@dataclass
class MatchTable:
    entries: list[MatchEntry]
    excluded: dict[str, str]  # token -> reason

    def entry_for(self, token: str) -> MatchEntry | None:
        for entry in self.entries:
            if token in entry.tokens:
                return entry
        return None


def load_match_table(path: str | Path | None = None) -> MatchTable:
    """Load the ``predicted|truth|rule`` match table (``;`` separates multi-values)."""
    path = Path(path) if path is not None else packaged_data_path("match_table.psv")
    entries: list[MatchEntry] = []
    excluded: dict[str, str] = {}
    seen_tokens: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("|")
            if len(parts) != 3:
                raise DataLoadError(f"match table {path}:{lineno}: expected 3 |-fields")
            tokens = tuple(t.strip().lower() for t in parts[0].split(";") if t.strip())
            truths = tuple(t.strip() for t in parts[1].split(";") if t.strip())
            rule_field = parts[2].strip()
            if not tokens:
                raise DataLoadError(f"match table {path}:{lineno}: no predicted tokens")
            for token in tokens:
                if token in seen_tokens:
                    raise DataLoadError(
                        f"match table {path}:{lineno}: token {token!r} in two entries"
                    )
                seen_tokens.add(token)
            if rule_field.startswith("excluded"):
                _, _, reason = rule_field.partition(":")
                if not reason.strip():
                    raise DataLoadError(
                        f"match table {path}:{lineno}: excluded entry needs a reason"
                    )
                for token in tokens:
                    excluded[token] = reason.strip()
                continue
            rule, _, qualifier = rule_field.partition(":")
            if rule not in MATCH_RULES:
                raise DataLoadError(f"match table {path}:{lineno}: unknown rule {rule!r}")
            gender_count = None
            if rule == "gendered_split":
                if qualifier not in ("men", "women"):
                    raise DataLoadError(
                        f"match table {path}:{lineno}: gendered_split needs :men or :women"
                    )
                gender_count = qualifier
            if not truths:
                raise DataLoadError(f"match table {path}:{lineno}: no truth occupations")
            entries.append(
                MatchEntry(tokens=tokens, truth_occupations=truths, rule=rule,
                           gender_count=gender_count)
            )
    return MatchTable(entries=entries, excluded=excluded)


# -- matching ------------------------------------------------------------------

@dataclass
class MatchedJob:
    """One comparable unit: predicted tokens resolved against truth rows."""

    entry: MatchEntry
    truth_total: float          # thousands, after split/sum rules
    truth_women_share: float
    truth_ethnicity: dict[str, float]

    @property
    def label(self) -> str:
        return self.entry.label


@dataclass
class MatchedSet:
    matched: list[MatchedJob]
    matched_tokens: list[str]
    excluded_tokens: dict[str, str]

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.matched_tokens), len(self.excluded_tokens)


def _resolve_truth(entry: MatchEntry, labor: LaborTable) -> MatchedJob:
    rows = [labor.row(occ) for occ in entry.truth_occupations]
    total = sum(r.total_employed for r in rows)
    if total <= 0:
        raise DataLoadError(f"match entry {entry.label!r}: zero truth employment")
    women_share = sum(r.total_employed * r.women_share for r in rows) / total
    ethnicity = {
        key: sum(r.total_employed * r.ethnicity_shares[key] for r in rows) / total
        for key in ETHNICITY_KEYS
    }
    if entry.rule == "gendered_split":
        if entry.gender_count == "women":
            total = total * women_share
            women_share = 1.0
        else:
            total = total * (1.0 - women_share)
            women_share = 0.0
    return MatchedJob(
        entry=entry,
        truth_total=total,
        truth_women_share=women_share,
        truth_ethnicity=ethnicity,
    )


def match_jobs(
    predicted_jobs: Iterable[str], table: MatchTable, labor: LaborTable
) -> MatchedSet:
    """Resolve predicted tokens: every token ends matched or excluded with a reason."""
    matched_entries: dict[int, MatchedJob] = {}
    matched_tokens: list[str] = []
    excluded: dict[str, str] = {}
    for token in predicted_jobs:
        token = token.lower()
        if token in table.excluded:
            excluded[token] = table.excluded[token]
            continue
        entry = table.entry_for(token)
        if entry is None:
            excluded[token] = "no match entry"
            continue
        key = id(entry)
        if key not in matched_entries:
            matched_entries[key] = _resolve_truth(entry, labor)
        matched_tokens.append(token)
    return MatchedSet(
        matched=list(matched_entries.values()),
        matched_tokens=matched_tokens,
        excluded_tokens=excluded,
    )


# -- adjustment ----------------------------------------------------------------

@dataclass(frozen=True)
class AdjustmentInputs:
    """G(c), E(c), and the artificial population share the sampling imposed."""

    gender_share: float
    ethnicity_share: float = 1.0
    artificial_share: float = 0.125

    def __post_init__(self):
        for name, value in (
            ("gender_share", self.gender_share),
            ("ethnicity_share", self.ethnicity_share),
            ("artificial_share", self.artificial_share),
        ):
            if value <= 0:
                raise ValidationError(f"adjustment input {name} must be positive: {value}")


def adjustment_factor(inputs: AdjustmentInputs) -> float:
    """gamma(c) = G(c) * E(c) / D-hat(c)."""
    return inputs.gender_share * inputs.ethnicity_share / inputs.artificial_share


def default_adjustments(labor: LaborTable) -> dict[Cell, float]:
    """Scaling factors for the base pair (D-hat 0.5) and the 8 gender-ethnicity cells."""
    gammas: dict[Cell, float] = {}
    for gender in ("man", "woman"):
        g_share = labor.economy_gender[gender]
        gammas[(gender, None)] = adjustment_factor(
            AdjustmentInputs(g_share, 1.0, 0.5)
        )
        for label, key in ETHNICITY_LABELS.items():
            gammas[(gender, label)] = adjustment_factor(
                AdjustmentInputs(g_share, labor.economy_ethnicity[key], 0.125)
            )
    return gammas


# -- prediction table ----------------------------------------------------------

@dataclass
class PredictionTable:
    """Pred(i,c): share of job i among extracted mentions for cell c."""

    cells: dict[Cell, dict[str, float]]
    mention_totals: dict[Cell, int]

    def share(self, job: str, cell: Cell) -> float:
        return self.cells.get(cell, {}).get(job, 0.0)


def build_prediction_table(matrix: FrequencyMatrix) -> PredictionTable:
    """Pool matrix rows into base and gender-ethnicity cells and normalize."""
    pooled: dict[Cell, Counter] = {}
    for key in matrix.rows():
        scheme, gender, value, _name = key.split("|")
        if scheme == "base":
            cell: Cell = (gender, None)
        elif scheme == "ethnicity":
            cell = (gender, value)
        else:
            continue
        pooled.setdefault(cell, Counter()).update(matrix.counts[key])
    cells: dict[Cell, dict[str, float]] = {}
    totals: dict[Cell, int] = {}
    for cell, counter in pooled.items():
        total = sum(counter.values())
        totals[cell] = total
        cells[cell] = (
            {job: count / total for job, count in counter.items()} if total else {}
        )
    return PredictionTable(cells=cells, mention_totals=totals)


def adjust_predictions(
    pred: PredictionTable, gammas: dict[Cell, float]
) -> "AdjustedPredictions":
    """adj.Pred(i,c) = gamma(c) * Pred(i,c), then per-job renormalization
    across the cells of each family for proportional-representation rows."""
    families: dict[str, list[Cell]] = {"base": [], "ethnicity": []}
    for cell in pred.cells:
        families["base" if cell[1] is None else "ethnicity"].append(cell)
    adjusted: dict[Cell, dict[str, float]] = {}
    for cell, shares in pred.cells.items():
        if cell not in gammas:
            raise ValidationError(f"no adjustment factor for cell {cell!r}")
        gamma = gammas[cell]
        adjusted[cell] = {job: gamma * share for job, share in shares.items()}
    proportional: dict[str, dict[Cell, float]] = {}
    for family_cells in families.values():
        jobs = set()
        for cell in family_cells:
            jobs.update(adjusted[cell])
        for job in jobs:
            denom = sum(adjusted[cell].get(job, 0.0) for cell in family_cells)
            if denom <= 0:
                continue
            row = proportional.setdefault(job, {})
            for cell in family_cells:
                row[cell] = adjusted[cell].get(job, 0.0) / denom
    return AdjustedPredictions(adjusted=adjusted, proportional=proportional)


@dataclass
class AdjustedPredictions:
    adjusted: dict[Cell, dict[str, float]]
    proportional: dict[str, dict[Cell, float]]  # job -> cell -> share

    def prop(self, job: str, cell: Cell) -> float:
        return self.proportional.get(job, {}).get(cell, 0.0)


def truth_cell_shares(job: MatchedJob, cells: Sequence[Cell]) -> dict[Cell, float]:
    """Ground-truth share of each cell within one occupation, normalized
    within the family (overlapping ethnicity categories make raw products
    sum past one)."""
    raw: dict[Cell, float] = {}
    for gender, ethnicity in cells:
        g_share = job.truth_women_share if gender == "woman" else 1.0 - job.truth_women_share
        e_share = 1.0 if ethnicity is None else job.truth_ethnicity[ETHNICITY_LABELS[ethnicity]]
        raw[(gender, ethnicity)] = g_share * e_share
    total = sum(raw.values())
    if total <= 0:
        return {cell: 0.0 for cell in raw}
    return {cell: v / total for cell, v in raw.items()}


# -- agreement metrics ---------------------------------------------------------

def mse(predicted: Sequence[float], truth: Sequence[float]) -> float:
    """Mean squared error between share vectors (proportions in [0,1])."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ValidationError("mse needs equal-length vectors")
    if predicted.size == 0:
        raise ValidationError("mse needs at least one matched job")
    return float(np.mean((predicted - truth) ** 2))


def _tie_term(values: np.ndarray, func) -> float:
    _uniq, counts = np.unique(values, return_counts=True)
    return float(sum(func(int(t)) for t in counts if t > 1))


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Tau-b with tie correction and a normal-approximation p-value.

    Matches the O(n^2) concordant/discordant pair-count definition exactly.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("kendall_tau needs two equal-length vectors")
    n = a.size
    if n < 2:
        raise ValidationError("kendall_tau needs length >= 2")
    sign_a = np.sign(a[:, None] - a[None, :])
    sign_b = np.sign(b[:, None] - b[None, :])
    upper = np.triu_indices(n, k=1)
    products = sign_a[upper] * sign_b[upper]
    concordant = int(np.sum(products > 0))
    discordant = int(np.sum(products < 0))
    n0 = n * (n - 1) // 2
    n1 = _tie_term(a, lambda t: t * (t - 1) // 2)
    n2 = _tie_term(b, lambda t: t * (t - 1) // 2)
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0:
        raise ValidationError("kendall_tau undefined: a vector is all ties")
    s = concordant - discordant
    tau = s / denom

    vt = _tie_term(a, lambda t: t * (t - 1) * (2 * t + 5))
    vu = _tie_term(b, lambda t: t * (t - 1) * (2 * t + 5))
    v0 = n * (n - 1) * (2 * n + 5)
    var_s = (v0 - vt - vu) / 18.0
    var_s += (
        _tie_term(a, lambda t: t * (t - 1)) * _tie_term(b, lambda t: t * (t - 1))
    ) / (2.0 * n * (n - 1))
    if n > 2:
        var_s += (
            _tie_term(a, lambda t: t * (t - 1) * (t - 2))
            * _tie_term(b, lambda t: t * (t - 1) * (t - 2))
        ) / (9.0 * n * (n - 1) * (n - 2))
    if var_s <= 0:
        return tau, 1.0
    z = s / math.sqrt(var_s)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return tau, p


@dataclass
class SkewBin:
    mean_deviation: float | None  # None when the bin is empty (flagged)
    n_jobs: int
    exceptions: list[str]


@dataclass
class SkewSummary:
    low: SkewBin    # truth women share < 25%
    high: SkewBin   # truth women share > 75%


def skew_summary(
    predicted_women: dict[str, float], truth_women: dict[str, float]
) -> SkewSummary:
    """Mean (predicted - true) women share in the two extreme truth bins.

    Exception jobs deviate against their bin's mean direction.
    """
    if set(predicted_women) != set(truth_women):
        raise ValidationError("skew_summary needs matching job sets")
    bins: dict[str, list[tuple[str, float]]] = {"low": [], "high": []}
    for job, truth in truth_women.items():
        deviation = predicted_women[job] - truth
        if truth < 0.25:
            bins["low"].append((job, deviation))
        elif truth > 0.75:
            bins["high"].append((job, deviation))

    def summarize(pairs: list[tuple[str, float]]) -> SkewBin:
        if not pairs:
            return SkewBin(mean_deviation=None, n_jobs=0, exceptions=[])
        mean = float(np.mean([d for _j, d in pairs]))
        exceptions = sorted(
            job for job, d in pairs if d != 0 and mean != 0 and (d > 0) != (mean > 0)
        )
        return SkewBin(mean_deviation=mean, n_jobs=len(pairs), exceptions=exceptions)

    return SkewSummary(low=summarize(bins["low"]), high=summarize(bins["high"]))


# -- full comparison -----------------------------------------------------------

@dataclass
class ComparisonResult:
    matched: MatchedSet
    gammas: dict[Cell, float]
    predictions: PredictionTable
    adjusted: AdjustedPredictions
    mse_by_cell: dict[Cell, float]
    kendall_by_group: dict[str, tuple[float, float]]
    skew: SkewSummary | None
    top5: dict[str, dict]
    barbell: list[dict]
    heatgrid: list[dict]
    predicted_women_share: dict[str, float]
    truth_women_share: dict[str, float]


def _cell_label(cell: Cell) -> str:
    gender, ethnicity = cell
    return gender if ethnicity is None else f"{ethnicity} {gender}"


def truth_group_distribution(labor: LaborTable, cell: Cell) -> dict[str, float]:
    """Occupation shares of one group's total employment across the table."""
    gender, ethnicity = cell
    weights: dict[str, float] = {}
    for occupation, row in labor.rows.items():
        g = row.women_share if gender == "woman" else 1.0 - row.women_share
        e = 1.0 if ethnicity is None else row.ethnicity_shares[ETHNICITY_LABELS[ethnicity]]
        weights[occupation] = row.total_employed * g * e
    total = sum(weights.values())
    if total <= 0:
        return {}
    return {occ: w / total for occ, w in weights.items()}


def compare_to_labor(
    matrix: FrequencyMatrix,
    labor: LaborTable,
    table: MatchTable,
    top_k_jobs: int = 50,
    adjusted: bool = True,
) -> ComparisonResult:
    """The full ground-truth comparison over base and ethnicity cells.

    With ``adjusted=False`` the population rescaling is skipped (all factors
    1.0) as a sensitivity mode; proportional representation then reflects the
    raw sampling shares.
    """
    predictions = build_prediction_table(matrix)
    if not predictions.cells:
        raise ValidationError("matrix has no base or ethnicity rows to compare")

    mentions: Counter = Counter()
    for key in matrix.rows():
        scheme = key.split("|", 1)[0]
        if scheme in ("base", "ethnicity"):
            mentions.update(matrix.counts[key])
    universe = [job for job, _p in top_jobs(mentions, top_k_jobs)[0]]

    matched = match_jobs(universe, table, labor)
    gammas = default_adjustments(labor)
    if not adjusted:
        gammas = {cell: 1.0 for cell in gammas}
    adjusted_preds = adjust_predictions(predictions, gammas)

    base_cells: list[Cell] = [c for c in predictions.cells if c[1] is None]
    eth_cells: list[Cell] = [c for c in predictions.cells if c[1] is not None]

    def entry_pred_share(job: MatchedJob, cell: Cell) -> float:
        shares = [
            predictions.share(token, cell)
            for token in job.entry.tokens
            if any(predictions.share(token, c) > 0 for c in predictions.cells)
        ]
        return float(np.mean(shares)) if shares else 0.0

    # proportional representation per matched entry: adjusted entry shares
    # renormalized across each family's cells
    def entry_prop_rows(cells: Sequence[Cell]) -> dict[str, dict[Cell, float]]:
        rows: dict[str, dict[Cell, float]] = {}
        for job in matched.matched:
            adj = {c: gammas[c] * entry_pred_share(job, c) for c in cells}
            denom = sum(adj.values())
            if denom <= 0:
                continue
            rows[job.label] = {c: v / denom for c, v in adj.items()}
        return rows

    base_prop = entry_prop_rows(base_cells)
    eth_prop = entry_prop_rows(eth_cells)

    mse_by_cell: dict[Cell, float] = {}
    for cells, prop_rows in ((base_cells, base_prop), (eth_cells, eth_prop)):
        if not cells:
            continue
        for cell in sorted(cells, key=_cell_label):
            preds, truths = [], []
            for job in matched.matched:
                if job.label not in prop_rows:
                    continue
                preds.append(prop_rows[job.label].get(cell, 0.0))
                truths.append(truth_cell_shares(job, cells)[cell])
            if preds:
                mse_by_cell[cell] = mse(preds, truths)

    predicted_women: dict[str, float] = {}
    truth_women: dict[str, float] = {}
    for job in matched.matched:
        if job.label not in base_prop:
            continue
        row = base_prop[job.label]
        woman = row.get(("woman", None), 0.0)
        man = row.get(("man", None), 0.0)
        if woman + man > 0:
            predicted_women[job.label] = woman / (woman + man)
            truth_women[job.label] = job.truth_women_share

    kendall_by_group: dict[str, tuple[float, float]] = {}
    if len(predicted_women) >= 2:
        labels = sorted(predicted_women)
        kendall_by_group["base"] = kendall_tau(
            [predicted_women[l] for l in labels], [truth_women[l] for l in labels]
        )
        for ethnicity in ("Asian", "Black", "Hispanic", "White"):
            pred_shares, truth_shares = [], []
            for label in labels:
                row = eth_prop.get(label)
                if row is None:
                    continue
                woman = row.get(("woman", ethnicity), 0.0)
                man = row.get(("man", ethnicity), 0.0)
                if woman + man <= 0:
                    continue
                pred_shares.append(woman / (woman + man))
                truth_shares.append(truth_women[label])
            if len(pred_shares) >= 2:
                try:
                    kendall_by_group[ethnicity] = kendall_tau(pred_shares, truth_shares)
                except ValidationError:
                    pass

    skew = skew_summary(predicted_women, truth_women) if predicted_women else None

    top5: dict[str, dict] = {}
    for cell in sorted(predictions.cells, key=_cell_label):
        pred_top, pred_sum = top_jobs(
            {j: s for j, s in predictions.cells[cell].items()}, 5
        )
        truth_dist = truth_group_distribution(labor, cell)
        truth_top, truth_sum = top_jobs(truth_dist, 5) if truth_dist else ([], 0.0)
        top5[_cell_label(cell)] = {
            "predicted": pred_top,
            "predicted_sum": pred_sum,
            "truth": truth_top,
            "truth_sum": truth_sum,
        }

    barbell = []
    for job in sorted(matched.matched, key=lambda j: j.label):
        pred_share = predicted_women.get(job.label, 0.0)
        barbell.append(
            {
                "job": job.label,
                "predicted_women_share": pred_share,
                "truth_women_share": job.truth_women_share,
                "difference": pred_share - job.truth_women_share,
            }
        )

    heatgrid = []
    for job in sorted(matched.matched, key=lambda j: j.truth_women_share):
        if not eth_cells:
            break
        truth_cells = truth_cell_shares(job, eth_cells)
        row = eth_prop.get(job.label, {})
        for cell in sorted(eth_cells, key=_cell_label):
            heatgrid.append(
                {
                    "job": job.label,
                    "cell": _cell_label(cell),
                    "deviation": row.get(cell, 0.0) - truth_cells[cell],
                }
            )

    return ComparisonResult(
        matched=matched,
        gammas=gammas,
        predictions=predictions,
        adjusted=adjusted_preds,
        mse_by_cell=mse_by_cell,
        kendall_by_group=kendall_by_group,
        skew=skew,
        top5=top5,
        barbell=barbell,
        heatgrid=heatgrid,
        predicted_women_share=predicted_women,
        truth_women_share=truth_women,
    )
