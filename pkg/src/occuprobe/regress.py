"""Per-job binary-outcome logistic regressions with gender x category interactions.

Fits run on weighted cells (the binomial likelihood depends only on cell
counts), use Newton/IRLS with step-halving, and report Wald inference from
the observed information. Quasi-complete separation is flagged, never
reported as a converged fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demography import GENDERS, CategoryScheme
from .errors import DegenerateFitError, ValidationError
from .extract import FrequencyMatrix

MAX_ITERATIONS = 100
SCORE_TOL = 1e-8
LL_REL_TOL = 1e-10
SEPARATION_BETA = 15.0
SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class DesignMatrix:
    """Weighted-cell design: one row per (gender, value) cell.

    Columns are intercept, woman, |c| category dummies, |c| woman x category
    interactions; the base-man cell is the reference with all non-intercept
    predictors zero.
    """

    scheme: str
    job: str
    terms: tuple[str, ...]
    cells: tuple[tuple[str | None, str], ...]  # (value, gender)
    X: np.ndarray
    trials: np.ndarray
    successes: np.ndarray

    @property
    def n_obs(self) -> int:
        return int(self.trials.sum())

    def columns(self, terms: Sequence[str]) -> "DesignMatrix":
        """Nested sub-design selecting a subset of terms (same cells)."""
        idx = [self.terms.index(t) for t in terms]
        return DesignMatrix(
            scheme=self.scheme,
            job=self.job,
            terms=tuple(terms),
            cells=self.cells,
            X=self.X[:, idx],
            trials=self.trials,
            successes=self.successes,
        )

    def expand(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-call binary observations; estimates must match the cell fit."""
        rows = []
        outcomes = []
        for i in range(len(self.cells)):
            n = int(self.trials[i])
            k = int(self.successes[i])
            for j in range(n):
                rows.append(self.X[i])
                outcomes.append(1.0 if j < k else 0.0)
        return np.array(rows), np.array(outcomes)


def interaction_label(scheme: CategoryScheme, value: str) -> str:
    """Interaction term named by the label woman prompts actually used."""
    return scheme.label(value, "woman").lower()


def design_terms(scheme: CategoryScheme) -> tuple[str, ...]:
    terms = ["intercept", "woman"]
    terms.extend(v.lower() for v in scheme.values)
    terms.extend(f"woman:{interaction_label(scheme, v)}" for v in scheme.values)
    return tuple(terms)


def build_design(
    matrix: FrequencyMatrix,
    scheme: CategoryScheme,
    job: str,
    include_base: bool = True,
) -> DesignMatrix:
    """Cell design for one job: base calls pooled with one scheme's variants.

    Counts come from the raw matrix; job eligibility (threshold survival) is
    the caller's concern. Duplicate mentions within one sentence are capped
    at the call count so outcomes stay binary.
    """
    if scheme.name in ("base", "continent"):
        raise ValidationError(f"regressions need an identity intersection, not {scheme.name}")
    cells: list[tuple[str | None, str]] = []
    if include_base:
        cells.extend((None, g) for g in GENDERS)
    cells.extend((v, g) for v in scheme.values for g in GENDERS)

    size = len(scheme.values)
    terms = design_terms(scheme)
    X = np.zeros((len(cells), 2 + 2 * size))
    trials = np.zeros(len(cells))
    successes = np.zeros(len(cells))
    job_seen = False
    for i, (value, gender) in enumerate(cells):
        key = (
            f"base|{gender}||" if value is None else f"{scheme.name}|{gender}|{value}|"
        )
        if key not in matrix.calls:
            raise ValidationError(f"matrix is missing regression cell {key!r}")
        n = matrix.calls[key]
        k = matrix.counts[key].get(job, 0)
        job_seen = job_seen or job in matrix.counts[key]
        X[i, 0] = 1.0
        if gender == "woman":
            X[i, 1] = 1.0
        if value is not None:
            v_idx = scheme.values.index(value)
            X[i, 2 + v_idx] = 1.0
            if gender == "woman":
                X[i, 2 + size + v_idx] = 1.0
        trials[i] = n
        successes[i] = min(k, n)
    if not job_seen:
        raise ValidationError(f"job {job!r} absent from matrix for scheme {scheme.name}")
    return DesignMatrix(
        scheme=scheme.name,
        job=job,
        terms=terms,
        cells=tuple(cells),
        X=X,
        trials=trials,
        successes=successes,
    )


def make_design(
    terms: Sequence[str],
    X: Sequence[Sequence[float]],
    trials: Sequence[float],
    successes: Sequence[float],
    scheme: str = "custom",
    job: str = "job",
) -> DesignMatrix:
    """Hand-built design for direct fitting (tests, saturated oracles)."""
    return DesignMatrix(
        scheme=scheme,
        job=job,
        terms=tuple(terms),
        cells=tuple((None, "cell") for _ in range(len(trials))),
        X=np.asarray(X, dtype=float),
        trials=np.asarray(trials, dtype=float),
        successes=np.asarray(successes, dtype=float),
    )


@dataclass
class FitResult:
    """Maximum-likelihood fit with Wald inference and McFadden R2."""

    terms: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    log_likelihood: float
    null_log_likelihood: float
    mcfadden_r2: float
    converged: bool
    separation_detected: bool
    iterations: int
    n_obs: int

    def term(self, name: str) -> dict:
        i = self.terms.index(name)
        return {
            "coef": float(self.coef[i]),
            "se": float(self.se[i]),
            "z": float(self.z[i]),
            "p": float(self.p[i]),
        }

    def significant_terms(self, alpha: float = SIGNIFICANCE_LEVEL) -> list[str]:
        return [t for t, p in zip(self.terms, self.p) if p < alpha]


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    expeta = np.exp(eta[~pos])
    out[~pos] = expeta / (1.0 + expeta)
    return out


def cell_log_likelihood(
    successes: np.ndarray, trials: np.ndarray, prob: np.ndarray
) -> float:
    """Bernoulli log-likelihood of cell counts (no binomial constant)."""
    prob = np.clip(prob, 1e-12, 1.0 - 1e-12)
    return float(np.sum(successes * np.log(prob) + (trials - successes) * np.log1p(-prob)))


def log_likelihood(design: DesignMatrix, beta: Sequence[float]) -> float:
    """Log-likelihood at an arbitrary coefficient vector."""
    prob = _sigmoid(design.X @ np.asarray(beta, dtype=float))
    return cell_log_likelihood(design.successes, design.trials, prob)


def score(design: DesignMatrix, beta: Sequence[float]) -> np.ndarray:
    """Analytic score (log-likelihood gradient) at ``beta``."""
    prob = _sigmoid(design.X @ np.asarray(beta, dtype=float))
    return design.X.T @ (design.successes - design.trials * prob)


def null_log_likelihood(design: DesignMatrix) -> float:
    total_k = float(design.successes.sum())
    total_n = float(design.trials.sum())
    pbar = total_k / total_n
    return cell_log_likelihood(
        design.successes, design.trials, np.full(len(design.trials), pbar)
    )


def fit_logistic(design: DesignMatrix) -> FitResult:
    """Newton/IRLS fit starting at the null model.

    Separation (any |coef| > 15) is flagged and the fit marked non-converged.
    All-zero or all-one outcomes raise DegenerateFitError.
    """
    X = design.X
    trials = design.trials
    successes = design.successes
    total_k = float(successes.sum())
    total_n = float(trials.sum())
    if total_n <= 0 or total_k <= 0 or total_k >= total_n:
        raise DegenerateFitError(
            f"degenerate outcomes for {design.scheme}/{design.job}: "
            f"{total_k:g} of {total_n:g} positive"
        )
    p_cols = X.shape[1]
    beta = np.zeros(p_cols)
    beta[0] = math.log(total_k / (total_n - total_k))  # intercept-only MLE
    ll0 = null_log_likelihood(design)

    ll = log_likelihood(design, beta)
    converged = False
    separation = False
    iterations = 0
    for _ in range(MAX_ITERATIONS):
        prob = _sigmoid(X @ beta)
        grad = X.T @ (successes - trials * prob)
        if np.max(np.abs(grad)) < SCORE_TOL:
            converged = True
            break
        iterations += 1
        weights = trials * prob * (1.0 - prob)
        info = X.T @ (X * weights[:, None])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        new_beta = beta + step
        new_ll = log_likelihood(design, new_beta)
        halvings = 0
        while new_ll < ll - 1e-12 and halvings < 20:
            step = step / 2.0
            new_beta = beta + step
            new_ll = log_likelihood(design, new_beta)
            halvings += 1
        beta = new_beta
        if np.max(np.abs(beta)) > SEPARATION_BETA:
            separation = True
            break
        rel_change = abs(new_ll - ll) / (abs(ll) + 1e-300)
        ll = new_ll
        if rel_change < LL_REL_TOL:
            converged = True
            break

    prob = _sigmoid(X @ beta)
    ll = cell_log_likelihood(successes, trials, prob)
    weights = trials * prob * (1.0 - prob)
    info = X.T @ (X * weights[:, None])
    se = _wald_se(info)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, 0.0)
        z = np.where(np.isfinite(z), z, 0.0)
    p = np.array([wald_p(val) for val in z])
    if separation:
        converged = False
    r2 = 1.0 - ll / ll0
    if 0 > r2 > -1e-12:
        r2 = 0.0
    return FitResult(
        terms=design.terms,
        coef=beta,
        se=se,
        z=z,
        p=p,
        log_likelihood=ll,
        null_log_likelihood=ll0,
        mcfadden_r2=r2,
        converged=converged,
        separation_detected=separation,
        iterations=iterations,
        n_obs=design.n_obs,
    )


def _wald_se(info: np.ndarray) -> np.ndarray:
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    diag = np.diag(cov).copy()
    diag[~np.isfinite(diag) | (diag < 0)] = np.inf
    return np.sqrt(diag)


def wald_p(z: float) -> float:
    """Two-sided normal p-value; exactly 1 only at z = 0."""
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass
class StagedR2:
    """McFadden R2 across the three nested designs."""

    r2_main_without_woman: float
    r2_plus_woman: float
    r2_full: float
    fits: tuple[FitResult, FitResult, FitResult]

    @property
    def delta_woman(self) -> float:
        return self.r2_plus_woman - self.r2_main_without_woman

    @property
    def delta_interactions(self) -> float:
        return self.r2_full - self.r2_plus_woman

    @property
    def all_converged(self) -> bool:
        return all(f.converged for f in self.fits)


def staged_r2(
    matrix: FrequencyMatrix,
    scheme: CategoryScheme,
    job: str,
    include_base: bool = True,
) -> StagedR2:
    """Three nested fits on identical observations; R2 deltas per addition."""
    design = build_design(matrix, scheme, job, include_base=include_base)
    return staged_r2_from_design(design, scheme)


def staged_r2_from_design(design: DesignMatrix, scheme: CategoryScheme) -> StagedR2:
    category_terms = [v.lower() for v in scheme.values]
    stage1 = design.columns(["intercept"] + category_terms)
    stage2 = design.columns(["intercept", "woman"] + category_terms)
    fit1 = fit_logistic(stage1)
    fit2 = fit_logistic(stage2)
    fit3 = fit_logistic(design)
    return StagedR2(
        r2_main_without_woman=fit1.mcfadden_r2,
        r2_plus_woman=fit2.mcfadden_r2,
        r2_full=fit3.mcfadden_r2,
        fits=(fit1, fit2, fit3),
    )


@dataclass
class JobRegression:
    """Everything the reports need about one (scheme, job) regression."""

    scheme: str
    job: str
    fit: FitResult
    staged: StagedR2 | None
    error: str | None = None


def fit_scheme_jobs(
    matrix: FrequencyMatrix,
    scheme: CategoryScheme,
    jobs: Sequence[str],
    include_base: bool = True,
) -> list[JobRegression]:
    """Fit every surviving job for one scheme; failures are recorded, not raised."""
    results: list[JobRegression] = []
    for job in sorted(jobs):
        try:
            design = build_design(matrix, scheme, job, include_base=include_base)
            fit = fit_logistic(design)
            staged = staged_r2_from_design(design, scheme)
        except DegenerateFitError as exc:
            results.append(
                JobRegression(scheme=scheme.name, job=job, fit=None, staged=None, error=str(exc))
            )
            continue
        results.append(JobRegression(scheme=scheme.name, job=job, fit=fit, staged=staged))
    return results


@dataclass
class SchemeAggregate:
    scheme: str
    n_jobs: int
    n_converged: int
    significant_fraction: dict[str, float]
    mean_delta_r2_woman: float
    mean_delta_r2_interactions: float


@dataclass
class AggregateReport:
    schemes: dict[str, SchemeAggregate]

    @property
    def total_fits(self) -> int:
        return sum(agg.n_jobs for agg in self.schemes.values())


def aggregate(regressions: Sequence[JobRegression]) -> AggregateReport:
    """Cross-job roll-up: per-term significance fractions and mean R2 deltas.

    Non-converged fits count toward n_jobs but are excluded from fractions
    and means.
    """
    if not regressions:
        raise ValidationError("aggregate needs at least one regression")
    by_scheme: dict[str, list[JobRegression]] = {}
    for reg in regressions:
        by_scheme.setdefault(reg.scheme, []).append(reg)
    out: dict[str, SchemeAggregate] = {}
    for scheme_name in sorted(by_scheme):
        group = by_scheme[scheme_name]
        converged = [r for r in group if r.fit is not None and r.fit.converged]
        if converged:
            terms = converged[0].fit.terms
            fractions = {
                term: sum(1 for r in converged if r.fit.term(term)["p"] < SIGNIFICANCE_LEVEL)
                / len(converged)
                for term in terms
            }
        else:
            fractions = {}
        staged_ok = [
            r.staged for r in group if r.staged is not None and r.staged.all_converged
        ]
        mean_dw = (
            float(np.mean([s.delta_woman for s in staged_ok])) if staged_ok else float("nan")
        )
        mean_di = (
            float(np.mean([s.delta_interactions for s in staged_ok]))
            if staged_ok
            else float("nan")
        )
        out[scheme_name] = SchemeAggregate(
            scheme=scheme_name,
            n_jobs=len(group),
            n_converged=len(converged),
            significant_fraction=fractions,
            mean_delta_r2_woman=mean_dw,
            mean_delta_r2_interactions=mean_di,
        )
    return AggregateReport(schemes=out)
