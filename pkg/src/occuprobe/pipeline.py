"""Stage orchestration: plan -> generate -> extract -> analyze -> regress ->
compare -> report, plus the hyperparameter sweep.

Every stage writes versioned artifacts into the output directory and records
them in a manifest with content hashes; re-running a stage whose inputs and
configuration are unchanged is a no-op. With a mock backend and a fixed seed
the whole artifact tree is byte-identical across runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from . import benchmark as bm
from . import genclient as gc
from . import inequality as ineq
from . import regress as rg
from .config import RunConfig
from .demography import (
    GENDERS,
    GenerationPlan,
    build_identity_templates,
    build_name_templates,
    default_registry,
    load_name_table,
    packaged_data_path,
    plan_calls,
)
from .errors import (
    BackendError,
    CorpusIntegrityError,
    DataLoadError,
    UndefinedDistributionError,
    ValidationError,
)
from .extract import (
    FrequencyMatrix,
    apply_threshold,
    build_matrix,
    load_lexicon,
    threshold_cutoff,
)

STAGE_ORDER = ("plan", "generate", "extract", "analyze", "regress", "compare", "report")
IDENTITY_SCHEMES = ("ethnicity", "religion", "sexuality", "political")


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class Artifact:
    path: str  # relative to the output directory
    sha256: str
    stage: str


@dataclass
class Manifest:
    artifacts: dict[str, Artifact] = field(default_factory=dict)
    signatures: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "version": __version__,
            "artifacts": {
                name: {"path": a.path, "sha256": a.sha256, "stage": a.stage}
                for name, a in sorted(self.artifacts.items())
            },
            "signatures": dict(sorted(self.signatures.items())),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        if not path.exists():
            return cls()
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        manifest = cls()
        for name, entry in payload.get("artifacts", {}).items():
            manifest.artifacts[name] = Artifact(
                path=entry["path"], sha256=entry["sha256"], stage=entry["stage"]
            )
        manifest.signatures = dict(payload.get("signatures", {}))
        return manifest

    def save(self, path: Path) -> None:
        path.write_text(self.to_json(), encoding="utf-8")


class PipelineRun:
    """Shared state for one invocation: config, output dir, manifest."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out_dir / "manifest.json"
        self.manifest = Manifest.load(self.manifest_path)
        self.registry = default_registry(religion_capitalized=config.religion_capitalized)
        self.skipped_stages: list[str] = []

    # -- manifest helpers ---------------------------------------------------

    def register(self, stage: str, name: str, path: Path) -> None:
        rel = str(path.relative_to(self.out_dir))
        self.manifest.artifacts[name] = Artifact(
            path=rel, sha256=sha256_file(path), stage=stage
        )

    def drop_stage_artifacts(self, stage: str) -> None:
        self.manifest.artifacts = {
            n: a for n, a in self.manifest.artifacts.items() if a.stage != stage
        }

    def artifact_path(self, name: str) -> Path:
        artifact = self.manifest.artifacts.get(name)
        if artifact is None:
            raise ValidationError(self._missing_message(name))
        path = self.out_dir / artifact.path
        if not path.exists():
            raise ValidationError(self._missing_message(name))
        return path

    @staticmethod
    def _missing_message(name: str) -> str:
        producer = {
            "plan": "plan", "corpus": "generate", "matrix": "extract",
            "extraction": "extract",
        }.get(name, name)
        return (
            f"missing prerequisite artifact {name!r}: run the {producer!r} stage first"
        )

    def signature(self, stage: str, config_parts: dict, input_names: Sequence[str]) -> str:
        inputs = {
            name: self.manifest.artifacts[name].sha256
            for name in input_names
            if name in self.manifest.artifacts
        }
        payload = json.dumps(
            {"version": __version__, "config": config_parts, "inputs": inputs},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def up_to_date(self, stage: str, signature: str) -> bool:
        if self.manifest.signatures.get(stage) != signature:
            return False
        stage_artifacts = [a for a in self.manifest.artifacts.values() if a.stage == stage]
        if not stage_artifacts:
            return False
        return all(
            (self.out_dir / a.path).exists()
            and sha256_file(self.out_dir / a.path) == a.sha256
            for a in stage_artifacts
        )

    def finish_stage(self, stage: str, signature: str) -> None:
        self.manifest.signatures[stage] = signature
        self.manifest.save(self.manifest_path)

    # -- shared loaders -------------------------------------------------------

    def load_plan(self) -> GenerationPlan:
        return GenerationPlan.from_json(
            self.artifact_path("plan").read_text(encoding="utf-8")
        )

    def load_matrix(self) -> FrequencyMatrix:
        return FrequencyMatrix.from_csv(self.artifact_path("matrix"))

    def lexicon(self):
        return load_lexicon(self.config.lexicon_path)

    def build_plan(self) -> GenerationPlan:
        cfg = self.config
        specs = []
        for scheme_name in cfg.schemes:
            if scheme_name == "continent":
                table = load_name_table(cfg.names_path or packaged_data_path("names.csv"))
                specs.extend(build_name_templates(table, calls=cfg.name_calls))
            else:
                specs.extend(
                    build_identity_templates(
                        self.registry[scheme_name], calls=cfg.identity_calls
                    )
                )
        return plan_calls(specs)

    def build_backend(self):
        cfg = self.config
        kind = cfg.backend_kind()
        if kind == "mock":
            spec = gc.BiasSpec.from_json_file(cfg.backend_path())
            return gc.MockBackend(spec, seed=cfg.seed if cfg.seed is not None else 0)
        if kind == "http":
            return gc.HTTPBackend(cfg.backend)
        raise ValidationError("replay backends do not serve generation requests")


# -- csv helpers ---------------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                _fmt(cell) if isinstance(cell, float) else cell for cell in row
            ])


# -- stages ---------------------------------------------------------------------

def stage_plan(run: PipelineRun) -> None:
    cfg = run.config
    parts = {
        "schemes": list(cfg.schemes),
        "identity_calls": cfg.identity_calls,
        "name_calls": cfg.name_calls,
        "names": str(cfg.names_path) if cfg.names_path else None,
        "religion_capitalized": cfg.religion_capitalized,
    }
    signature = run.signature("plan", parts, [])
    if run.up_to_date("plan", signature):
        run.skipped_stages.append("plan")
        return
    run.drop_stage_artifacts("plan")
    plan = run.build_plan()
    path = run.out_dir / "plan.json"
    path.write_text(plan.to_json(), encoding="utf-8")
    run.register("plan", "plan", path)
    run.finish_stage("plan", signature)


def stage_generate(run: PipelineRun) -> None:
    cfg = run.config
    if cfg.backend is None:
        raise ValidationError("generate stage needs a backend in the config")
    kind = cfg.backend_kind()
    plan_path = run.artifact_path("plan")
    parts = {
        "backend": cfg.backend,
        "seed": cfg.seed,
        "params": [cfg.params.top_k, cfg.params.temperature, cfg.params.max_words],
        "request_batch": cfg.request_batch,
    }
    signature = run.signature("generate", parts, ["plan"])
    if run.up_to_date("generate", signature):
        run.skipped_stages.append("generate")
        return
    run.drop_stage_artifacts("generate")
    corpus_path = run.out_dir / "corpus.jsonl"
    if kind == "replay":
        source = cfg.backend_path()
        reader = gc.CorpusReader(source)
        for _record in reader:  # full validation pass
            pass
        corpus_path.write_bytes(Path(source).read_bytes())
    else:
        plan = GenerationPlan.from_json(plan_path.read_text(encoding="utf-8"))
        backend = run.build_backend()
        summary = gc.generate_corpus(
            plan,
            backend,
            cfg.params,
            corpus_path,
            request_batch=cfg.request_batch,
            max_inflight=cfg.max_inflight,
            checkpoint_every=cfg.checkpoint_every,
        )
        sidecar = Path(str(corpus_path) + ".errors.jsonl")
        if summary.record_errors:
            run.register("generate", "corpus_errors", sidecar)
        elif sidecar.exists():
            sidecar.unlink()  # stale sidecar from an earlier failed run
    run.register("generate", "corpus", corpus_path)
    run.finish_stage("generate", signature)


def stage_extract(run: PipelineRun) -> None:
    cfg = run.config
    corpus_path = run.artifact_path("corpus")
    lexicon_id = str(cfg.lexicon_path) if cfg.lexicon_path else "packaged"
    parts = {"lexicon": lexicon_id, "exclude_names": sorted(cfg.exclude_names)}
    signature = run.signature("extract", parts, ["corpus", "plan"])
    if run.up_to_date("extract", signature):
        run.skipped_stages.append("extract")
        return
    run.drop_stage_artifacts("extract")
    lexicon = run.lexicon()
    reader = gc.CorpusReader(corpus_path)
    expected = None
    plan_matches = False
    if "plan" in run.manifest.artifacts:
        plan = run.load_plan()
        plan_matches = reader.header.get("plan_hash") == plan.plan_hash
        if plan_matches:
            expected = {spec.subject.key() for spec in plan.specs}
    matrix = build_matrix(
        reader, lexicon, expected_profiles=expected, exclude_names=cfg.exclude_names
    )
    matrix_path = run.out_dir / "matrix.csv"
    matrix.to_csv(matrix_path)
    info = {
        "records": matrix.total_calls(),
        "excluded_records": matrix.excluded_records,
        "overall_loss_rate": matrix.overall_loss_rate(),
        "plan_enforced": plan_matches,
        "loss_rate_per_scheme": {
            scheme: (
                sum(matrix.misses[k] for k in matrix.rows() if k.startswith(scheme + "|"))
                / max(
                    1,
                    sum(matrix.calls[k] for k in matrix.rows() if k.startswith(scheme + "|")),
                )
            )
            for scheme in sorted({k.split("|", 1)[0] for k in matrix.rows()})
        },
    }
    extraction_path = run.out_dir / "extraction.json"
    extraction_path.write_text(
        json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    run.register("extract", "matrix", matrix_path)
    run.register("extract", "extraction", extraction_path)
    run.finish_stage("extract", signature)


def _scheme_pools(run: PipelineRun, matrix: FrequencyMatrix) -> dict[str, FrequencyMatrix]:
    """Scheme-restricted, thresholded pools for schemes present in the matrix."""
    pools: dict[str, FrequencyMatrix] = {}
    present = {key.split("|", 1)[0] for key in matrix.rows()}
    for scheme in run.config.schemes:
        if scheme in present:
            pools[scheme] = apply_threshold(matrix.restrict(scheme), run.config.threshold)
    return pools


def stage_analyze(run: PipelineRun) -> None:
    cfg = run.config
    run.artifact_path("matrix")
    parts = {
        "threshold": cfg.threshold,
        "schemes": list(cfg.schemes),
        "gini_raw": cfg.gini_raw,
    }
    signature = run.signature("analyze", parts, ["matrix"])
    if run.up_to_date("analyze", signature):
        run.skipped_stages.append("analyze")
        return
    run.drop_stage_artifacts("analyze")
    matrix = run.load_matrix()
    pools = _scheme_pools(run, matrix)
    stats_dir = run.out_dir / "stats"

    rows = [
        (
            scheme,
            pool.threshold.pool_calls,
            float(pool.threshold.cutoff),
            len(pool.jobs()),
            pool.threshold.dropped_jobs,
            float(pool.threshold.preserved_share),
        )
        for scheme, pool in sorted(pools.items())
    ]
    _write_csv(
        stats_dir / "thresholds.csv",
        ["scheme", "pool_calls", "cutoff", "surviving_jobs", "dropped_jobs", "preserved_share"],
        rows,
    )
    _write_csv(
        stats_dir / "preserved_share.csv",
        ["scheme", "profile", "preserved_share"],
        [
            (scheme, key, float(share))
            for scheme, pool in sorted(pools.items())
            for key, share in sorted(pool.threshold.preserved_share_per_row.items())
        ],
    )

    gini_rows = []
    variant_rows = []
    base_man_gini = None
    pooled_ginis: dict[tuple[str, str], float] = {}
    for scheme in run.config.schemes:
        pool = pools.get(scheme)
        if pool is None:
            continue
        gini_source = matrix.restrict(scheme) if cfg.gini_raw else pool
        for gender in GENDERS:
            pooled = ineq.pooled_gender_counts(gini_source, gender)
            try:
                value = ineq.gini(list(pooled.values()))
            except UndefinedDistributionError:
                continue
            pooled_ginis[(gender, scheme)] = value
            if scheme == "base" and gender == "man":
                base_man_gini = value
        for key in pool.rows():
            _s, gender, value, name = key.split("|")
            if name:
                continue
            counts = list(pool.counts[key].values())
            if any(c > 0 for c in counts):
                variant_rows.append((scheme, value, gender, float(ineq.gini(counts))))
    for gender in GENDERS:
        for scheme in run.config.schemes:
            g = pooled_ginis.get((gender, scheme))
            if g is None:
                continue
            relative = (
                float(ineq.relative_gini(g, base_man_gini))
                if base_man_gini
                else ""
            )
            gini_rows.append((gender, scheme, float(g), relative))
    _write_csv(
        stats_dir / "gini.csv",
        ["gender", "scheme", "gini", "relative_pct_base_man"],
        gini_rows,
    )
    _write_csv(
        stats_dir / "gini_variants.csv",
        ["scheme", "value", "gender", "gini"],
        sorted(variant_rows),
    )

    rank_rows = []
    quantile_rows = []
    lorenz_rows = []
    for scheme, pool in sorted(pools.items()):
        for gender in GENDERS:
            pooled = ineq.pooled_gender_counts(pool, gender)
            if not any(pooled.values()):
                continue
            dist = ineq.rank_distribution(pooled)
            for rank, (job, count, cum) in enumerate(
                zip(dist.jobs, dist.counts, dist.cumulative_shares), start=1
            ):
                rank_rows.append((scheme, gender, rank, job, int(count), float(cum)))
            quantile_rows.append(
                (
                    scheme,
                    gender,
                    ineq.cumulative_quantile(dist, 0.5),
                    ineq.cumulative_quantile(dist, 0.9),
                    ineq.cumulative_quantile(dist, 0.95),
                    dist.n,
                )
            )
            for x, y in ineq.lorenz(dist):
                lorenz_rows.append((scheme, gender, float(x), float(y)))
    _write_csv(
        stats_dir / "rank_frequency.csv",
        ["scheme", "gender", "rank", "job", "count", "cumulative_share"],
        rank_rows,
    )
    _write_csv(
        stats_dir / "cumulative_quantiles.csv",
        ["scheme", "gender", "jobs_at_50", "jobs_at_90", "jobs_at_95", "unique_jobs"],
        quantile_rows,
    )
    _write_csv(
        stats_dir / "lorenz.csv",
        ["scheme", "gender", "population_share", "count_share"],
        lorenz_rows,
    )

    top_rows = []
    for scheme, pool in sorted(pools.items()):
        cells: dict[tuple[str, str], dict] = {}
        for key in pool.rows():
            _s, gender, value, _name = key.split("|")
            cell = cells.setdefault((value, gender), {})
            for job, count in pool.counts[key].items():
                cell[job] = cell.get(job, 0) + count
        for (value, gender), counts in sorted(cells.items()):
            if not counts:
                continue
            top, cumsum = ineq.top_jobs(counts, 5)
            for rank, (job, prop) in enumerate(top, start=1):
                top_rows.append((scheme, value, gender, rank, job, float(prop), float(cumsum)))
    _write_csv(
        stats_dir / "top_jobs.csv",
        ["scheme", "value", "gender", "rank", "job", "proportion", "top5_sum"],
        top_rows,
    )

    overrep_rows = []
    for scheme, pool in sorted(pools.items()):
        if scheme == "base":
            continue
        scheme_def = run.registry[scheme]
        points = ineq.overrep_factors(pool, scheme_def)
        for point in points:
            overrep_rows.append(
                (
                    scheme,
                    point.job,
                    point.value,
                    float(point.man_factor) if point.man_factor is not None else "",
                    float(point.woman_factor) if point.woman_factor is not None else "",
                    float(point.man_split),
                    float(point.woman_split),
                    float(point.distance),
                    "" if point.man_factor is not None else "man_undefined;"
                    + ("" if point.woman_factor is not None else "woman_undefined"),
                )
            )
    _write_csv(
        stats_dir / "overrep.csv",
        [
            "scheme", "job", "value", "man_factor", "woman_factor",
            "man_split", "woman_split", "distance", "flags",
        ],
        overrep_rows,
    )

    for name in (
        "thresholds", "preserved_share", "gini", "gini_variants",
        "rank_frequency", "cumulative_quantiles", "lorenz", "top_jobs", "overrep",
    ):
        run.register("analyze", f"stats_{name}", stats_dir / f"{name}.csv")
    run.finish_stage("analyze", signature)


def stage_regress(run: PipelineRun) -> None:
    cfg = run.config
    run.artifact_path("matrix")
    parts = {"threshold": cfg.threshold, "schemes": list(cfg.schemes)}
    signature = run.signature("regress", parts, ["matrix"])
    if run.up_to_date("regress", signature):
        run.skipped_stages.append("regress")
        return
    run.drop_stage_artifacts("regress")
    matrix = run.load_matrix()
    present = {key.split("|", 1)[0] for key in matrix.rows()}
    if "base" not in present:
        raise ValidationError(
            "regress stage needs base rows as the reference group: "
            "include the base scheme and re-run generate/extract"
        )
    pools = _scheme_pools(run, matrix)
    regressions: list[rg.JobRegression] = []
    for scheme_name in IDENTITY_SCHEMES:
        if scheme_name not in pools:
            continue
        jobs = pools[scheme_name].jobs()
        regressions.extend(
            rg.fit_scheme_jobs(matrix, run.registry[scheme_name], jobs)
        )

    regress_dir = run.out_dir / "regress"
    fit_rows = []
    grid_rows = []
    staged_rows = []
    skipped_rows = []
    for reg in regressions:
        if reg.fit is None:
            skipped_rows.append((reg.scheme, reg.job, reg.error))
            continue
        for term in reg.fit.terms:
            stats = reg.fit.term(term)
            fit_rows.append(
                (
                    reg.scheme, reg.job, term,
                    float(stats["coef"]), float(stats["se"]),
                    float(stats["z"]), float(stats["p"]),
                    int(reg.fit.converged), int(reg.fit.separation_detected),
                )
            )
            status = (
                "nofit"
                if not reg.fit.converged
                else ("sig" if stats["p"] < rg.SIGNIFICANCE_LEVEL else "nonsig")
            )
            grid_rows.append((reg.scheme, reg.job, term, status))
        if reg.staged is not None:
            staged_rows.append(
                (
                    reg.scheme, reg.job,
                    float(reg.staged.r2_main_without_woman),
                    float(reg.staged.r2_plus_woman),
                    float(reg.staged.r2_full),
                    float(reg.staged.delta_woman),
                    float(reg.staged.delta_interactions),
                    int(reg.staged.all_converged),
                )
            )
    _write_csv(
        regress_dir / "regressions.csv",
        ["scheme", "job", "term", "coef", "se", "z", "p", "converged", "separation"],
        fit_rows,
    )
    _write_csv(
        regress_dir / "pvalue_grid.csv",
        ["scheme", "job", "term", "status"],
        grid_rows,
    )
    _write_csv(
        regress_dir / "staged_r2.csv",
        [
            "scheme", "job", "r2_main_without_woman", "r2_plus_woman", "r2_full",
            "delta_woman", "delta_interactions", "all_converged",
        ],
        staged_rows,
    )
    if skipped_rows:
        _write_csv(regress_dir / "skipped.csv", ["scheme", "job", "error"], skipped_rows)

    agg_rows = []
    if regressions:
        report = rg.aggregate(regressions)
        for scheme_name, agg in sorted(report.schemes.items()):
            dw = agg.mean_delta_r2_woman * 100.0
            di = agg.mean_delta_r2_interactions * 100.0
            for term, frac in sorted(agg.significant_fraction.items()):
                agg_rows.append(
                    (
                        scheme_name, agg.n_jobs, agg.n_converged, term,
                        float(frac), float(dw), float(di),
                    )
                )
    _write_csv(
        regress_dir / "aggregate.csv",
        [
            "scheme", "n_jobs", "n_converged", "term", "significant_fraction",
            "mean_delta_r2_woman_pp", "mean_delta_r2_interactions_pp",
        ],
        agg_rows,
    )

    for name in ("regressions", "pvalue_grid", "staged_r2", "aggregate"):
        run.register("regress", f"regress_{name}", regress_dir / f"{name}.csv")
    if skipped_rows:
        run.register("regress", "regress_skipped", regress_dir / "skipped.csv")
    run.finish_stage("regress", signature)


def stage_compare(run: PipelineRun) -> None:
    cfg = run.config
    run.artifact_path("matrix")
    labor_id = str(cfg.labor_path) if cfg.labor_path else "packaged"
    matches_id = str(cfg.matches_path) if cfg.matches_path else "packaged"
    parts = {
        "labor": labor_id,
        "matches": matches_id,
        "top_jobs": cfg.top_jobs,
        "mse_raw": cfg.mse_raw,
    }
    signature = run.signature("compare", parts, ["matrix"])
    if run.up_to_date("compare", signature):
        run.skipped_stages.append("compare")
        return
    run.drop_stage_artifacts("compare")
    matrix = run.load_matrix()
    labor = bm.load_labor_csv(cfg.labor_path)
    table = bm.load_match_table(cfg.matches_path)
    result = bm.compare_to_labor(
        matrix, labor, table, top_k_jobs=cfg.top_jobs, adjusted=not cfg.mse_raw
    )
    compare_dir = run.out_dir / "compare"

    _write_csv(
        compare_dir / "adjustments.csv",
        ["gender", "ethnicity", "gamma"],
        [
            (cell[0], cell[1] or "", float(gamma))
            for cell, gamma in sorted(result.gammas.items(), key=lambda kv: (kv[0][1] or "", kv[0][0]))
        ],
    )
    _write_csv(
        compare_dir / "matches.csv",
        ["kind", "token_or_entry", "detail"],
        [("matched_entry", job.label, ";".join(job.entry.truth_occupations))
         for job in sorted(result.matched.matched, key=lambda j: j.label)]
        + [("matched_token", token, "") for token in sorted(result.matched.matched_tokens)]
        + [("excluded_token", token, reason)
           for token, reason in sorted(result.matched.excluded_tokens.items())],
    )
    _write_csv(
        compare_dir / "mse.csv",
        ["gender", "ethnicity", "mse"],
        [
            (cell[0], cell[1] or "", float(value))
            for cell, value in sorted(
                result.mse_by_cell.items(), key=lambda kv: (kv[0][1] or "", kv[0][0])
            )
        ],
    )
    _write_csv(
        compare_dir / "kendall.csv",
        ["group", "tau", "p"],
        [
            (group, float(tau), float(p))
            for group, (tau, p) in sorted(result.kendall_by_group.items())
        ],
    )
    skew_rows = []
    if result.skew is not None:
        for label, bin_ in (("lt25", result.skew.low), ("gt75", result.skew.high)):
            skew_rows.append(
                (
                    label,
                    float(bin_.mean_deviation) if bin_.mean_deviation is not None else "",
                    bin_.n_jobs,
                    ";".join(bin_.exceptions),
                    "" if bin_.mean_deviation is not None else "empty_bin",
                )
            )
    _write_csv(
        compare_dir / "skew.csv",
        ["bin", "mean_deviation", "n_jobs", "exceptions", "flags"],
        skew_rows,
    )
    top5_rows = []
    for label, bundle in sorted(result.top5.items()):
        for rank, (job, prop) in enumerate(bundle["predicted"], start=1):
            top5_rows.append(
                (label, "predicted", rank, job, float(prop), float(bundle["predicted_sum"]))
            )
        for rank, (occ, prop) in enumerate(bundle["truth"], start=1):
            top5_rows.append(
                (label, "truth", rank, occ, float(prop), float(bundle["truth_sum"]))
            )
    _write_csv(
        compare_dir / "top5_vs_truth.csv",
        ["cell", "side", "rank", "job", "proportion", "top5_sum"],
        top5_rows,
    )
    _write_csv(
        compare_dir / "barbell.csv",
        ["job", "predicted_women_share", "truth_women_share", "difference"],
        [
            (
                row["job"],
                float(row["predicted_women_share"]),
                float(row["truth_women_share"]),
                float(row["difference"]),
            )
            for row in result.barbell
        ],
    )
    _write_csv(
        compare_dir / "heatgrid.csv",
        ["job", "cell", "deviation"],
        [
            (row["job"], row["cell"], float(row["deviation"]))
            for row in result.heatgrid
        ],
    )
    for name in (
        "adjustments", "matches", "mse", "kendall", "skew", "top5_vs_truth",
        "barbell", "heatgrid",
    ):
        run.register("compare", f"compare_{name}", compare_dir / f"{name}.csv")
    run.finish_stage("compare", signature)


def _read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        return header, list(reader)


def _md_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return lines


def stage_report(run: PipelineRun) -> None:
    if not run.manifest.artifacts:
        raise ValidationError("report stage needs at least one prior artifact")
    signature = run.signature(
        "report", {}, sorted(n for n in run.manifest.artifacts if not n.startswith("report"))
    )
    if run.up_to_date("report", signature):
        run.skipped_stages.append("report")
        return
    run.drop_stage_artifacts("report")
    lines: list[str] = ["# Occupational-association probe report", ""]
    notices: list[str] = []

    def section(title: str, artifact: str, renderer: Callable[[Path], list[str]]) -> None:
        lines.append(f"## {title}")
        entry = run.manifest.artifacts.get(artifact)
        if entry is None or not (run.out_dir / entry.path).exists():
            notice = f"section omitted: artifact {artifact!r} missing (run its stage first)"
            notices.append(notice)
            lines.extend([f"_{notice}_", ""])
            return
        lines.extend(renderer(run.out_dir / entry.path))
        lines.append("")

    def render_plan(path: Path) -> list[str]:
        plan = json.loads(path.read_text(encoding="utf-8"))
        rows = [
            (scheme, total) for scheme, total in sorted(plan["scheme_totals"].items())
        ]
        out = _md_table(["scheme", "planned calls"], rows)
        out.append(f"\nTotal planned calls: **{plan['total']}**")
        return out

    def render_gini(path: Path) -> list[str]:
        header, rows = _read_csv_rows(path)
        return _md_table(header, rows)

    def render_aggregate(path: Path) -> list[str]:
        header, rows = _read_csv_rows(path)
        return _md_table(header, rows)

    def render_mse(path: Path) -> list[str]:
        header, rows = _read_csv_rows(path)
        return _md_table(header, rows)

    def render_kendall(path: Path) -> list[str]:
        header, rows = _read_csv_rows(path)
        return _md_table(header, rows)

    def render_top5(path: Path) -> list[str]:
        header, rows = _read_csv_rows(path)
        return _md_table(header, rows[:40] if len(rows) > 40 else rows)

    def render_extraction(path: Path) -> list[str]:
        info = json.loads(path.read_text(encoding="utf-8"))
        out = [f"- records: {info['records']}",
               f"- overall loss rate: {info['overall_loss_rate']:.4f}",
               f"- excluded records: {info['excluded_records']}"]
        for scheme, rate in sorted(info.get("loss_rate_per_scheme", {}).items()):
            out.append(f"- loss rate [{scheme}]: {rate:.4f}")
        return out

    section("Call plan", "plan", render_plan)
    section("Extraction", "extraction", render_extraction)
    section("Distribution inequality (pooled Gini)", "stats_gini", render_gini)
    section("Regression aggregate", "regress_aggregate", render_aggregate)
    section("Ground-truth comparison: MSE", "compare_mse", render_mse)
    section("Ground-truth comparison: rank correlation", "compare_kendall", render_kendall)
    section("Top-5 predicted vs ground truth", "compare_top5_vs_truth", render_top5)

    lines.append("## Plot data")
    plot_artifacts = sorted(
        (name, a.path)
        for name, a in run.manifest.artifacts.items()
        if name.startswith(("stats_", "compare_", "regress_"))
    )
    for name, rel in plot_artifacts:
        lines.append(f"- `{rel}` ({name})")
    lines.append("")
    report_path = run.out_dir / "report.md"
    report_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    run.register("report", "report", report_path)
    run.finish_stage("report", signature)


def stage_sweep(run: PipelineRun) -> None:
    cfg = run.config
    if not cfg.sweep:
        raise ValidationError("sweep stage needs a 'sweep' config block")
    if cfg.backend is None or cfg.backend_kind() == "replay":
        raise ValidationError("sweep stage needs a mock or http backend")
    parts = {"sweep": cfg.sweep, "backend": cfg.backend, "seed": cfg.seed}
    signature = run.signature("sweep", parts, [])
    if run.up_to_date("sweep", signature):
        run.skipped_stages.append("sweep")
        return
    run.drop_stage_artifacts("sweep")
    schemes = cfg.sweep.get("schemes", ["base"])
    calls = int(cfg.sweep.get("calls", 1000))
    specs = []
    for scheme_name in schemes:
        if scheme_name == "continent":
            raise ValidationError("sweep over name templates is not supported")
        specs.extend(build_identity_templates(run.registry[scheme_name], calls=calls))
    grid = gc.grid_from_axes(
        top_k_values=cfg.sweep.get("top_k", ()),
        temperature_values=cfg.sweep.get("temperature", ()),
        base=cfg.params,
    )
    if not grid:
        grid = [cfg.params]
    backend = run.build_backend()
    sweep_dir = run.out_dir / "sweep"
    corpora = gc.sweep(specs, grid, backend, sweep_dir, max_inflight=cfg.max_inflight)
    lexicon = run.lexicon()
    metric_rows = []
    for params, path in corpora.items():
        reader = gc.CorpusReader(path)
        matrix = build_matrix(reader, lexicon)
        for gender in GENDERS:
            pooled = ineq.pooled_gender_counts(matrix, gender)
            if not any(pooled.values()):
                continue
            metrics = ineq.diversity_metrics(pooled)
            metric_rows.append(
                (
                    params.top_k,
                    float(params.temperature),
                    gender,
                    float(metrics["top5_share"]),
                    int(metrics["n_jobs_95"]),
                    int(metrics["unique_jobs"]),
                )
            )
        run.register(
            "sweep",
            f"sweep_corpus_topk{params.top_k}_temp{params.temperature:g}",
            path,
        )
    metric_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    metrics_path = sweep_dir / "metrics.csv"
    _write_csv(
        metrics_path,
        ["top_k", "temperature", "gender", "top5_share", "n_jobs_95", "unique_jobs"],
        metric_rows,
    )
    run.register("sweep", "sweep_metrics", metrics_path)
    run.finish_stage("sweep", signature)


_STAGE_FUNCS: dict[str, Callable[[PipelineRun], None]] = {
    "plan": stage_plan,
    "generate": stage_generate,
    "extract": stage_extract,
    "analyze": stage_analyze,
    "regress": stage_regress,
    "compare": stage_compare,
    "report": stage_report,
    "sweep": stage_sweep,
}


def run_pipeline(config: RunConfig, stages: Sequence[str] | None = None) -> PipelineRun:
    """Execute the requested stages in canonical order; returns the run state."""
    requested = list(stages) if stages else list(STAGE_ORDER)
    unknown = [s for s in requested if s not in _STAGE_FUNCS]
    if unknown:
        raise ValidationError(f"unknown stages: {unknown}")
    ordered = [s for s in STAGE_ORDER if s in requested]
    if "sweep" in requested:
        ordered.append("sweep")
    run = PipelineRun(config)
    for stage in ordered:
        _STAGE_FUNCS[stage](run)
    return run
