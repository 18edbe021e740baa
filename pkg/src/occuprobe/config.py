"""Run configuration: one JSON file drives the whole pipeline.

Documented keys (all optional unless noted):

  schemes            list of scheme names (default: all six)
  identity_calls     calls per identity variant (default 7000)
  name_calls         calls per name template (default 1000)
  top_k, temperature, max_words   sampling parameters (defaults 50 / 1.0 / 10)
  seed               run seed (also the sampling seed)
  backend            "http(s)://..." | "mock:PATH" | "replay:PATH"  [required
                     for generate/sweep]
  lexicon, names, labor, matches  data file paths (default: packaged data)
  threshold          mention-share threshold fraction (default 0.0025)
  out                output directory (default "out"; env OCCUPROBE_OUT wins)
  top_jobs           ground-truth comparison universe size (default 50)
  exclude_names      name rows dropped at extraction (default [])
  religion_capitalized  prompt surface form toggle (default true)
  request_batch, max_inflight, checkpoint_every   generation tuning
  gini_raw           compute pooled Gini on the unthresholded matrix
  mse_raw            skip the population adjustment in the comparison
  sweep              {"top_k": [...], "temperature": [...], "calls": N,
                      "schemes": [...]} for the ablation stage
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .demography import SCHEME_NAMES
from .errors import ValidationError
from .genclient import GenParams

ENV_OUT = "OCCUPROBE_OUT"


@dataclass
class RunConfig:
    schemes: tuple[str, ...] = SCHEME_NAMES
    identity_calls: int = 7000
    name_calls: int = 1000
    params: GenParams = field(default_factory=GenParams)
    seed: int | None = None
    backend: str | None = None
    lexicon_path: Path | None = None
    names_path: Path | None = None
    labor_path: Path | None = None
    matches_path: Path | None = None
    threshold: float = 0.0025
    out_dir: Path = Path("out")
    top_jobs: int = 50
    exclude_names: tuple[str, ...] = ()
    religion_capitalized: bool = True
    request_batch: int = 50
    max_inflight: int = 8
    checkpoint_every: int = 1000
    gini_raw: bool = False
    mse_raw: bool = False
    sweep: dict | None = None

    def validate(self) -> None:
        unknown = set(self.schemes) - set(SCHEME_NAMES)
        if unknown:
            raise ValidationError(f"unknown schemes in config: {sorted(unknown)}")
        if self.identity_calls < 0 or self.name_calls < 0:
            raise ValidationError("call counts must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError(f"threshold must be in (0,1): {self.threshold}")
        if self.top_jobs < 1:
            raise ValidationError(f"top_jobs must be >= 1: {self.top_jobs}")
        for label, path in (
            ("lexicon", self.lexicon_path),
            ("names", self.names_path),
            ("labor", self.labor_path),
            ("matches", self.matches_path),
        ):
            if path is not None and not Path(path).exists():
                raise ValidationError(f"config {label} file does not exist: {path}")
        if self.backend is not None:
            self.backend_kind()

    def backend_kind(self) -> str:
        backend = self.backend or ""
        if backend.startswith(("http://", "https://")):
            return "http"
        if backend.startswith("mock:"):
            path = backend[len("mock:"):]
            if not Path(path).exists():
                raise ValidationError(f"mock bias spec does not exist: {path}")
            return "mock"
        if backend.startswith("replay:"):
            path = backend[len("replay:"):]
            if not Path(path).exists():
                raise ValidationError(f"replay corpus does not exist: {path}")
            return "replay"
        raise ValidationError(
            f"backend must be http(s)://..., mock:PATH, or replay:PATH, got {backend!r}"
        )

    def backend_path(self) -> Path:
        kind = self.backend_kind()
        if kind == "http":
            raise ValidationError("http backend has no path")
        return Path(self.backend.split(":", 1)[1])


def load_config(
    path: str | Path,
    out_override: str | None = None,
    seed_override: int | None = None,
    backend_override: str | None = None,
) -> RunConfig:
    """Parse and validate a config file, applying CLI and env overrides."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except ValueError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(
        raw, base_dir=Path(path).parent,
        out_override=out_override, seed_override=seed_override,
        backend_override=backend_override,
    )


def config_from_dict(
    raw: dict,
    base_dir: Path = Path("."),
    out_override: str | None = None,
    seed_override: int | None = None,
    backend_override: str | None = None,
) -> RunConfig:
    known = {
        "schemes", "identity_calls", "name_calls", "top_k", "temperature",
        "max_words", "seed", "backend", "lexicon", "names", "labor", "matches",
        "threshold", "out", "top_jobs", "exclude_names", "religion_capitalized",
        "request_batch", "max_inflight", "checkpoint_every", "sweep",
        "gini_raw", "mse_raw",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")

    def path_of(key: str) -> Path | None:
        value = raw.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    seed = seed_override if seed_override is not None else raw.get("seed")
    params = GenParams(
        top_k=raw.get("top_k", 50),
        temperature=raw.get("temperature", 1.0),
        max_words=raw.get("max_words", 10),
        seed=seed,
    )
    out = out_override or os.environ.get(ENV_OUT) or raw.get("out", "out")
    backend = backend_override if backend_override is not None else raw.get("backend")
    if backend and backend.startswith(("mock:", "replay:")):
        kind, _, rel = backend.partition(":")
        p = Path(rel)
        backend = f"{kind}:{p if p.is_absolute() else base_dir / p}"
    config = RunConfig(
        schemes=tuple(raw.get("schemes", SCHEME_NAMES)),
        identity_calls=raw.get("identity_calls", 7000),
        name_calls=raw.get("name_calls", 1000),
        params=params,
        seed=seed,
        backend=backend,
        lexicon_path=path_of("lexicon"),
        names_path=path_of("names"),
        labor_path=path_of("labor"),
        matches_path=path_of("matches"),
        threshold=raw.get("threshold", 0.0025),
        out_dir=Path(out),
        top_jobs=raw.get("top_jobs", 50),
        exclude_names=tuple(raw.get("exclude_names", ())),
        religion_capitalized=raw.get("religion_capitalized", True),
        request_batch=raw.get("request_batch", 50),
        max_inflight=raw.get("max_inflight", 8),
        checkpoint_every=raw.get("checkpoint_every", 1000),
        gini_raw=raw.get("gini_raw", False),
        mse_raw=raw.get("mse_raw", False),
        sweep=raw.get("sweep"),
    )
    config.validate()
    return config
