"""Generation backends, the wire protocol, and corpus persistence.

A backend is anything with ``health()`` and ``generate()``: the bundled
deterministic mock, an HTTP server speaking the small wire protocol, or a
replayed corpus file. Every completion is persisted as one JSON line with
full provenance; the corpus file, not the backend, is the unit of
reproducibility.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import requests

from . import __version__
from .demography import GenerationPlan, PromptSpec, SubjectProfile
from .errors import (
    BackendError,
    CorpusIntegrityError,
    ProtocolError,
    ValidationError,
)

EPOCH_TS = "1970-01-01T00:00:00Z"

RECORD_FIELDS = (
    "seq", "scheme", "gender", "value", "name", "prompt", "completion",
    "top_k", "temperature", "max_words", "seed", "backend_id", "ts",
)


@dataclass(frozen=True)
class GenParams:
    """Sampling parameters; defaults match the probed models' defaults."""

    top_k: int = 50
    temperature: float = 1.0
    max_words: int = 10
    seed: int | None = None

    def __post_init__(self):
        if self.top_k <= 0:
            raise ValidationError(f"top_k must be positive: {self.top_k}")
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive: {self.temperature}")
        if self.max_words <= 0:
            raise ValidationError(f"max_words must be positive: {self.max_words}")


@dataclass(frozen=True)
class CompletionRecord:
    """One generated sentence with full provenance."""

    seq: int
    subject: SubjectProfile
    prompt: str
    completion: str
    params: GenParams
    backend_id: str
    ts: str

    def to_obj(self) -> dict:
        return {
            "seq": self.seq,
            "scheme": self.subject.scheme,
            "gender": self.subject.gender,
            "value": self.subject.value,
            "name": self.subject.name,
            "prompt": self.prompt,
            "completion": self.completion,
            "top_k": self.params.top_k,
            "temperature": self.params.temperature,
            "max_words": self.params.max_words,
            "seed": self.params.seed,
            "backend_id": self.backend_id,
            "ts": self.ts,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "CompletionRecord":
        missing = [f for f in RECORD_FIELDS if f not in obj]
        if missing:
            raise CorpusIntegrityError(f"record missing fields: {missing}")
        subject = SubjectProfile(
            gender=obj["gender"], scheme=obj["scheme"],
            value=obj["value"], name=obj["name"],
        )
        params = GenParams(
            top_k=obj["top_k"], temperature=obj["temperature"],
            max_words=obj["max_words"], seed=obj["seed"],
        )
        return cls(
            seq=obj["seq"], subject=subject, prompt=obj["prompt"],
            completion=obj["completion"], params=params,
            backend_id=obj["backend_id"], ts=obj["ts"],
        )


def truncate_words(text: str, max_words: int) -> str:
    """Client-side word cap; backends count tokens, not words."""
    words = text.split()
    if len(words) <= max_words:
        return text
    # preserve leading whitespace so completions still append to the prompt
    prefix = text[: len(text) - len(text.lstrip())]
    return prefix + " ".join(words[:max_words])


# -- wire protocol schema (single source of truth) ---------------------------

def validate_health_payload(obj) -> str:
    """Check a GET /v1/health body; returns the model id."""
    if not isinstance(obj, dict) or not isinstance(obj.get("model_id"), str):
        raise ProtocolError(f"health payload must be {{model_id: str}}, got {obj!r}")
    return obj["model_id"]


def validate_generate_request(obj) -> dict:
    """Check a POST /v1/generate body; returns it normalized."""
    if not isinstance(obj, dict):
        raise ProtocolError("generate request must be a JSON object")
    checks = {
        "prompt": lambda v: isinstance(v, str),
        "n": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
        "top_k": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
        "temperature": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0,
        "max_new_tokens": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
        "seed": lambda v: v is None or (isinstance(v, int) and not isinstance(v, bool)),
    }
    for key, ok in checks.items():
        if key not in obj:
            raise ProtocolError(f"generate request missing field {key!r}")
        if not ok(obj[key]):
            raise ProtocolError(f"generate request field {key!r} invalid: {obj[key]!r}")
    extra = set(obj) - set(checks)
    if extra:
        raise ProtocolError(f"generate request has unknown fields: {sorted(extra)}")
    return {k: obj[k] for k in checks}


def validate_generate_response(obj, n: int) -> list[str]:
    """Check a /v1/generate response body; returns the n completions."""
    if not isinstance(obj, dict) or "completions" not in obj:
        raise ProtocolError(f"generate response must be {{completions: [...]}}, got {obj!r}")
    completions = obj["completions"]
    if not isinstance(completions, list) or not all(isinstance(c, str) for c in completions):
        raise ProtocolError("generate response completions must be a list of strings")
    if len(completions) != n:
        raise ProtocolError(f"expected {n} completions, got {len(completions)}")
    return completions


def derive_seed(seed: int | None, counter: int) -> int | None:
    """Stable per-request seed so batching never changes the artifact."""
    if seed is None:
        return None
    digest = hashlib.sha256(f"{seed}|{counter}".encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


# -- mock backend -------------------------------------------------------------

_PATTERN_ORDERS = (
    (True, True, True), (True, True, False), (True, False, True),
    (False, True, True), (True, False, False), (False, True, False),
    (False, False, True), (False, False, False),
)

_MISS_COMPLETION = " many different things every single day"


@dataclass
class BiasSpec:
    """Planted per-profile job distributions for the mock backend.

    Pattern keys are ``scheme|gender|value`` with ``*`` wildcards; for
    continent profiles the value slot is the continent. The most specific
    matching pattern wins.
    """

    patterns: dict[str, list[tuple[str, float]]]
    miss_rate: float = 0.0
    fallback: list[tuple[str, float]] | None = None

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValidationError(f"miss_rate must be in [0,1]: {self.miss_rate}")
        for key, dist in list(self.patterns.items()) + (
            [("fallback", self.fallback)] if self.fallback else []
        ):
            if len(key.split("|")) != 3 and key != "fallback":
                raise ValidationError(f"bias pattern {key!r} must be scheme|gender|value")
            total = sum(p for _job, p in dist)
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(f"bias pattern {key!r} probabilities sum to {total}")
            if any(p < 0 for _job, p in dist):
                raise ValidationError(f"bias pattern {key!r} has negative probability")

    def distribution_for(self, subject: SubjectProfile) -> list[tuple[str, float]]:
        scheme, gender = subject.scheme, subject.gender
        value = subject.value or ""
        for use_s, use_g, use_v in _PATTERN_ORDERS:
            key = "|".join((
                scheme if use_s else "*",
                gender if use_g else "*",
                value if use_v else "*",
            ))
            if key in self.patterns:
                return self.patterns[key]
        if self.fallback is not None:
            return self.fallback
        raise BackendError(f"no bias pattern matches profile {subject.key()!r}")

    @classmethod
    def from_json_file(cls, path: str | Path) -> "BiasSpec":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        patterns = {
            key: [(job, float(p)) for job, p in dist]
            for key, dist in obj.get("patterns", {}).items()
        }
        fallback = obj.get("fallback")
        if fallback is not None:
            fallback = [(job, float(p)) for job, p in fallback]
        return cls(
            patterns=patterns,
            miss_rate=float(obj.get("miss_rate", 0.0)),
            fallback=fallback,
        )


def _unit_float(seed: int, seq: int, salt: str) -> float:
    digest = hashlib.sha256(f"{seed}|{seq}|{salt}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


class MockBackend:
    """Counter-based deterministic backend: (spec, seed, seq) fixes each completion."""

    deterministic = True

    def __init__(self, spec: BiasSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.backend_id = "mock"

    def health(self) -> str:
        return self.backend_id

    def completion_for(self, subject: SubjectProfile, seq: int) -> str:
        if _unit_float(self.seed, seq, "miss") < self.spec.miss_rate:
            return _MISS_COMPLETION
        dist = self.spec.distribution_for(subject)
        draw = _unit_float(self.seed, seq, "job")
        cumulative = 0.0
        job = dist[-1][0]
        for candidate, prob in dist:
            cumulative += prob
            if draw < cumulative:
                job = candidate
                break
        return f" {job} in the city"

    def generate(
        self,
        prompt: str,
        n: int,
        params: GenParams,
        seq_start: int = 0,
        subject: SubjectProfile | None = None,
    ) -> list[str]:
        if subject is None:
            raise BackendError("mock backend needs the subject profile")
        return [self.completion_for(subject, seq_start + i) for i in range(n)]


class HTTPBackend:
    """Client for the wire protocol with bounded exponential-backoff retries."""

    deterministic = False

    def __init__(
        self,
        base_url: str,
        retries: int = 5,
        backoff: float = 0.25,
        backoff_cap: float = 4.0,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self.session = session or requests.Session()
        self.backend_id = base_url

    def _request(self, method: str, path: str, payload: dict | None = None):
        delay = self.backoff
        last_exc: Exception | None = None
        for _attempt in range(self.retries):
            try:
                response = self.session.request(
                    method, self.base_url + path, json=payload, timeout=self.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                time.sleep(delay)
                delay = min(delay * 2, self.backoff_cap)
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"{method} {path} returned status {response.status_code}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedResponseError(f"{path} returned undecodable body") from exc
        raise BackendError(f"backend unreachable after {self.retries} attempts: {last_exc}")

    def health(self) -> str:
        payload = self._request("GET", "/v1/health")
        model_id = validate_health_payload(payload)
        self.backend_id = model_id
        return model_id

    def generate(
        self,
        prompt: str,
        n: int,
        params: GenParams,
        seq_start: int = 0,
        subject: SubjectProfile | None = None,
    ) -> list[str]:
        body = {
            "prompt": prompt,
            "n": n,
            "top_k": params.top_k,
            "temperature": params.temperature,
            # word cap is enforced client-side; leave token headroom
            "max_new_tokens": params.max_words * 3,
            "seed": derive_seed(params.seed, seq_start),
        }
        payload = self._request("POST", "/v1/generate", body)
        try:
            return validate_generate_response(payload, n)
        except ProtocolError as exc:
            if isinstance(payload, dict) and isinstance(payload.get("completions"), list):
                completions = payload["completions"]
                if all(isinstance(c, str) for c in completions) and len(completions) != n:
                    raise ProtocolError(
                        f"seq {seq_start}..{seq_start + n - 1}: {exc}"
                    ) from exc
            raise MalformedResponseError(str(exc)) from exc


class MalformedResponseError(BackendError):
    """Response body undecodable or mistyped; handled per-request, run continues."""


# -- corpus persistence -------------------------------------------------------

class CorpusWriter:
    """Append-only, seq-ordered JSONL writer; the file is its own checkpoint."""

    def __init__(self, path: str | Path, plan_hash: str, checkpoint_every: int = 1000):
        self.path = Path(path)
        self.plan_hash = plan_hash
        self.checkpoint_every = checkpoint_every
        self.next_seq = 0
        self._fh = None

    def open(self, resume: bool = False) -> int:
        """Open for writing; with resume, continue after existing records."""
        if resume and self.path.exists():
            self.next_seq = _validate_partial(self.path, self.plan_hash)
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
            header = {"plan_hash": self.plan_hash, "version": __version__}
            self._fh.write(json.dumps(header, ensure_ascii=False) + "\n")
            self.next_seq = 0
        return self.next_seq

    def write(self, record: CompletionRecord) -> None:
        if record.seq != self.next_seq:
            raise CorpusIntegrityError(
                f"out-of-order write: expected seq {self.next_seq}, got {record.seq}"
            )
        self._fh.write(json.dumps(record.to_obj(), ensure_ascii=False) + "\n")
        self.next_seq += 1
        if self.next_seq % self.checkpoint_every == 0:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _validate_partial(path: Path, plan_hash: str) -> int:
    """Check an interrupted corpus is resumable; returns the next seq."""
    count = 0
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.endswith("\n"):
            raise CorpusIntegrityError(f"{path}: truncated header")
        try:
            header = json.loads(header_line)
        except ValueError as exc:
            raise CorpusIntegrityError(f"{path}: undecodable header") from exc
        if header.get("plan_hash") != plan_hash:
            raise CorpusIntegrityError(f"{path}: plan hash mismatch")
        for line in fh:
            if not line.endswith("\n"):
                raise CorpusIntegrityError(f"{path}: truncated record after seq {count - 1}")
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise CorpusIntegrityError(f"{path}: undecodable record {count}") from exc
            if obj.get("seq") != count:
                raise CorpusIntegrityError(
                    f"{path}: non-contiguous seq (expected {count}, got {obj.get('seq')})"
                )
            count += 1
    return count


class CorpusReader:
    """Iterates a corpus file, verifying header and seq contiguity."""

    def __init__(self, path: str | Path, expect_plan_hash: str | None = None):
        self.path = Path(path)
        self.header = self._read_header()
        if expect_plan_hash is not None and self.header.get("plan_hash") != expect_plan_hash:
            raise CorpusIntegrityError(
                f"{self.path}: corpus was generated from a different plan"
            )

    def _read_header(self) -> dict:
        with open(self.path, encoding="utf-8") as fh:
            line = fh.readline()
        try:
            header = json.loads(line)
        except ValueError as exc:
            raise CorpusIntegrityError(f"{self.path}: undecodable header") from exc
        if not isinstance(header, dict) or "plan_hash" not in header or "version" not in header:
            raise CorpusIntegrityError(f"{self.path}: header missing plan hash or version")
        return header

    def __iter__(self) -> Iterator[CompletionRecord]:
        expected = 0
        with open(self.path, encoding="utf-8") as fh:
            fh.readline()
            for line in fh:
                try:
                    obj = json.loads(line)
                except ValueError as exc:
                    raise CorpusIntegrityError(
                        f"{self.path}: undecodable record at seq {expected}"
                    ) from exc
                record = CompletionRecord.from_obj(obj)
                if record.seq != expected:
                    raise CorpusIntegrityError(
                        f"{self.path}: non-contiguous seq (expected {expected}, got {record.seq})"
                    )
                expected += 1
                yield record

    def validate_against_plan(self, plan: GenerationPlan) -> None:
        """Record count per profile must equal the planned calls exactly."""
        per_profile: dict[str, int] = {}
        for record in self:
            key = record.subject.key()
            per_profile[key] = per_profile.get(key, 0) + 1
        planned: dict[str, int] = {}
        for spec in plan.specs:
            planned[spec.subject.key()] = planned.get(spec.subject.key(), 0) + spec.calls
        planned = {k: v for k, v in planned.items() if v > 0}
        if per_profile != planned:
            raise CorpusIntegrityError(f"{self.path}: record counts do not match plan")


@dataclass
class CorpusSummary:
    path: Path
    records_written: int
    requests: int
    record_errors: int
    resumed_from: int


def generate_corpus(
    plan: GenerationPlan,
    backend,
    params: GenParams,
    out_path: str | Path,
    resume: bool = False,
    request_batch: int = 50,
    max_inflight: int = 8,
    checkpoint_every: int = 1000,
    error_path: str | Path | None = None,
) -> CorpusSummary:
    """Drive a backend over a plan, persisting exactly plan-total records.

    Seq is derived from plan order, so corpus bytes are independent of
    request concurrency. Mock (deterministic) backends get an epoch
    timestamp to keep artifact trees byte-identical across runs; real
    backends record wall-clock UTC.
    """
    try:
        backend.health()
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"backend health check failed: {exc}") from exc

    deterministic = getattr(backend, "deterministic", False)
    writer = CorpusWriter(out_path, plan.plan_hash, checkpoint_every=checkpoint_every)
    start_seq = writer.open(resume=resume)
    error_path = Path(error_path) if error_path else Path(str(out_path) + ".errors.jsonl")

    tasks: list[tuple[PromptSpec, int, int]] = []
    offset = 0
    for spec in plan.specs:
        end = offset + spec.calls
        batch_start = offset
        while batch_start < end:
            batch_n = min(request_batch, end - batch_start)
            if batch_start + batch_n > start_seq:
                tasks.append((spec, batch_start, batch_n))
            batch_start += batch_n
        offset = end
    total = offset

    def run_task(task: tuple[PromptSpec, int, int]):
        spec, seq_start, n = task
        return backend.generate(
            spec.text, n, params, seq_start=seq_start, subject=spec.subject
        )

    requests_made = 0
    record_errors = 0
    error_entries: list[dict] = []

    def consume(task, outcome) -> None:
        nonlocal requests_made, record_errors
        spec, seq_start, n = task
        requests_made += 1
        if isinstance(outcome, MalformedResponseError):
            record_errors += n
            error_entries.append(
                {"seq_start": seq_start, "n": n, "error": str(outcome)}
            )
            completions = [""] * n
        else:
            completions = outcome
        ts = EPOCH_TS if deterministic else _utc_now()
        for i, completion in enumerate(completions):
            seq = seq_start + i
            if seq < start_seq:
                continue
            record = CompletionRecord(
                seq=seq,
                subject=spec.subject,
                prompt=spec.text,
                completion=truncate_words(completion, params.max_words),
                params=params,
                backend_id=backend.backend_id,
                ts=ts,
            )
            writer.write(record)

    try:
        if max_inflight <= 1:
            for task in tasks:
                try:
                    result = run_task(task)
                except MalformedResponseError as exc:
                    result = exc
                consume(task, result)
        else:
            with ThreadPoolExecutor(max_workers=max_inflight) as pool:
                window: deque = deque()
                task_iter = iter(tasks)
                for task in task_iter:
                    window.append((task, pool.submit(run_task, task)))
                    if len(window) >= max_inflight:
                        _drain_one(window, consume)
                while window:
                    _drain_one(window, consume)
    except BackendError as exc:
        writer.close()
        raise BackendError(
            f"{exc} ({writer.next_seq} of {total} records completed)",
            completed=writer.next_seq,
        ) from exc
    finally:
        writer.close()

    if error_entries:
        with open(error_path, "w", encoding="utf-8") as fh:
            for entry in error_entries:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    return CorpusSummary(
        path=Path(out_path),
        records_written=writer.next_seq,
        requests=requests_made,
        record_errors=record_errors,
        resumed_from=start_seq,
    )


def _drain_one(window: deque, consume) -> None:
    task, future = window.popleft()
    try:
        result = future.result()
    except MalformedResponseError as exc:
        result = exc
    consume(task, result)


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def sweep(
    specs: Iterable[PromptSpec],
    grid: Iterable[GenParams],
    backend,
    out_dir: str | Path,
    resume: bool = False,
    max_inflight: int = 8,
) -> dict[GenParams, Path]:
    """One corpus per grid point, each tagged with its params in the filename."""
    from .demography import plan_calls

    grid = list(grid)
    if not grid:
        raise ValidationError("sweep grid must be non-empty")
    specs = list(specs)
    plan = plan_calls(specs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpora: dict[GenParams, Path] = {}
    for params in grid:
        tag = f"topk{params.top_k}_temp{params.temperature:g}"
        path = out_dir / f"sweep_{tag}.jsonl"
        generate_corpus(
            plan, backend, params, path, resume=resume, max_inflight=max_inflight
        )
        corpora[params] = path
    return corpora


def grid_from_axes(
    top_k_values: Iterable[int] = (),
    temperature_values: Iterable[float] = (),
    base: GenParams | None = None,
) -> list[GenParams]:
    """Vary one axis at a time around the default point, as in the ablation."""
    base = base or GenParams()
    grid: list[GenParams] = []
    for k in top_k_values:
        grid.append(replace(base, top_k=k))
    for t in temperature_values:
        grid.append(replace(base, temperature=t))
    return grid
