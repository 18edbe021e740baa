"""FastAPI app implementing the generation wire protocol.

GET  /v1/health    -> 200 {"model_id": ...}
POST /v1/generate  -> 200 {"completions": [str; n]}

Malformed requests get 400 with a message; generation failures get 500.
Requests larger than the batch limit are chunked internally and still
answered in one response. Completions never contain the prompt.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .textgen import GenerationError

_FIELD_CHECKS = {
    "prompt": lambda v: isinstance(v, str),
    "n": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
    "top_k": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
    "temperature": lambda v: isinstance(v, (int, float))
    and not isinstance(v, bool)
    and v > 0,
    "max_new_tokens": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
    "seed": lambda v: v is None or (isinstance(v, int) and not isinstance(v, bool)),
}


def validate_request(body) -> str | None:
    """Returns an error message for a malformed generate body, else None."""
    if not isinstance(body, dict):
        return "request body must be a JSON object"
    for field, check in _FIELD_CHECKS.items():
        if field not in body:
            return f"missing field {field!r}"
        if not check(body[field]):
            return f"invalid value for field {field!r}: {body[field]!r}"
    unknown = set(body) - set(_FIELD_CHECKS)
    if unknown:
        return f"unknown fields: {sorted(unknown)}"
    return None


def _strip_prompt(completion: str, prompt: str) -> str:
    while prompt and prompt in completion:
        index = completion.find(prompt)
        completion = completion[:index] + completion[index + len(prompt):]
    return completion


def create_app(generator, max_batch: int = 16) -> FastAPI:
    app = FastAPI(title="genserver", docs_url=None, redoc_url=None)

    @app.get("/v1/health")
    def health():
        return {"model_id": generator.model_id}

    @app.post("/v1/generate")
    async def generate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "request body is not valid JSON"}, status_code=400)
        message = validate_request(body)
        if message is not None:
            return JSONResponse({"error": message}, status_code=400)
        prompt = body["prompt"]
        remaining = body["n"]
        completions: list[str] = []
        chunk_index = 0
        try:
            while remaining > 0:
                chunk = min(remaining, max_batch)
                seed = body["seed"]
                if seed is not None:
                    seed = seed + chunk_index  # distinct seeds per internal chunk
                completions.extend(
                    generator.generate(
                        prompt,
                        chunk,
                        body["top_k"],
                        body["temperature"],
                        body["max_new_tokens"],
                        seed,
                    )
                )
                remaining -= chunk
                chunk_index += 1
        except GenerationError as exc:
            return JSONResponse({"error": f"generation failed: {exc}"}, status_code=500)
        completions = [_strip_prompt(c, prompt) for c in completions]
        return {"completions": completions}

    return app
