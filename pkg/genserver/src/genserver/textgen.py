"""Text generators behind the server: a hub-hosted model or an offline sampler.

Model specs:
  "gpt2" / "hub:<id>"  any hub-hosted causal-LM id, loaded via transformers
                       (needs the [hub] extra and local or downloadable weights)
  "builtin:words"      dependency-free deterministic word sampler, used for
                       protocol conformance tests and offline smoke runs

Loading failures raise ModelLoadError so the server can refuse to start.
"""

from __future__ import annotations

import bisect
import hashlib
import math


class ModelLoadError(Exception):
    """The configured model could not be loaded."""


class GenerationError(Exception):
    """A generation request failed after the model was loaded."""


_WORDS = [
    "the", "a", "small", "local", "busy", "private", "company", "team",
    "shop", "office", "clinic", "studio", "school", "hotel", "factory",
    "restaurant", "agency", "firm", "store", "hospital", "service",
    "manager", "helper", "worker", "specialist", "consultant", "designer",
    "writer", "driver", "cleaner", "builder", "trainer", "keeper",
    "in", "at", "for", "with", "near", "downtown", "part", "time",
    "full", "night", "day", "weekend", "and", "also", "now", "here",
    "new", "old", "big", "good", "very", "quite", "rather", "often",
    "city", "town", "village", "harbor", "market", "station", "campus",
    "museum", "library", "garden", "farm", "kitchen", "garage", "workshop",
]


class BuiltinWordModel:
    """Samples whitespace-joined words with Zipf-like weights.

    Honors top_k (vocabulary truncation), temperature (weight flattening),
    and seed (fully deterministic per (seed, prompt, sequence, position)).
    """

    def __init__(self, model_id: str = "builtin:words"):
        self.model_id = model_id
        self._base_weights = [1.0 / (rank + 1) for rank in range(len(_WORDS))]
        self._nonce = 0  # varies unseeded calls

    def _draw(self, key: str, weights: list[float]) -> int:
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        unit = int.from_bytes(digest[:8], "big") / 2.0**64
        cumulative = []
        running = 0.0
        for w in weights:
            running += w
            cumulative.append(running)
        return bisect.bisect_left(cumulative, unit * running)

    def generate(
        self,
        prompt: str,
        n: int,
        top_k: int,
        temperature: float,
        max_new_tokens: int,
        seed: int | None,
    ) -> list[str]:
        k = min(top_k, len(_WORDS))
        weights = [math.exp(math.log(w) / temperature) for w in self._base_weights[:k]]
        if seed is None:
            self._nonce += 1
            seed_part = f"nonce{self._nonce}"
        else:
            seed_part = str(seed)
        prompt_part = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]
        completions = []
        for i in range(n):
            words = []
            for position in range(max_new_tokens):
                key = f"{seed_part}|{prompt_part}|{i}|{position}"
                words.append(_WORDS[self._draw(key, weights)])
            completions.append(" " + " ".join(words))
        return completions


class HubModel:
    """A hub-hosted causal LM behind the transformers text-generation pipeline."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            from transformers import pipeline, set_seed
        except ImportError as exc:
            raise ModelLoadError(
                "transformers is not installed; install the [hub] extra"
            ) from exc
        self._set_seed = set_seed
        try:
            self._pipe = pipeline(
                "text-generation",
                model=model_id,
                device=-1 if device == "cpu" else device,
            )
        except Exception as exc:
            raise ModelLoadError(f"could not load model {model_id!r}: {exc}") from exc
        self.model_id = model_id

    def generate(self, prompt, n, top_k, temperature, max_new_tokens, seed):
        if seed is not None:
            self._set_seed(seed)  # best-effort reproducibility
        try:
            outputs = self._pipe(
                prompt,
                num_return_sequences=n,
                do_sample=True,
                top_k=top_k,
                temperature=temperature,
                max_new_tokens=max_new_tokens,
                pad_token_id=self._pipe.tokenizer.eos_token_id,
            )
        except Exception as exc:
            raise GenerationError(str(exc)) from exc
        completions = []
        for output in outputs:
            text = output["generated_text"]
            completions.append(text[len(prompt):] if text.startswith(prompt) else text)
        return completions


def load_model(spec: str, device: str = "cpu"):
    """Resolve a model spec; the server refuses to start when this fails."""
    if spec.startswith("builtin:"):
        if spec != "builtin:words":
            raise ModelLoadError(f"unknown builtin model {spec!r}")
        return BuiltinWordModel(spec)
    model_id = spec[len("hub:"):] if spec.startswith("hub:") else spec
    if not model_id:
        raise ModelLoadError("empty model id")
    return HubModel(model_id, device=device)
