"""Narration enrichment: prompt rendering, offline templater, LLM client, word stats.

The prompt layout is frozen: a system block, one coordinate line per
present trajectory category in fixed order, the original narration, and
a closing instruction block. Coordinates print with two decimals so
rendered prompts are byte-reproducible.
"""

from __future__ import annotations

import math
import os
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from .errors import DataError, EndpointError, TransportError
from .trajectory import (
    Direction,
    Entity,
    TrajectoryBundle,
    summarize_bundle,
)

API_KEY_ENV = "HOD_LLM_API_KEY"

PROVENANCE_OFFLINE = "offline_template"

SYSTEM_PROMPT = (
    "Now you are a captioning assistant, you need to generate hand object "
    "interaction caption and combine them with the origin narration. Given "
    "the origin narration of the video clip and spatial localization ([x, y]) "
    "of hands and objects in the clip, please help me describe the direction "
    "of motion of the left and right hands, their relative relationship to "
    "objects and whether they are touching or not. Do not mention the pixel "
    "info. Two_hand_object means objects with two hands in contact, "
    "left_hand_object means objects with left hand in contact, "
    "right_hand_object means objects with right hand in contact."
)

CLOSING_INSTRUCTION = (
    "Please help me summarize the direction of movement of the left hand, "
    "right hand, and objects, and generate a new caption based on the "
    "original caption. It is strictly forbidden to mention the frame number "
    "and spatial position coordinates in the description."
)

# Category lines always render in this order; absent categories are omitted.
CATEGORY_ORDER = (
    Entity.LEFT_HAND,
    Entity.RIGHT_HAND,
    Entity.LEFT_OBJ,
    Entity.RIGHT_OBJ,
    Entity.BOTH_OBJ,
)


@dataclass(frozen=True)
class PromptPayload:
    system_prompt: str
    category_lines: tuple[tuple[str, str], ...]
    original_narration: str
    closing_instruction: str

    def flat(self) -> str:
        lines = [f"{name}:{coords}" for name, coords in self.category_lines]
        dynamics = "\n".join(lines + [f"origin narration: {self.original_narration}"])
        return (
            "## System Prompt\n"
            f"{self.system_prompt}\n"
            "\n"
            "## Hand Object Dynamics\n"
            f"{dynamics}\n"
            "\n"
            "## System Prompt\n"
            f"{self.closing_instruction}"
        )


@dataclass(frozen=True)
class NarrationRecord:
    clip_id: str
    original: str
    enriched: str
    provenance: str
    generator_seed: int = 0

    def __post_init__(self) -> None:
        if not self.enriched:
            raise DataError(f"clip {self.clip_id!r}: enriched narration is empty")


@dataclass(frozen=True)
class WordFreqTable:
    entries: tuple[tuple[str, float], ...]
    total_tokens: int


def _coord_seq(points) -> str:
    parts = []
    for p in points:
        x, y = (math.nan, math.nan) if p is None else (p.x, p.y)
        parts.append(f"({x:.2f},{y:.2f})")
    return "(" + ",".join(parts) + ")"


def render_prompt(b: TrajectoryBundle) -> PromptPayload:
    """Build the fixed-format prompt for a bundle.

    One line per present category, in fixed order, each point printed to
    two decimals; absent points inside a present category render as
    ``(nan,nan)``.
    """
    if not b.trajectories and not b.original_narration:
        raise DataError(f"clip {b.clip_id!r}: bundle has no categories and no narration")
    lines = tuple(
        (entity.value, _coord_seq(b.trajectories[entity].points))
        for entity in CATEGORY_ORDER
        if entity in b.trajectories
    )
    return PromptPayload(
        system_prompt=SYSTEM_PROMPT,
        category_lines=lines,
        original_narration=b.original_narration,
        closing_instruction=CLOSING_INSTRUCTION,
    )


_MOVE_CLAUSES = {
    Entity.LEFT_HAND: "The left hand moves {d}.",
    Entity.RIGHT_HAND: "The right hand moves {d}.",
    Entity.LEFT_OBJ: "The left hand's object moves {d}.",
    Entity.RIGHT_OBJ: "The right hand's object moves {d}.",
    Entity.BOTH_OBJ: "Both hands jointly move the object {d}.",
}

_STILL_CLAUSES = {
    Entity.LEFT_HAND: "The left hand remains mostly still.",
    Entity.RIGHT_HAND: "The right hand remains mostly still.",
    Entity.LEFT_OBJ: "The left hand's object remains mostly still.",
    Entity.RIGHT_OBJ: "The right hand's object remains mostly still.",
    Entity.BOTH_OBJ: "The jointly held object remains mostly still.",
}


def rephrase_offline(
    b: TrajectoryBundle, motion_eps: float = 0.05, seed: int = 0
) -> NarrationRecord:
    """Deterministic template-based enrichment.

    Emits one clause per summarizable entity in fixed category order and
    appends the original narration verbatim. Entities whose trajectories
    are too short to summarize are skipped. When every summarized entity
    is stationary the clauses collapse to a single still-hands sentence.
    """
    summaries = summarize_bundle(b, motion_eps=motion_eps)
    if not summaries:
        if not b.original_narration:
            raise DataError(
                f"clip {b.clip_id!r}: nothing to narrate (no motion, no narration)"
            )
        enriched = b.original_narration
    elif all(s.direction is Direction.STATIONARY for s in summaries.values()):
        enriched = "The hands remain mostly still."
        if b.original_narration:
            enriched += f" {b.original_narration}"
    else:
        clauses = []
        for entity in CATEGORY_ORDER:
            s = summaries.get(entity)
            if s is None:
                continue
            if s.direction is Direction.STATIONARY:
                clauses.append(_STILL_CLAUSES[entity])
            else:
                clauses.append(_MOVE_CLAUSES[entity].format(d=s.direction.value))
        if b.original_narration:
            clauses.append(b.original_narration)
        enriched = " ".join(clauses)
    return NarrationRecord(
        clip_id=b.clip_id,
        original=b.original_narration,
        enriched=enriched,
        provenance=PROVENANCE_OFFLINE,
        generator_seed=seed,
    )


@dataclass
class LlmClient:
    """Client for an OpenAI-compatible chat-completions endpoint.

    ``endpoint`` is the full URL to POST to. The API key, when required,
    comes from the HOD_LLM_API_KEY environment variable. Failed requests
    are retried with exponential backoff up to ``max_retries`` attempts.
    """

    endpoint: str
    model: str
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    _session: requests.Session = field(default_factory=requests.Session, repr=False)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str) -> str:
        """Send one prompt as a single user message, return assistant text."""
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        failure: Exception = TransportError(f"no attempts made against {self.endpoint}")
        for attempt in range(self.max_retries):
            if attempt > 0:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(
                    self.endpoint, json=body, headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                failure = TransportError(
                    f"could not reach {self.endpoint} "
                    f"after {self.max_retries} attempts: {exc}"
                )
                continue
            if resp.status_code // 100 != 2:
                failure = EndpointError(
                    f"endpoint {self.endpoint} failed with HTTP {resp.status_code} "
                    f"after {self.max_retries} attempts"
                )
                continue
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise EndpointError(
                    f"endpoint {self.endpoint} returned an unparseable completion: {exc}"
                ) from exc
            if not text or not text.strip():
                raise EndpointError(f"endpoint {self.endpoint} returned an empty completion")
            return text.strip()
        raise failure

    def rephrase(self, clip_id: str, payload: PromptPayload, seed: int = 0) -> NarrationRecord:
        text = self.complete(payload.flat())
        return NarrationRecord(
            clip_id=clip_id,
            original=payload.original_narration,
            enriched=text,
            provenance=f"external_llm:{self.endpoint}",
            generator_seed=seed,
        )

    def rephrase_many(
        self, items: list[tuple[str, PromptPayload]], seed: int = 0
    ) -> list[NarrationRecord]:
        """Rephrase a batch with bounded concurrency, results in input order."""
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(
                pool.map(lambda item: self.rephrase(item[0], item[1], seed=seed), items)
            )


def rephrase_llm(
    clip_id: str,
    p: PromptPayload,
    endpoint: str,
    model: str,
    timeout: float = 30.0,
    max_retries: int = 3,
    backoff_base: float = 0.5,
    seed: int = 0,
) -> NarrationRecord:
    """One-shot convenience wrapper around LlmClient."""
    client = LlmClient(
        endpoint=endpoint,
        model=model,
        timeout=timeout,
        max_retries=max_retries,
        backoff_base=backoff_base,
    )
    return client.rephrase(clip_id, p, seed=seed)


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def word_frequency(corpus: list[str], k: int) -> WordFreqTable:
    """Top-k token frequencies over a corpus.

    Text is lowercased and split on non-alphanumeric runs. Frequencies
    are counts over the total token count; the table sorts by frequency
    descending with lexicographic ascending tie-breaks.
    """
    if k < 1:
        raise DataError(f"top-k must be >= 1, got {k}")
    if not corpus:
        raise DataError("empty corpus")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(_TOKEN_RE.findall(text.lower()))
    total = sum(counts.values())
    if total == 0:
        raise DataError("corpus contains no tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    entries = tuple((tok, cnt / total) for tok, cnt in ranked[:k])
    return WordFreqTable(entries=entries, total_tokens=total)
