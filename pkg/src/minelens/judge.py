"""Caption judging: per-dimension rubric calls, JSON repair, acceptance gate.

Each rubric dimension is scored in its own provider call; one malformed
response earns one retry before the dimension is recorded as failed. A
scorecard missing any dimension can only reject. The repair pipeline is
ordered and audited: every stage that changed the text is recorded, so a
response that parsed cleanly reports an empty repair list.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable

from .errors import (
    JudgeFormatError,
    JudgeRangeError,
    NoObjectFound,
    ParseFailed,
    ProviderError,
)
from .providers import ChatProvider, ChatRequest, RequestLog

DIMENSION_KEYS = (
    "environment_focus",
    "terminology",
    "patterns",
    "constraints",
    "conciseness",
)
SCORE_RANGE = (1, 5)


@dataclass(frozen=True)
class RubricDimension:
    key: str
    definition: str
    anchors: tuple[tuple[int, str], ...]  # (score, descriptor)
    examples: tuple[tuple[str, int], ...] = ()  # (caption excerpt, score)


@dataclass(frozen=True)
class GatePolicy:
    mean_min: float = 4.0
    dim_min: int = 3


@dataclass
class JudgeScorecard:
    caption_id: str
    scores: dict[str, int]
    raw_responses: dict[str, str]
    verdict: str  # accept | reject
    policy: GatePolicy
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(k in self.scores for k in DIMENSION_KEYS)

    def to_dict(self) -> dict:
        return {
            "caption_id": self.caption_id,
            "scores": dict(self.scores),
            "raw_responses": dict(self.raw_responses),
            "verdict": self.verdict,
            "policy": {"mean_min": self.policy.mean_min, "dim_min": self.policy.dim_min},
            "failures": dict(self.failures),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "JudgeScorecard":
        return cls(
            caption_id=doc["caption_id"],
            scores={k: int(v) for k, v in doc["scores"].items()},
            raw_responses=dict(doc.get("raw_responses", {})),
            verdict=doc["verdict"],
            policy=GatePolicy(**doc["policy"]),
            failures=dict(doc.get("failures", {})),
        )


def load_rubric(path: str | Path | None = None) -> list[RubricDimension]:
    if path:
        text = Path(path).read_text()
    else:
        text = resources.files("minelens.data").joinpath("rubric.json").read_text()
    doc = json.loads(text)
    dims = [
        RubricDimension(
            key=d["key"],
            definition=d["definition"],
            anchors=tuple((a["score"], a["descriptor"]) for a in d["anchors"]),
            examples=tuple((e["excerpt"], e["score"]) for e in d.get("examples", [])),
        )
        for d in doc["dimensions"]
    ]
    keys = [d.key for d in dims]
    if sorted(keys) != sorted(DIMENSION_KEYS) or len(set(keys)) != len(keys):
        raise ValueError(f"rubric must define each of {DIMENSION_KEYS} exactly once")
    return dims


# --------------------------------------------------------------- JSON repair


def _strip_fences(text: str) -> str:
    stripped = text.strip()
    if not stripped.startswith("```"):
        return text
    lines = stripped.splitlines()
    body = lines[1:]
    if body and body[-1].strip().startswith("```"):
        body = body[:-1]
    return "\n".join(body)


def _extract_object(text: str) -> str | None:
    """First balanced {...} span, brace-counting outside string literals."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string: str | None = None
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == in_string:
                    in_string = None
            elif ch in "\"'":
                in_string = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def _drop_trailing_commas(text: str) -> str:
    out = []
    in_string: str | None = None
    escaped = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == in_string:
                in_string = None
            out.append(ch)
        elif ch in "\"'":
            in_string = ch
            out.append(ch)
        elif ch == ",":
            j = i + 1
            while j < len(text) and text[j] in " \t\r\n":
                j += 1
            if j < len(text) and text[j] in "}]":
                pass  # drop the comma
            else:
                out.append(ch)
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def _normalize_quotes(text: str) -> str:
    """Python-literal fallback covers single-quoted keys/values and True/None."""
    try:
        obj = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text
    if not isinstance(obj, dict):
        return text
    try:
        return json.dumps(obj)
    except (TypeError, ValueError):
        return text


_STAGES: tuple[tuple[str, Callable[[str], str | None]], ...] = (
    ("fence_strip", _strip_fences),
    ("object_extract", _extract_object),
    ("trailing_comma", _drop_trailing_commas),
    ("quote_normalize", _normalize_quotes),
)


def repair_json(text: str) -> tuple[dict, list[str]]:
    """Parse, repairing in a fixed stage order; record stages that changed
    the text. Clean input round-trips with an empty repair list."""
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            return obj, []
        raise NoObjectFound("top-level JSON value is not an object")
    except json.JSONDecodeError:
        pass

    current = text
    repairs: list[str] = []
    for name, fn in _STAGES:
        result = fn(current)
        if result is None:
            raise NoObjectFound("no balanced object in response")
        if result != current:
            repairs.append(name)
            current = result
    try:
        obj = json.loads(current)
    except json.JSONDecodeError as exc:
        raise ParseFailed(f"unparseable after {repairs or 'no applicable repairs'}: {exc}") from exc
    if not isinstance(obj, dict):
        raise NoObjectFound("repaired value is not an object")
    return obj, repairs


# ------------------------------------------------------------------- scoring


def _render_judge_prompt(caption: str, dim: RubricDimension) -> str:
    text = resources.files("minelens.data").joinpath("prompts/judge_dimension.txt").read_text()
    anchors = "\n".join(f"{score}: {desc}" for score, desc in dim.anchors)
    return Template(text).substitute(
        key=dim.key, definition=dim.definition, anchors=anchors, caption=caption
    )


def score_dimension(
    provider: ChatProvider,
    caption: str,
    dim: RubricDimension,
    *,
    log: RequestLog | None = None,
) -> tuple[int, str]:
    """One provider call for one dimension. Out-of-range scores are rejected,
    never clamped."""
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    request = ChatRequest(system="You are a strict rubric grader.", user=_render_judge_prompt(caption, dim))
    raw = provider.complete(request)
    if log:
        log.record(
            {"provider": provider.name, "dimension": dim.key, "response_chars": len(raw)}
        )

    obj, repairs = repair_json_or_format_error(raw)
    score = obj.get("score")
    if isinstance(score, bool) or not isinstance(score, (int, float)) or score != int(score):
        raise JudgeFormatError(f"score missing or non-integer in {obj!r}")
    score = int(score)
    lo, hi = SCORE_RANGE
    if not lo <= score <= hi:
        raise JudgeRangeError(f"score {score} outside [{lo},{hi}]")
    return score, raw


def repair_json_or_format_error(raw: str) -> tuple[dict, list[str]]:
    try:
        return repair_json(raw)
    except (NoObjectFound, ParseFailed) as exc:
        raise JudgeFormatError(str(exc)) from exc


def gate(scores: dict[str, int], policy: GatePolicy) -> str:
    """Two-part rule: real-valued mean over all five, plus a floor on each."""
    if not all(k in scores for k in DIMENSION_KEYS):
        return "reject"
    values = [scores[k] for k in DIMENSION_KEYS]
    mean = sum(values) / len(values)
    return "accept" if mean >= policy.mean_min and min(values) >= policy.dim_min else "reject"


def evaluate(
    provider: ChatProvider,
    caption_id: str,
    caption_text: str,
    rubric: list[RubricDimension],
    policy: GatePolicy = GatePolicy(),
    *,
    log: RequestLog | None = None,
) -> JudgeScorecard:
    """Five calls plus at most one retry per dimension; a dimension that fails
    twice is annotated and forces a reject verdict."""
    scores: dict[str, int] = {}
    raw_responses: dict[str, str] = {}
    failures: dict[str, str] = {}
    for dim in rubric:
        last_error = ""
        for _ in range(2):
            try:
                score, raw = score_dimension(provider, caption_text, dim, log=log)
                scores[dim.key] = score
                raw_responses[dim.key] = raw
                break
            except (JudgeFormatError, JudgeRangeError, ProviderError) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
        else:
            failures[dim.key] = last_error

    verdict = "reject" if failures else gate(scores, policy)
    return JudgeScorecard(
        caption_id=caption_id,
        scores=scores,
        raw_responses=raw_responses,
        verdict=verdict,
        policy=policy,
        failures=failures,
    )
