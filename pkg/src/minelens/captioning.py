"""Caption generation: prompt assembly, image payloads, provider calls.

The system prompt is assembled from a versioned template with named sections;
each section carries a fixed header so tests can assert the assembled prompt
covers every requirement theme by substring. Dossier context and exemplar
question-answer pairs are appended in deterministic order, making the whole
bundle a pure function of its inputs.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable

import numpy as np

from .errors import (
    CaptionViolation,
    EmptyGeneration,
    ProviderTransient,
    ProviderUnavailable,
    TemplateError,
)
from .providers import ChatProvider, ChatRequest, RequestLog
from .raster import RenderImage
from .sites import Dossier, SiteRecord

SECTION_ORDER = (
    "index_semantics",
    "observation_focus",
    "landscape_signatures",
    "caption_template",
    "output_format",
    "constraints",
)
# headers double as the machine-checkable requirement markers
SECTION_MARKERS = {
    "index_semantics": "## Image Index Semantics",
    "observation_focus": "## Observation Focus",
    "landscape_signatures": "## Landscape Signatures",
    "caption_template": "## Caption Template",
    "output_format": "## Output Format",
    "constraints": "## Constraints",
}
EXEMPLAR_RANGE = (5, 10)
DEFAULT_WORD_CAP = 250
MAX_RETRIES = 3
PAYLOAD_ARMS = {"rgb": ("rgb",), "rgb_ndvi_udm": ("rgb", "ndvi", "udm")}
NO_SPECULATION = (
    "Information on contentious issues is unavailable for this site. "
    "Do not speculate beyond the provided context."
)


@dataclass(frozen=True)
class GenerationHyperparams:
    temperature: float = 0.2
    frequency_penalty: float = 0.3
    max_tokens: int = 400
    banned_phrases: tuple[str, ...] = ("a number of", "various", "nestled")

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass
class ImagePayload:
    """Ordered role-tagged renders; the provider path accepts at most three."""

    images: list[tuple[str, RenderImage]]

    VALID_ROLES = ("rgb", "ndvi", "udm")

    def __post_init__(self):
        if not 1 <= len(self.images) <= 3:
            raise ValueError("payload must carry 1 to 3 images")
        for role, render in self.images:
            if role not in self.VALID_ROLES:
                raise ValueError(f"unknown payload role {role!r}")
            px = render.pixels
            if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
                raise ValueError("payload images must be 8-bit 3-channel")

    @property
    def roles(self) -> list[str]:
        return [role for role, _ in self.images]

    def raw_parts(self) -> tuple[tuple[str, int, int, bytes], ...]:
        return tuple(
            (role, render.pixels.shape[0], render.pixels.shape[1], render.pixels.tobytes())
            for role, render in self.images
        )


@dataclass
class PromptBundle:
    system_prompt: str
    exemplars: list[tuple[str, str]]
    context: str
    query: str
    constraints_digest: list[str]

    def rendered_user(self) -> str:
        parts = [self.context, ""]
        for i, (q, a) in enumerate(self.exemplars, start=1):
            parts += [f"Example {i} question: {q}", f"Example {i} answer: {a}", ""]
        parts.append(self.query)
        return "\n".join(parts)

    def to_dict(self) -> dict:
        return {
            "system_prompt": self.system_prompt,
            "exemplars": [list(p) for p in self.exemplars],
            "context": self.context,
            "query": self.query,
            "constraints_digest": list(self.constraints_digest),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PromptBundle":
        return cls(
            system_prompt=doc["system_prompt"],
            exemplars=[tuple(p) for p in doc["exemplars"]],
            context=doc["context"],
            query=doc["query"],
            constraints_digest=list(doc["constraints_digest"]),
        )


@dataclass
class CaptionCandidate:
    caption_id: str
    site_id: str
    text: str
    provider: str
    hyperparams: GenerationHyperparams
    payload_roles: list[str]
    created_at: str

    def to_dict(self) -> dict:
        return {
            "caption_id": self.caption_id,
            "site_id": self.site_id,
            "text": self.text,
            "provider": self.provider,
            "hyperparams": {
                "temperature": self.hyperparams.temperature,
                "frequency_penalty": self.hyperparams.frequency_penalty,
                "max_tokens": self.hyperparams.max_tokens,
                "banned_phrases": list(self.hyperparams.banned_phrases),
            },
            "payload_roles": list(self.payload_roles),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CaptionCandidate":
        hp = doc["hyperparams"]
        return cls(
            caption_id=doc["caption_id"],
            site_id=doc["site_id"],
            text=doc["text"],
            provider=doc["provider"],
            hyperparams=GenerationHyperparams(
                temperature=hp["temperature"],
                frequency_penalty=hp["frequency_penalty"],
                max_tokens=hp["max_tokens"],
                banned_phrases=tuple(hp["banned_phrases"]),
            ),
            payload_roles=list(doc["payload_roles"]),
            created_at=doc["created_at"],
        )


# ----------------------------------------------------------------- templates


def _read_data_text(name: str) -> str:
    return resources.files("minelens.data").joinpath(name).read_text()


def parse_template(text: str) -> dict[str, str]:
    """Split a template file on [SECTION:name] markers into named bodies."""
    sections: dict[str, str] = {}
    current: str | None = None
    lines: list[str] = []
    for line in text.splitlines():
        if line.startswith("[SECTION:") and line.rstrip().endswith("]"):
            if current is not None:
                sections[current] = "\n".join(lines).strip()
            current = line.strip()[len("[SECTION:") : -1]
            lines = []
        elif current is not None:
            lines.append(line)
    if current is not None:
        sections[current] = "\n".join(lines).strip()
    return sections


def load_caption_template(path: str | Path | None = None) -> dict[str, str]:
    text = Path(path).read_text() if path else _read_data_text("prompts/caption_system.txt")
    sections = parse_template(text)
    for name in SECTION_ORDER:
        if name not in sections or not sections[name]:
            raise TemplateError(f"template missing section {name!r}")
        if SECTION_MARKERS[name] not in sections[name]:
            raise TemplateError(f"section {name!r} lost its {SECTION_MARKERS[name]!r} header")
    return sections


def load_exemplars(path: str | Path | None = None) -> list[tuple[str, str]]:
    import json

    text = Path(path).read_text() if path else _read_data_text("exemplars.json")
    doc = json.loads(text)
    return [(p["question"], p["answer"]) for p in doc["pairs"]]


@dataclass
class CaptionConfig:
    multi_shot: bool = True
    word_cap: int = DEFAULT_WORD_CAP
    payload_arm: str = "rgb_ndvi_udm"
    template_path: str | None = None

    def __post_init__(self):
        if self.payload_arm not in PAYLOAD_ARMS:
            raise ValueError(f"unknown payload arm {self.payload_arm!r}")


def build_prompt(
    site: SiteRecord,
    dossier: Dossier,
    exemplars: list[tuple[str, str]],
    config: CaptionConfig,
) -> PromptBundle:
    """Assemble the full bundle; deterministic for fixed inputs."""
    sections = load_caption_template(config.template_path)
    system_prompt = "\n\n".join(sections[name] for name in SECTION_ORDER)

    if config.multi_shot:
        lo, hi = EXEMPLAR_RANGE
        if not lo <= len(exemplars) <= hi:
            raise TemplateError(f"multi-shot needs {lo}-{hi} exemplars, got {len(exemplars)}")
        chosen = list(exemplars)
    else:
        chosen = []

    headers = {"history": "## History", "geology": "## Geology", "controversies": "## Contentious Issues"}
    ctx = [f"# Site Context: {site.name} ({site.country})"]
    for name, text in dossier.segments().items():
        if text:
            ctx += [headers[name], text]
    if dossier.sparse_flag:
        ctx.append(NO_SPECULATION)
    context = "\n".join(ctx)

    constraints = [
        line.strip() for line in sections["constraints"].splitlines() if line.strip().startswith("- ")
    ]
    query = (
        f"Describe the landscape in the attached renders of the {site.name} site, "
        f"in at most {config.word_cap} words."
    )
    return PromptBundle(
        system_prompt=system_prompt,
        exemplars=chosen,
        context=context,
        query=query,
        constraints_digest=constraints,
    )


# ---------------------------------------------------------------- generation


def _word_count(text: str) -> int:
    return len(text.split())


def _banned_hits(text: str, banned: tuple[str, ...]) -> list[str]:
    lowered = text.lower()
    return [p for p in banned if p.lower() in lowered]


def _call_with_retries(
    provider: ChatProvider,
    request: ChatRequest,
    log: RequestLog | None,
    sleep: Callable[[float], None],
) -> str:
    last: Exception | None = None
    for attempt in range(MAX_RETRIES + 1):
        try:
            text = provider.complete(request)
            if log:
                log.record(
                    {
                        "provider": provider.name,
                        "request_digest": request.digest(),
                        "attempt": attempt,
                        "response_chars": len(text),
                    }
                )
            return text
        except ProviderTransient as exc:
            last = exc
            if log:
                log.record(
                    {
                        "provider": provider.name,
                        "request_digest": request.digest(),
                        "attempt": attempt,
                        "error": str(exc),
                    }
                )
            if attempt < MAX_RETRIES:
                sleep(2**attempt)
    raise ProviderUnavailable(f"gave up after {MAX_RETRIES} retries: {last}")


def generate_caption(
    provider: ChatProvider,
    bundle: PromptBundle,
    payload: ImagePayload,
    hp: GenerationHyperparams = GenerationHyperparams(),
    *,
    site_id: str = "",
    word_cap: int = DEFAULT_WORD_CAP,
    log: RequestLog | None = None,
    sleep: Callable[[float], None] = time.sleep,
    now: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
) -> CaptionCandidate:
    """One provider call (transient failures retried with backoff), then the
    post-filters: a banned-phrase hit earns a single corrective regeneration,
    an over-cap or still-violating caption is rejected outright."""
    request = ChatRequest(
        system=bundle.system_prompt,
        user=bundle.rendered_user(),
        images=payload.raw_parts(),
        temperature=hp.temperature,
        frequency_penalty=hp.frequency_penalty,
        max_tokens=hp.max_tokens,
    )
    text = _call_with_retries(provider, request, log, sleep).strip()
    if not text:
        raise EmptyGeneration("provider returned no text")

    hits = _banned_hits(text, hp.banned_phrases)
    if hits:
        correction = (
            request.user
            + "\n\nRevise: the previous draft used banned phrasing ("
            + ", ".join(hits)
            + "). Produce the caption again without those phrases."
        )
        retry_request = ChatRequest(
            system=request.system,
            user=correction,
            images=request.images,
            temperature=hp.temperature,
            frequency_penalty=hp.frequency_penalty,
            max_tokens=hp.max_tokens,
        )
        text = _call_with_retries(provider, retry_request, log, sleep).strip()
        if not text:
            raise EmptyGeneration("provider returned no text on regeneration")
        hits = _banned_hits(text, hp.banned_phrases)
        if hits:
            raise CaptionViolation(f"banned phrases after regeneration: {hits}")

    n_words = _word_count(text)
    if n_words > word_cap:
        raise CaptionViolation(f"caption is {n_words} words, cap is {word_cap}")

    caption_id = "cap-" + hashlib.sha256(
        f"{site_id}|{bundle.query}|{provider.name}|{text}".encode()
    ).hexdigest()[:12]
    return CaptionCandidate(
        caption_id=caption_id,
        site_id=site_id,
        text=text,
        provider=provider.name,
        hyperparams=hp,
        payload_roles=payload.roles,
        created_at=now().isoformat(),
    )
