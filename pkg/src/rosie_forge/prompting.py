"""Few-shot prompt construction and structured completion parsing.

A proposal turns (source task, target task) into the three strings that
drive one augmentation: the detection query for the augmentation region,
the detection queries for passthrough objects, and the inpainting prompt.
Proposals come from a hand-engineered registry, a deterministic rule
backend, or a remote completion endpoint whose response is parsed back
into the same structure.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from hashlib import sha256
from importlib import resources
from pathlib import Path

from .client import RetryPolicy, post_json

logger = logging.getLogger(__name__)

REGION_PREFIX = "ViT region prompt: "
PASSTHROUGH_PREFIX = "passthrough object prompt: "
INPAINT_PREFIX = "inpainting prompt: "

DEFAULT_PASSTHROUGH = ("robot arm", "robot gripper")

# Positional qualifiers dropped when a container noun is reduced to its
# detection query ("cluttered top drawer" -> "drawer").
_POSITION_WORDS = {"top", "bottom", "middle", "left", "right", "upper", "lower"}


class PromptParseError(ValueError):
    def __init__(self, message: str, missing_prefix: str | None = None):
        super().__init__(message)
        self.missing_prefix = missing_prefix


class UnmatchedTemplateError(ValueError):
    """Rule backend has no pattern for the given task pair."""


@dataclass(frozen=True)
class PromptTriple:
    region_query: str
    passthrough_queries: tuple[str, ...]
    inpaint_prompt: str

    def __post_init__(self) -> None:
        if not self.region_query or not self.inpaint_prompt:
            raise ValueError("prompt triple fields must be nonempty")
        if len(self.passthrough_queries) < 1 or not all(self.passthrough_queries):
            raise ValueError("prompt triple needs at least one passthrough query")
        object.__setattr__(self, "passthrough_queries", tuple(self.passthrough_queries))

    def to_json(self) -> dict:
        return {
            "region_query": self.region_query,
            "passthrough_queries": list(self.passthrough_queries),
            "inpaint_prompt": self.inpaint_prompt,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PromptTriple":
        return cls(
            region_query=obj["region_query"],
            passthrough_queries=tuple(obj["passthrough_queries"]),
            inpaint_prompt=obj["inpaint_prompt"],
        )


@dataclass(frozen=True)
class AugmentationSpec:
    source_task: str
    target_task: str
    new_instruction: str | None = None

    def __post_init__(self) -> None:
        if not self.source_task or not self.target_task:
            raise ValueError("source and target tasks must be nonempty")


@dataclass(frozen=True)
class FewShotExemplar:
    spec: AugmentationSpec
    triple: PromptTriple


def render_triple_block(triple: PromptTriple) -> str:
    return "\n".join(
        [
            f"{REGION_PREFIX}{triple.region_query}",
            f"{PASSTHROUGH_PREFIX}{', '.join(triple.passthrough_queries)}",
            f"{INPAINT_PREFIX}{triple.inpaint_prompt}",
        ]
    )


def build_fewshot_prompt(exemplars: list[FewShotExemplar], spec: AugmentationSpec) -> str:
    """Render exemplars as five-line blocks followed by the query's two lines.

    Zero exemplars is permitted but known to produce hallucinated completions
    downstream; callers warn rather than refuse.
    """
    blocks = []
    for ex in exemplars:
        blocks.append(
            f"Source task: {ex.spec.source_task}\n"
            f"Target task: {ex.spec.target_task}\n" + render_triple_block(ex.triple)
        )
    blocks.append(f"Source task: {spec.source_task}\nTarget task: {spec.target_task}")
    return "\n".join(blocks)


def parse_prompt_triple(response: str) -> PromptTriple:
    """Extract the three prefixed fields from a completion, case-sensitively.

    Any missing field raises :class:`PromptParseError` naming the first
    missing prefix — the expected outcome for hallucinated (zero-shot)
    completions that carry no prefixed lines at all.
    """
    found: dict[str, str] = {}
    for line in response.splitlines():
        for prefix in (REGION_PREFIX, PASSTHROUGH_PREFIX, INPAINT_PREFIX):
            if line.startswith(prefix) and prefix not in found:
                found[prefix] = line[len(prefix):].strip()
    for prefix in (REGION_PREFIX, PASSTHROUGH_PREFIX, INPAINT_PREFIX):
        if prefix not in found:
            raise PromptParseError(
                f"response is missing field {prefix.rstrip(': ')!r}",
                missing_prefix=prefix,
            )
    return PromptTriple(
        region_query=found[REGION_PREFIX],
        passthrough_queries=tuple(found[PASSTHROUGH_PREFIX].split(", ")),
        inpaint_prompt=found[INPAINT_PREFIX],
    )


_NUMBERED_LINE = re.compile(r"^\s*(\d+)\.\s+(.*\S)\s*$")


def parse_numbered_list(response: str) -> list[str]:
    """Payloads of lines shaped ``<int>. <payload>``, in numeric order."""
    items: list[tuple[int, str]] = []
    for line in response.splitlines():
        m = _NUMBERED_LINE.match(line)
        if m:
            items.append((int(m.group(1)), m.group(2)))
    items.sort(key=lambda pair: pair[0])
    return [payload for _, payload in items]


# -- backends ---------------------------------------------------------------

class HttpCompletionBackend:
    """Client for the remote completion protocol (POST /v1/complete)."""

    def __init__(
        self,
        endpoint: str,
        retry: RetryPolicy | None = None,
        max_tokens: int = 256,
        temperature: float = 0.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.retry = retry or RetryPolicy()
        self.max_tokens = max_tokens
        self.temperature = temperature

    def complete(self, prompt: str) -> str:
        payload = {
            "prompt": prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }
        reply = post_json(f"{self.endpoint}/v1/complete", payload, self.retry)
        return reply["text"]


class RulePromptBackend:
    """Deterministic offline proposal backend driven by pattern tables."""

    def __init__(
        self,
        seed: int = 0,
        distractors: tuple[str, ...] = ("coke can", "chip bag", "box of crackers"),
    ):
        self.seed = seed
        self.distractors = distractors

    def _pick_distractor(self, key: str) -> str:
        digest = sha256(f"{self.seed}:{key}".encode("utf-8")).digest()
        return self.distractors[digest[0] % len(self.distractors)]

    def propose_triple(self, spec: AugmentationSpec) -> PromptTriple:
        source = spec.source_task.strip()
        target = spec.target_task.strip()

        m = re.search(r"\bclutter(?:ed)?\s+(.+)$", target)
        if m:
            container = _container_noun(m.group(1))
            distractor = self._pick_distractor(target)
            return PromptTriple(
                region_query=f"empty {container}",
                passthrough_queries=DEFAULT_PASSTHROUGH,
                inpaint_prompt=f"add a {distractor} in the {container}",
            )

        ms = re.match(r"^pick(?:\s+up)?\s+(.+)$", source)
        mt = re.match(r"^pick(?:\s+up)?\s+(.+)$", target)
        if ms and mt:
            return PromptTriple(
                region_query=ms.group(1),
                passthrough_queries=DEFAULT_PASSTHROUGH,
                inpaint_prompt=f"robot picking up a {mt.group(1)}",
            )

        ms = re.match(r"^(place|move|put)\s+(.+?)\s+(?:into|in|near|onto|on)\s+(.+)$", source)
        mt = re.match(r"^(place|move|put)\s+(.+?)\s+(?:into|in|near|onto|on)\s+(.+)$", target)
        if ms and mt:
            held = ms.group(2)
            return PromptTriple(
                region_query=_strip_articles(ms.group(3)),
                passthrough_queries=DEFAULT_PASSTHROUGH + (held,),
                inpaint_prompt=f"a {_strip_articles(mt.group(3))}",
            )

        raise UnmatchedTemplateError(
            f"no rule template matches source {source!r} -> target {target!r}"
        )


def _strip_articles(phrase: str) -> str:
    words = phrase.strip().split()
    while words and words[0] in ("a", "an", "the"):
        words = words[1:]
    return " ".join(words)


def _container_noun(phrase: str) -> str:
    words = [w for w in _strip_articles(phrase).split() if w not in _POSITION_WORDS]
    return words[-1] if words else phrase.strip()


def propose(backend, exemplars: list[FewShotExemplar], spec: AugmentationSpec) -> PromptTriple:
    """One proposal: rule backends map the spec directly, remote backends go
    through render -> complete -> parse."""
    if hasattr(backend, "propose_triple"):
        return backend.propose_triple(spec)
    if not exemplars:
        logger.warning("proposing with zero exemplars; completions tend to hallucinate")
    prompt = build_fewshot_prompt(exemplars, spec)
    return parse_prompt_triple(backend.complete(prompt))


# -- registry and exemplar files ---------------------------------------------

def _read_data_file(path: Path | None, default_name: str) -> dict | list:
    if path is not None:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    data = resources.files("rosie_forge.data").joinpath(default_name)
    return json.loads(data.read_text(encoding="utf-8"))


def load_prompt_registry(path: Path | None = None) -> dict[str, PromptTriple]:
    """Hand-engineered task -> triple lookup; bypasses any backend."""
    raw = _read_data_file(path, "prompt_registry.json")
    return {task: PromptTriple.from_json(obj) for task, obj in raw.items()}


def load_exemplars(path: Path | None = None) -> list[FewShotExemplar]:
    raw = _read_data_file(path, "exemplars.json")
    return [
        FewShotExemplar(
            spec=AugmentationSpec(
                source_task=entry["spec"]["source_task"],
                target_task=entry["spec"]["target_task"],
            ),
            triple=PromptTriple.from_json(entry["triple"]),
        )
        for entry in raw
    ]
