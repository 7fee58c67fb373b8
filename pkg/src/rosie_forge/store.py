"""On-disk episodic dataset format: load, validate, persist.

Directory layout (all other modules read and write through this):

    <dataset>/
      manifest.json                      # version, name, action_dim,
                                         # image_size, episodes (ascending id)
      episodes/<id>/frames/<%05d>.png    # 8-bit RGB, one per frame
      episodes/<id>/actions.json         # T arrays of action_dim numbers

Saving is a pure function of the in-memory dataset: fixed key order, fixed
episode ordering, no timestamps. Reads are safe from any number of
concurrent callers; writers require exclusive ownership of the directory
(not arbitrated here).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .prompting import PromptTriple

FORMAT_VERSION = 1

_ID_PATTERN = re.compile(r"^[A-Za-z0-9._-]+$")

ORIGIN_COLLECTED = "collected"
ORIGIN_AUGMENTED = "augmented"


class StoreError(Exception):
    """Missing manifest, unsupported version, or truncated episode payloads."""


@dataclass
class Violation:
    episode_id: str | None
    invariant: str
    message: str

    def __str__(self) -> str:
        scope = f"episode '{self.episode_id}'" if self.episode_id else "dataset"
        return f"{scope}: {self.invariant}: {self.message}"


class DatasetValidationError(StoreError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        summary = "; ".join(str(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"dataset failed validation: {summary}{more}")


@dataclass(frozen=True)
class Provenance:
    origin: str
    source_episode_id: str | None = None
    prompt_triple: PromptTriple | None = None
    seed: int | None = None

    @classmethod
    def collected(cls) -> "Provenance":
        return cls(origin=ORIGIN_COLLECTED)

    @classmethod
    def augmented(
        cls, source_episode_id: str, prompt_triple: PromptTriple, seed: int
    ) -> "Provenance":
        return cls(ORIGIN_AUGMENTED, source_episode_id, prompt_triple, seed)

    def to_json(self) -> dict:
        if self.origin == ORIGIN_COLLECTED:
            return {"origin": ORIGIN_COLLECTED}
        return {
            "origin": self.origin,
            "source_episode_id": self.source_episode_id,
            "prompt_triple": self.prompt_triple.to_json() if self.prompt_triple else None,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Provenance":
        triple = obj.get("prompt_triple")
        return cls(
            origin=obj.get("origin", ""),
            source_episode_id=obj.get("source_episode_id"),
            prompt_triple=PromptTriple.from_json(triple) if triple else None,
            seed=obj.get("seed"),
        )


@dataclass
class Frame:
    image: np.ndarray   # (H, W, 3) uint8
    action: np.ndarray  # (action_dim,) float64


@dataclass
class Episode:
    episode_id: str
    instruction: str
    frames: list[Frame]
    provenance: Provenance = field(default_factory=Provenance.collected)

    @property
    def length(self) -> int:
        return len(self.frames)


@dataclass
class Dataset:
    name: str
    action_dim: int
    image_size: tuple[int, int]
    episodes: list[Episode]
    version: int = FORMAT_VERSION

    def episode(self, episode_id: str) -> Episode:
        for ep in self.episodes:
            if ep.episode_id == episode_id:
                return ep
        raise KeyError(episode_id)


def validate_dataset(dataset: Dataset, companion: Dataset | None = None) -> list[Violation]:
    """All invariant violations as data; empty list means the dataset is valid.

    ``companion`` is the co-loaded counterpart dataset (original next to
    augmented); augmented provenance must resolve within the union of both.
    Without a companion the provenance-resolution check is skipped, since a
    lone augmented dataset cannot know its source set.
    """
    violations: list[Violation] = []
    seen: set[str] = set()
    for ep in dataset.episodes:
        if ep.episode_id in seen:
            violations.append(
                Violation(ep.episode_id, "unique-episode-ids", "duplicate episode id")
            )
        seen.add(ep.episode_id)

    known_ids = {ep.episode_id for ep in dataset.episodes}
    if companion is not None:
        known_ids |= {ep.episode_id for ep in companion.episodes}

    h, w = dataset.image_size
    for ep in dataset.episodes:
        eid = ep.episode_id
        if not eid or not _ID_PATTERN.match(eid):
            violations.append(
                Violation(eid, "episode-id-path-safe", f"id {eid!r} is not path-safe")
            )
        if not ep.instruction:
            violations.append(Violation(eid, "instruction-nonempty", "empty instruction"))
        if len(ep.frames) < 1:
            violations.append(Violation(eid, "length-positive", "episode has no frames"))
        for i, frame in enumerate(ep.frames):
            img = np.asarray(frame.image)
            if img.shape != (h, w, 3) or img.dtype != np.uint8:
                violations.append(
                    Violation(
                        eid,
                        "frame-image-size",
                        f"frame {i}: shape {img.shape} dtype {img.dtype}, "
                        f"expected ({h}, {w}, 3) uint8",
                    )
                )
            act = np.asarray(frame.action, dtype=np.float64)
            if act.shape != (dataset.action_dim,):
                violations.append(
                    Violation(
                        eid,
                        "action-dim",
                        f"frame {i}: action length {act.shape}, expected "
                        f"({dataset.action_dim},)",
                    )
                )
            elif not np.isfinite(act).all():
                violations.append(
                    Violation(eid, "action-finite", f"frame {i}: non-finite action value")
                )

        prov = ep.provenance
        if prov.origin not in (ORIGIN_COLLECTED, ORIGIN_AUGMENTED):
            violations.append(
                Violation(eid, "provenance-origin", f"unknown origin {prov.origin!r}")
            )
        elif prov.origin == ORIGIN_AUGMENTED:
            if not prov.source_episode_id:
                violations.append(
                    Violation(eid, "provenance-source", "augmented without source id")
                )
            elif companion is not None and prov.source_episode_id not in known_ids:
                violations.append(
                    Violation(
                        eid,
                        "provenance-resolves",
                        f"source episode '{prov.source_episode_id}' not found "
                        "in co-loaded datasets",
                    )
                )
            if prov.prompt_triple is None:
                violations.append(
                    Violation(eid, "provenance-triple", "augmented without prompt triple")
                )
    return violations


def _manifest_dict(dataset: Dataset) -> dict:
    episodes = []
    for ep in sorted(dataset.episodes, key=lambda e: e.episode_id):
        episodes.append(
            {
                "id": ep.episode_id,
                "instruction": ep.instruction,
                "length": len(ep.frames),
                "frames_path": f"episodes/{ep.episode_id}/frames",
                "actions_path": f"episodes/{ep.episode_id}/actions.json",
                "provenance": ep.provenance.to_json(),
            }
        )
    return {
        "version": dataset.version,
        "name": dataset.name,
        "action_dim": dataset.action_dim,
        "image_size": list(dataset.image_size),
        "episodes": episodes,
    }


def save_dataset(dataset: Dataset, directory: Path) -> None:
    """Write the dataset in the canonical layout; byte-deterministic."""
    violations = validate_dataset(dataset)
    if violations:
        raise DatasetValidationError(violations)

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for ep in sorted(dataset.episodes, key=lambda e: e.episode_id):
        ep_dir = directory / "episodes" / ep.episode_id
        frames_dir = ep_dir / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(ep.frames):
            Image.fromarray(frame.image, mode="RGB").save(frames_dir / f"{i:05d}.png")
        actions = [[float(v) for v in frame.action] for frame in ep.frames]
        (ep_dir / "actions.json").write_text(
            json.dumps(actions) + "\n", encoding="utf-8"
        )
    manifest = json.dumps(_manifest_dict(dataset), indent=2, ensure_ascii=False) + "\n"
    (directory / "manifest.json").write_text(manifest, encoding="utf-8")


def load_dataset(directory: Path) -> Dataset:
    """Load and fully validate a dataset directory; truncated data is rejected."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise StoreError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise StoreError(
            f"unsupported manifest version {version!r}, expected {FORMAT_VERSION}"
        )

    episodes: list[Episode] = []
    for desc in manifest["episodes"]:
        eid = desc["id"]
        declared = desc["length"]
        frames_dir = directory / desc["frames_path"]
        files = sorted(frames_dir.glob("*.png")) if frames_dir.is_dir() else []
        if len(files) != declared:
            raise StoreError(
                f"episode '{eid}': manifest declares {declared} frames, "
                f"found {len(files)} image files"
            )
        actions_path = directory / desc["actions_path"]
        if not actions_path.exists():
            raise StoreError(f"episode '{eid}': missing actions file")
        actions = json.loads(actions_path.read_text(encoding="utf-8"))
        if len(actions) != declared:
            raise StoreError(
                f"episode '{eid}': manifest declares {declared} actions, "
                f"found {len(actions)}"
            )
        frames = []
        for path, action in zip(files, actions):
            with Image.open(path) as img:
                array = np.asarray(img.convert("RGB"), dtype=np.uint8)
            frames.append(Frame(image=array, action=np.asarray(action, dtype=np.float64)))
        episodes.append(
            Episode(
                episode_id=eid,
                instruction=desc["instruction"],
                frames=frames,
                provenance=Provenance.from_json(desc.get("provenance", {})),
            )
        )

    dataset = Dataset(
        name=manifest["name"],
        action_dim=manifest["action_dim"],
        image_size=tuple(manifest["image_size"]),
        episodes=episodes,
        version=version,
    )
    violations = validate_dataset(dataset)
    if violations:
        raise DatasetValidationError(violations)
    return dataset


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Structural equality over all fields, pixels, and actions."""
    if (a.name, a.action_dim, tuple(a.image_size), a.version) != (
        b.name,
        b.action_dim,
        tuple(b.image_size),
        b.version,
    ):
        return False
    if len(a.episodes) != len(b.episodes):
        return False
    for ea, eb in zip(
        sorted(a.episodes, key=lambda e: e.episode_id),
        sorted(b.episodes, key=lambda e: e.episode_id),
    ):
        if (ea.episode_id, ea.instruction, ea.provenance) != (
            eb.episode_id,
            eb.instruction,
            eb.provenance,
        ):
            return False
        if len(ea.frames) != len(eb.frames):
            return False
        for fa, fb in zip(ea.frames, eb.frames):
            if not np.array_equal(fa.image, fb.image):
                return False
            if not np.array_equal(fa.action, fb.action):
                return False
    return True
