"""Open-vocabulary detection backend interface and mask post-processing.

Post-processing mirrors the augmentation recipe: score thresholding keyed by
task family, highest-score selection, passthrough subtraction, and seeded
free-region sampling (the last two live in :mod:`rosie_forge.masks`).

The mock backend is an oracle client over the synthetic scene world. Frames
registered with their ground truth are answered with exact visibility
fractions; unregistered frames (e.g. augmented output) fall back to matching
sprite vocabulary colors directly in the image, so edited content can be
re-found without ground truth.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .client import MalformedResponseError, RetryPolicy, post_json
from .masks import RLE, Mask, rle_decode, rle_encode, tight_bbox
from .scene import SPRITES, GroundTruth, load_ground_truth


class NoDetectionError(ValueError):
    """select_best called with no detections."""


@dataclass(frozen=True)
class Detection:
    query: str
    score: float
    bbox: tuple[int, int, int, int]
    mask: Mask


@dataclass(frozen=True)
class ThresholdConfig:
    task_family: str
    region_threshold: float
    passthrough_threshold: float

    def __post_init__(self) -> None:
        for value in (self.region_threshold, self.passthrough_threshold):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"threshold {value} outside [0, 1]")


def load_thresholds(path: Path | None = None) -> dict[str, ThresholdConfig]:
    """Per-task-family score thresholds; defaults ship with the package."""
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    else:
        data = resources.files("rosie_forge.data").joinpath("thresholds.json")
        raw = json.loads(data.read_text(encoding="utf-8"))
    return {
        family: ThresholdConfig(family, entry["region"], entry["passthrough"])
        for family, entry in raw.items()
    }


def detect(backend, image: np.ndarray, queries: list[str]) -> list[Detection]:
    if not queries:
        raise ValueError("detect requires at least one query")
    return backend.detect(image, list(queries))


def filter_by_threshold(detections: list[Detection], threshold: float) -> list[Detection]:
    """Exactly the detections with score >= threshold, order preserved."""
    return [d for d in detections if d.score >= threshold]


def select_best(detections: list[Detection]) -> Detection:
    """Highest-score detection; ties broken by earliest input position."""
    if not detections:
        raise NoDetectionError("no detections to select from")
    best = detections[0]
    for d in detections[1:]:
        if d.score > best.score:
            best = d
    return best


def _tokens(text: str) -> set[str]:
    return {t for t in "".join(c.lower() if c.isalnum() else " " for c in text).split() if t}


def token_overlap(a: str, b: str) -> bool:
    return bool(_tokens(a) & _tokens(b))


ARM_ENTITY = "robot arm gripper"


def _image_key(image: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(image)
    return hashlib.sha256(arr.tobytes() + str(arr.shape).encode()).digest()


class MockDetectionBackend:
    """Deterministic detection oracle over the synthetic scene world."""

    def __init__(self, max_detections: int = 64):
        self.max_detections = max_detections
        self._registry: dict[bytes, GroundTruth] = {}

    def register(self, image: np.ndarray, truth: GroundTruth) -> None:
        self._registry[_image_key(image)] = truth

    def register_episode(self, episode, truths: list[GroundTruth]) -> None:
        for frame, truth in zip(episode.frames, truths):
            self.register(frame.image, truth)

    @classmethod
    def from_dataset_dir(cls, directory: Path, max_detections: int = 64) -> "MockDetectionBackend":
        """Seed the oracle with every ground-truth sidecar in a dataset dir."""
        from .store import load_dataset

        backend = cls(max_detections=max_detections)
        dataset = load_dataset(directory)
        for ep in dataset.episodes:
            truths = load_ground_truth(Path(directory) / "episodes" / ep.episode_id)
            if truths is not None:
                backend.register_episode(ep, truths)
        return backend

    def detect(self, image: np.ndarray, queries: list[str]) -> list[Detection]:
        truth = self._registry.get(_image_key(image))
        out: list[Detection] = []
        for query in queries:
            if truth is not None:
                out.extend(self._detect_ground_truth(truth, query))
            else:
                out.extend(self._detect_by_color(image, query))
        return out[: self.max_detections]

    def _detect_ground_truth(self, truth: GroundTruth, query: str) -> list[Detection]:
        # A detection carries the full un-occluded shape mask (a detector is
        # not occlusion-aware), scored by the exact visibility fraction, so
        # passthrough subtraction downstream behaves as it would on real
        # detections that extend under the arm.
        found = []
        for name, obj in truth.objects.items():
            if token_overlap(name, query):
                found.append(
                    Detection(query, obj.visibility, tight_bbox(obj.mask), obj.mask)
                )
        if token_overlap(ARM_ENTITY, query) and not truth.arm_mask.is_empty():
            found.append(
                Detection(query, 1.0, tight_bbox(truth.arm_mask), truth.arm_mask)
            )
        return found

    def _detect_by_color(self, image: np.ndarray, query: str) -> list[Detection]:
        # Unregistered frame: match sprite vocabulary colors present in the
        # image. The score is the fill fraction of the matched pixels within
        # their own bounding box (no un-occluded extent is knowable here).
        found = []
        for noun, sprite in SPRITES.items():
            if not token_overlap(noun, query):
                continue
            bits = np.all(image == np.array(sprite.color, dtype=np.uint8), axis=-1)
            if not bits.any():
                continue
            mask = Mask(bits)
            x, y, w, h = tight_bbox(mask)
            score = min(1.0, mask.count() / float(w * h))
            found.append(Detection(query, score, (x, y, w, h), mask))
        return found


# -- wire format --------------------------------------------------------------

def image_to_png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def image_from_png_b64(data: str) -> np.ndarray:
    raw = base64.b64decode(data.encode("ascii"))
    with Image.open(io.BytesIO(raw)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def detection_to_wire(detection: Detection) -> dict:
    return {
        "query": detection.query,
        "score": detection.score,
        "bbox": list(detection.bbox),
        "mask_rle": rle_encode(detection.mask).to_json(),
    }


def detection_from_wire(obj: dict, image_size: tuple[int, int]) -> Detection:
    try:
        query = obj["query"]
        score = float(obj["score"])
        bbox = tuple(int(v) for v in obj["bbox"])
        mask = rle_decode(RLE.from_json(obj["mask_rle"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponseError(f"malformed detection: {exc}", payload=obj) from exc
    if len(bbox) != 4:
        raise MalformedResponseError(f"bbox must have 4 entries: {bbox!r}", payload=obj)
    if not 0.0 <= score <= 1.0:
        raise MalformedResponseError(f"score {score} outside [0, 1]", payload=obj)
    if mask.size != tuple(image_size):
        raise MalformedResponseError(
            f"mask size {mask.size} does not match image size {tuple(image_size)}",
            payload=obj,
        )
    if bbox != tight_bbox(mask):
        raise MalformedResponseError(
            f"bbox {bbox} is not the tight bounding box of the mask", payload=obj
        )
    return Detection(query, score, bbox, mask)  # type: ignore[arg-type]


class HttpDetectionBackend:
    """Client for the remote detection protocol (POST /v1/detect)."""

    def __init__(self, endpoint: str, retry: RetryPolicy | None = None, max_detections: int = 64):
        self.endpoint = endpoint.rstrip("/")
        self.retry = retry or RetryPolicy()
        self.max_detections = max_detections

    def detect(self, image: np.ndarray, queries: list[str]) -> list[Detection]:
        payload = {
            "image_png_b64": image_to_png_b64(image),
            "queries": list(queries),
            "max_detections": self.max_detections,
        }
        reply = post_json(f"{self.endpoint}/v1/detect", payload, self.retry)
        if "detections" not in reply or not isinstance(reply["detections"], list):
            raise MalformedResponseError("reply lacks a detections list", payload=reply)
        size = (image.shape[0], image.shape[1])
        return [detection_from_wire(obj, size) for obj in reply["detections"]]
