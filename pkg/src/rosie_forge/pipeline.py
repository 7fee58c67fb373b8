"""Episode and dataset augmentation orchestration plus 1:1 dataset mixing.

Per frame, the augmenter re-detects the region and passthrough queries
(masks are recomputed independently for every frame), subtracts surviving
passthrough masks from the best region mask, and sends the result through
the inpainting cascade. Actions are carried over bit-for-bit and the
instruction changes only when the job's spec carries a new one.

Episode processing is all-or-nothing: a frame whose region detection fails
the threshold, or any backend failure after retries, skips the whole episode
into the skip report rather than producing a partially augmented trajectory.

Outputs are deterministic: per-frame seeds derive from (job seed, episode
id, frame index), and results are assembled in episode-id order regardless
of worker count or completion order.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .client import BackendError
from .inpainting import CascadeConfig, InpaintRequest, inpaint_cascade, verify_locality
from .masks import Mask, PlacementExhausted, sample_free_region, subtract_passthrough
from .prompting import AugmentationSpec, PromptTriple
from .segmentation import Detection, ThresholdConfig, detect, filter_by_threshold, select_best
from .store import Dataset, Episode, Frame, Provenance

logger = logging.getLogger(__name__)

MODE_REPLACE_TARGET = "replace-target"
MODE_ADD_DISTRACTOR = "add-distractor"

FLAG_POLICY_WARN = "warn"
FLAG_POLICY_REJECT = "reject"


class CannotMixError(ValueError):
    """mix_datasets needs both sides nonempty."""


class EpisodeSkipped(Exception):
    def __init__(
        self,
        episode_id: str,
        cause: str,
        frame_index: int | None = None,
        best_score: float | None = None,
    ):
        self.episode_id = episode_id
        self.cause = cause
        self.frame_index = frame_index
        self.best_score = best_score
        at = f" at frame {frame_index}" if frame_index is not None else ""
        super().__init__(f"episode '{episode_id}' skipped{at}: {cause}")


@dataclass(frozen=True)
class AugmentationJob:
    episode_id: str
    spec: AugmentationSpec
    triple: PromptTriple
    thresholds: ThresholdConfig
    seed: int
    mode: str = MODE_REPLACE_TARGET
    distractor_box: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.mode not in (MODE_REPLACE_TARGET, MODE_ADD_DISTRACTOR):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")
        if self.mode == MODE_ADD_DISTRACTOR and self.distractor_box is None:
            raise ValueError("add-distractor mode requires a distractor box size")


@dataclass
class PipelineConfig:
    parallelism: int = 1
    locality_tolerance: int = 0
    flag_policy: str = FLAG_POLICY_WARN
    batch_queries: bool = True
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    mask_area_flag_ratio: float = 5.0

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.flag_policy not in (FLAG_POLICY_WARN, FLAG_POLICY_REJECT):
            raise ValueError(f"unknown flag policy {self.flag_policy!r}")


@dataclass
class Backends:
    detection: object
    inpaint: object


@dataclass
class SkipRecord:
    episode_id: str
    cause: str
    frame_index: int | None = None
    best_score: float | None = None

    def to_json(self) -> dict:
        out: dict = {"episode_id": self.episode_id, "cause": self.cause}
        if self.frame_index is not None:
            out["frame_index"] = self.frame_index
        if self.best_score is not None:
            out["best_score"] = self.best_score
        return out


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary parts; the single expansion rule for
    all derived randomness."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _detect_queries(backend, image, job: AugmentationJob, batch: bool) -> list[Detection]:
    queries = [job.triple.region_query, *job.triple.passthrough_queries]
    if batch:
        return detect(backend, image, queries)
    out: list[Detection] = []
    for q in queries:
        out.extend(detect(backend, image, [q]))
    return out


def _flag(flags: list[str], config: PipelineConfig, episode_id: str, message: str) -> None:
    if config.flag_policy == FLAG_POLICY_REJECT:
        raise EpisodeSkipped(episode_id, message)
    logger.warning("episode '%s': %s", episode_id, message)
    flags.append(message)


def augment_episode(
    episode: Episode,
    job: AugmentationJob,
    backends: Backends,
    config: PipelineConfig | None = None,
) -> tuple[Episode, list[str]]:
    """Augment every frame of one episode; returns (episode, quality flags)."""
    config = config or PipelineConfig()
    flags: list[str] = []
    out_frames: list[Frame] = []
    box_mask: Mask | None = None
    prev_area: int | None = None

    for i, frame in enumerate(episode.frames):
        try:
            detections = _detect_queries(
                backends.detection, frame.image, job, config.batch_queries
            )
        except BackendError as exc:
            raise EpisodeSkipped(
                episode.episode_id, f"backend failure: {exc}", frame_index=i
            ) from exc

        region_dets = [d for d in detections if d.query == job.triple.region_query]
        best_score = max((d.score for d in region_dets), default=None)
        surviving = filter_by_threshold(region_dets, job.thresholds.region_threshold)
        if not surviving:
            raise EpisodeSkipped(
                episode.episode_id,
                f"region query {job.triple.region_query!r} below threshold "
                f"{job.thresholds.region_threshold}",
                frame_index=i,
                best_score=best_score,
            )
        region = select_best(surviving)

        passthrough_masks = [
            d.mask
            for d in detections
            if d.query in job.triple.passthrough_queries
            and d.score >= job.thresholds.passthrough_threshold
        ]
        usable = subtract_passthrough(region.mask, passthrough_masks)

        if job.mode == MODE_REPLACE_TARGET:
            target = usable
        else:
            if box_mask is None:
                try:
                    box_mask = sample_free_region(
                        usable,
                        [],
                        job.distractor_box,  # type: ignore[arg-type]
                        derive_seed(job.seed, episode.episode_id, "distractor-box"),
                    )
                except PlacementExhausted as exc:
                    raise EpisodeSkipped(
                        episode.episode_id, f"distractor placement: {exc}", frame_index=i
                    ) from exc
            target = box_mask.intersect(usable)

        if target.is_empty():
            raise EpisodeSkipped(
                episode.episode_id, "target mask is empty after subtraction", frame_index=i
            )

        area = region.mask.count()
        if prev_area is not None:
            lo, hi = sorted((prev_area, area))
            if lo == 0 or hi / lo > config.mask_area_flag_ratio:
                _flag(
                    flags,
                    config,
                    episode.episode_id,
                    f"region mask area jumped {prev_area} -> {area} at frame {i}",
                )
        prev_area = area

        request = InpaintRequest(
            image=frame.image,
            mask=target,
            prompt=job.triple.inpaint_prompt,
            seed=derive_seed(job.seed, episode.episode_id, i),
        )
        try:
            edited = inpaint_cascade(backends.inpaint, request, config.cascade)
        except BackendError as exc:
            raise EpisodeSkipped(
                episode.episode_id, f"backend failure: {exc}", frame_index=i
            ) from exc

        report = verify_locality(frame.image, edited, target, config.locality_tolerance)
        if not report.ok:
            _flag(
                flags,
                config,
                episode.episode_id,
                f"locality violation at frame {i}: pixel {report.worst_pixel} "
                f"changed by {report.max_delta}",
            )
        out_frames.append(Frame(image=edited, action=np.array(frame.action, copy=True)))

    instruction = job.spec.new_instruction or episode.instruction
    augmented = Episode(
        episode_id=f"{episode.episode_id}a",
        instruction=instruction,
        frames=out_frames,
        provenance=Provenance.augmented(episode.episode_id, job.triple, job.seed),
    )
    return augmented, flags


def plan_jobs(
    dataset: Dataset,
    spec: AugmentationSpec,
    triple: PromptTriple,
    thresholds: ThresholdConfig,
    seed: int,
    mode: str = MODE_REPLACE_TARGET,
    distractor_box: tuple[int, int] | None = None,
) -> list[AugmentationJob]:
    """One job per episode whose instruction matches the spec's source task,
    so a fully successful run yields as many augmented episodes as sources."""
    jobs = []
    for ep in sorted(dataset.episodes, key=lambda e: e.episode_id):
        if ep.instruction == spec.source_task:
            jobs.append(
                AugmentationJob(
                    episode_id=ep.episode_id,
                    spec=spec,
                    triple=triple,
                    thresholds=thresholds,
                    seed=seed,
                    mode=mode,
                    distractor_box=distractor_box,
                )
            )
    return jobs


def augment_dataset(
    dataset: Dataset,
    jobs: list[AugmentationJob],
    backends: Backends,
    config: PipelineConfig | None = None,
    name: str | None = None,
) -> tuple[Dataset, list[SkipRecord], dict[str, list[str]]]:
    """Run every job; returns (augmented dataset, skip report, flags by episode)."""
    config = config or PipelineConfig()
    by_id = {ep.episode_id: ep for ep in dataset.episodes}

    def run(job: AugmentationJob):
        episode = by_id.get(job.episode_id)
        if episode is None:
            return job.episode_id, None, SkipRecord(job.episode_id, "episode not found"), []
        try:
            augmented, flags = augment_episode(episode, job, backends, config)
            return job.episode_id, augmented, None, flags
        except EpisodeSkipped as skip:
            record = SkipRecord(
                skip.episode_id, skip.cause, skip.frame_index, skip.best_score
            )
            return job.episode_id, None, record, []

    ordered_jobs = sorted(jobs, key=lambda j: j.episode_id)
    if config.parallelism == 1:
        results = [run(job) for job in ordered_jobs]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(run, ordered_jobs))

    results.sort(key=lambda item: item[0])
    episodes = [aug for _, aug, _, _ in results if aug is not None]
    skips = [skip for _, _, skip, _ in results if skip is not None]
    flags = {src: fl for src, aug, _, fl in results if aug is not None and fl}

    augmented = Dataset(
        name=name or f"{dataset.name}-augmented",
        action_dim=dataset.action_dim,
        image_size=dataset.image_size,
        episodes=episodes,
    )
    return augmented, skips, flags


def write_skip_report(path: Path, skips: list[SkipRecord]) -> None:
    payload = [s.to_json() for s in sorted(skips, key=lambda s: s.episode_id)]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_flags(path: Path, flags: dict[str, list[str]]) -> None:
    payload = {eid: flags[eid] for eid in sorted(flags)}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# -- mixing -------------------------------------------------------------------

@dataclass(frozen=True)
class MixManifest:
    original_name: str
    augmented_name: str
    weights: tuple[float, float]
    seed: int
    epoch_order: tuple[tuple[str, str], ...]

    def to_json(self) -> dict:
        return {
            "original": self.original_name,
            "augmented": self.augmented_name,
            "weights": {"original": self.weights[0], "augmented": self.weights[1]},
            "seed": self.seed,
            "epoch_order": [list(pair) for pair in self.epoch_order],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MixManifest":
        return cls(
            original_name=obj["original"],
            augmented_name=obj["augmented"],
            weights=(obj["weights"]["original"], obj["weights"]["augmented"]),
            seed=obj["seed"],
            epoch_order=tuple((tag, eid) for tag, eid in obj["epoch_order"]),
        )


def _shuffled(ids: list[str], seed: int) -> list[str]:
    order = np.random.default_rng(seed).permutation(len(ids))
    return [ids[i] for i in order]


def _cycled_stream(ids: list[str], side: str, seed: int, total: int) -> list[str]:
    # The smaller side cycles until the larger side is exhausted; each cycle
    # reshuffles with a seed derived from the cycle index.
    out: list[str] = []
    cycle = 0
    while len(out) < total:
        out.extend(_shuffled(ids, derive_seed(seed, side, cycle)))
        cycle += 1
    return out[:total]


def mix_datasets(original: Dataset, augmented: Dataset, seed: int) -> MixManifest:
    """Deterministic alternating epoch order with equal 0.5/0.5 weights."""
    orig_ids = sorted(ep.episode_id for ep in original.episodes)
    aug_ids = sorted(ep.episode_id for ep in augmented.episodes)
    if not orig_ids:
        raise CannotMixError("original dataset is empty")
    if not aug_ids:
        raise CannotMixError("augmented dataset is empty")

    total = max(len(orig_ids), len(aug_ids))
    orig_stream = _cycled_stream(orig_ids, "original", seed, total)
    aug_stream = _cycled_stream(aug_ids, "augmented", seed, total)

    order: list[tuple[str, str]] = []
    for o, a in zip(orig_stream, aug_stream):
        order.append(("orig", o))
        order.append(("aug", a))
    return MixManifest(
        original_name=original.name,
        augmented_name=augmented.name,
        weights=(0.5, 0.5),
        seed=seed,
        epoch_order=tuple(order),
    )


def write_mix_manifest(path: Path, manifest: MixManifest) -> None:
    Path(path).write_text(
        json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8"
    )
