"""Command-line entry point: synth | segment | propose | augment | mix | eval | inspect.

Every subcommand is a batch operation on files; outputs are pure functions
of (inputs, config, seed), so reruns with identical inputs are idempotent.
Exit codes: 0 success, 1 validation error, 2 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import evalkit, pipeline, prompting, scene, segmentation, store
from .client import BackendError
from .config import ConfigError, RunConfig, load_run_config
from .inpainting import HttpInpaintBackend, MockInpaintBackend
from .masks import MaskError
from .scene import SceneError
from .segmentation import HttpDetectionBackend, MockDetectionBackend

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="run config JSON path")
    common.add_argument("--seed", type=int, default=None, help="global seed override")
    common.add_argument(
        "--mock-all", action="store_true", help="force every backend to its mock"
    )
    common.add_argument(
        "--parallelism", type=int, default=None, help="bound on concurrent episodes"
    )

    parser = argparse.ArgumentParser(
        prog="rosie-forge",
        description="Semantic augmentation pipeline for episodic robot datasets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--scene", type=Path, required=True, help="synth spec JSON")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")

    p = sub.add_parser("segment", parents=[common], help="dump detections for one frame")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--query", action="append", required=True, dest="queries")
    p.add_argument("--out", type=Path, required=True, help="detection dump JSON path")

    p = sub.add_parser("propose", parents=[common], help="propose a prompt triple")
    p.add_argument("--source-task")
    p.add_argument("--target-task")
    p.add_argument("--task", help="registry lookup by task name (bypasses the backend)")
    p.add_argument("--out", type=Path, default=None, help="optional JSON output path")

    p = sub.add_parser("augment", parents=[common], help="augment a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--job", type=Path, required=True, help="augmentation job JSON")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")

    p = sub.add_parser("mix", parents=[common], help="mix original and augmented datasets")
    p.add_argument("--original", type=Path, required=True)
    p.add_argument("--augmented", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="mix.json path")

    p = sub.add_parser("eval", parents=[common], help="evaluate success predictions")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="machine-readable report path")

    p = sub.add_parser("inspect", parents=[common], help="render an episode frame strip")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--source-dataset", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True, help="output PNG path")

    return parser


def _load_config(args) -> RunConfig:
    return load_run_config(
        args.config,
        mock_all=args.mock_all,
        seed=args.seed,
        parallelism=args.parallelism,
    )


def _detection_backend(config: RunConfig, dataset_dir: Path | None):
    slot = config.backends["detect"]
    if slot.mock:
        if dataset_dir is not None:
            return MockDetectionBackend.from_dataset_dir(
                dataset_dir, max_detections=config.max_detections
            )
        return MockDetectionBackend(max_detections=config.max_detections)
    return HttpDetectionBackend(
        slot.endpoint, retry=config.retry, max_detections=config.max_detections
    )


def _inpaint_backend(config: RunConfig):
    base, sr = config.backends["inpaint_base"], config.backends["inpaint_sr"]
    if base.mock != sr.mock:
        raise ConfigError("inpaint_base and inpaint_sr must both be mock or both remote")
    if base.mock:
        return MockInpaintBackend()
    return HttpInpaintBackend(base.endpoint, sr.endpoint, retry=config.retry)


def _completion_backend(config: RunConfig):
    slot = config.backends["complete"]
    if slot.mock:
        return prompting.RulePromptBackend(seed=config.seed)
    return prompting.HttpCompletionBackend(slot.endpoint, retry=config.retry)


# -- subcommands -----------------------------------------------------------

def _cmd_synth(args, config: RunConfig) -> int:
    raw = json.loads(args.scene.read_text(encoding="utf-8"))
    spec = scene.scene_spec_from_json(raw["scene"])
    entries = raw.get("episodes", [])
    if not entries:
        raise SceneError("synth spec declares no episodes")

    episodes = []
    truths_by_id = {}
    for idx, entry in enumerate(entries):
        task = scene.TaskSpec(
            verb=entry["verb"], target_object=entry["target_object"], scene=spec
        )
        episode_id = entry.get("id", f"ep_{idx:03d}")
        episode, truths = scene.generate_episode(
            task,
            int(entry["length"]),
            pipeline.derive_seed(config.seed, "synth", episode_id),
            episode_id=episode_id,
        )
        episodes.append(episode)
        truths_by_id[episode_id] = truths

    dataset = store.Dataset(
        name=raw.get("name", "synthetic"),
        action_dim=7,
        image_size=spec.image_size,
        episodes=episodes,
    )
    store.save_dataset(dataset, args.out)
    for episode_id, truths in truths_by_id.items():
        scene.save_ground_truth(args.out / "episodes" / episode_id, truths)
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return EXIT_OK


def _cmd_segment(args, config: RunConfig) -> int:
    dataset = store.load_dataset(args.dataset)
    episode = dataset.episode(args.episode)
    if not 0 <= args.frame < len(episode.frames):
        raise ValueError(f"frame {args.frame} out of range for episode {args.episode!r}")
    backend = _detection_backend(config, args.dataset)
    detections = segmentation.detect(backend, episode.frames[args.frame].image, args.queries)
    payload = {"detections": [segmentation.detection_to_wire(d) for d in detections]}
    args.out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(detections)} detections to {args.out}")
    return EXIT_OK


def _cmd_propose(args, config: RunConfig) -> int:
    if args.task:
        registry = prompting.load_prompt_registry(config.registry_path)
        if args.task not in registry:
            raise ValueError(f"task {args.task!r} not in the prompt registry")
        triple = registry[args.task]
    else:
        if not args.source_task or not args.target_task:
            raise ValueError("propose needs --task or both --source-task and --target-task")
        spec = prompting.AugmentationSpec(args.source_task, args.target_task)
        exemplars = prompting.load_exemplars(config.exemplars_path)
        triple = prompting.propose(_completion_backend(config), exemplars, spec)
    print(prompting.render_triple_block(triple))
    if args.out:
        args.out.write_text(json.dumps(triple.to_json(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_augment(args, config: RunConfig) -> int:
    job_raw = json.loads(args.job.read_text(encoding="utf-8"))
    dataset = store.load_dataset(args.dataset)

    families = segmentation.load_thresholds(config.thresholds_path)
    family = job_raw.get("task_family", "novel-object-pick")
    if family not in families:
        raise ValueError(f"unknown task family {family!r}; known: {sorted(families)}")
    thresholds = families[family]

    spec = prompting.AugmentationSpec(
        source_task=job_raw["source_task"],
        target_task=job_raw["target_task"],
        new_instruction=job_raw.get("new_instruction"),
    )
    if "triple" in job_raw:
        triple = prompting.PromptTriple.from_json(job_raw["triple"])
    else:
        registry = prompting.load_prompt_registry(config.registry_path)
        if spec.source_task in registry:
            triple = registry[spec.source_task]
        else:
            exemplars = prompting.load_exemplars(config.exemplars_path)
            triple = prompting.propose(_completion_backend(config), exemplars, spec)

    mode = job_raw.get("mode", pipeline.MODE_REPLACE_TARGET)
    box = tuple(job_raw.get("distractor_box", config.distractor_box))
    jobs = pipeline.plan_jobs(
        dataset,
        spec,
        triple,
        thresholds,
        seed=config.seed,
        mode=mode,
        distractor_box=box if mode == pipeline.MODE_ADD_DISTRACTOR else None,
    )
    if not jobs:
        raise ValueError(f"no episodes match source task {spec.source_task!r}")

    backends = pipeline.Backends(
        detection=_detection_backend(config, args.dataset),
        inpaint=_inpaint_backend(config),
    )
    pipe_config = pipeline.PipelineConfig(
        parallelism=config.parallelism,
        locality_tolerance=config.resolved_locality_tolerance(),
        flag_policy=config.flag_policy,
        batch_queries=config.batch_queries,
    )
    augmented, skips, flags = pipeline.augment_dataset(dataset, jobs, backends, pipe_config)
    if not augmented.episodes and skips:
        logger.warning("all %d jobs were skipped", len(skips))

    args.out.mkdir(parents=True, exist_ok=True)
    if augmented.episodes:
        store.save_dataset(augmented, args.out)
    pipeline.write_skip_report(args.out / "skips.json", skips)
    if flags:
        pipeline.write_flags(args.out / "flags.json", flags)
    print(
        f"augmented {len(augmented.episodes)}/{len(jobs)} episodes "
        f"({len(skips)} skipped) into {args.out}"
    )
    return EXIT_OK


def _cmd_mix(args, config: RunConfig) -> int:
    original = store.load_dataset(args.original)
    augmented = store.load_dataset(args.augmented)
    violations = store.validate_dataset(augmented, companion=original)
    if violations:
        raise store.DatasetValidationError(violations)
    manifest = pipeline.mix_datasets(original, augmented, config.seed)
    pipeline.write_mix_manifest(args.out, manifest)
    print(f"wrote epoch order of {len(manifest.epoch_order)} entries to {args.out}")
    return EXIT_OK


def _cmd_eval(args, config: RunConfig) -> int:
    sets_by_method = evalkit.load_prediction_sets(args.predictions)
    report = evalkit.evaluate_splits(sets_by_method)
    print(report.render_text())
    if args.out:
        args.out.write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def _frame_strip(episodes: list[store.Episode], separator: int = 2) -> np.ndarray:
    h, w = episodes[0].frames[0].image.shape[:2]
    longest = max(len(ep.frames) for ep in episodes)
    rows = len(episodes)
    canvas = np.full(
        (rows * h + (rows - 1) * separator, longest * w + (longest - 1) * separator, 3),
        255,
        dtype=np.uint8,
    )
    for r, ep in enumerate(episodes):
        y = r * (h + separator)
        for i, frame in enumerate(ep.frames):
            x = i * (w + separator)
            canvas[y : y + h, x : x + w] = frame.image
    return canvas


def _cmd_inspect(args, config: RunConfig) -> int:
    dataset = store.load_dataset(args.dataset)
    episode = dataset.episode(args.episode)
    rows = [episode]
    prov = episode.provenance
    if prov.origin == store.ORIGIN_AUGMENTED and prov.source_episode_id:
        source_dataset = dataset
        if args.source_dataset is not None:
            source_dataset = store.load_dataset(args.source_dataset)
        try:
            rows.insert(0, source_dataset.episode(prov.source_episode_id))
        except KeyError:
            logger.warning(
                "source episode '%s' not found; rendering augmented row only",
                prov.source_episode_id,
            )
    strip = _frame_strip(rows)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(strip, mode="RGB").save(args.out)
    print(f"wrote {strip.shape[1]}x{strip.shape[0]} strip to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "segment": _cmd_segment,
    "propose": _cmd_propose,
    "augment": _cmd_augment,
    "mix": _cmd_mix,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        return _COMMANDS[args.command](args, config)
    except BackendError as exc:
        print(f"error [{_module_of(exc)}] {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (
        ConfigError,
        SceneError,
        MaskError,
        store.StoreError,
        pipeline.CannotMixError,
        evalkit.MissingSplitError,
        prompting.PromptParseError,
        prompting.UnmatchedTemplateError,
        ValueError,
        KeyError,
        FileNotFoundError,
    ) as exc:
        print(f"error [{_module_of(exc)}] {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def _module_of(exc: Exception) -> str:
    module = type(exc).__module__
    return module.rsplit(".", 1)[-1] if module else "error"


if __name__ == "__main__":
    sys.exit(main())
