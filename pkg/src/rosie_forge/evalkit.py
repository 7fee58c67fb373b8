"""Success-detection evaluation: F1 at a fixed threshold over in-distribution
and OOD splits, rollout success tabulation, and a desk-scale toy detector.

The toy detector is a directional analogue of the fine-tuned success
detector protocol: nearest-centroid over per-frame color histograms, scored
by a logistic of the signed centroid-distance margin. It reproduces the
augment -> train -> split-F1 shape of the study, not any published number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLIT_IN_DISTRIBUTION = "in_distribution"
SPLIT_OOD = "ood"
SPLITS = (SPLIT_IN_DISTRIBUTION, SPLIT_OOD)

LABEL_SUCCESS = "success"
LABEL_FAILURE = "failure"

DEFAULT_THRESHOLD = 0.5
HISTOGRAM_BINS = 32


class MissingSplitError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionItem:
    score: float
    label: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.label not in (LABEL_SUCCESS, LABEL_FAILURE):
            raise ValueError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class PredictionSet:
    items: tuple[PredictionItem, ...]
    split: str

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        object.__setattr__(self, "items", tuple(self.items))


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class F1Result:
    precision: float
    recall: float
    f1: float
    confusion: Confusion


def f1(predictions: PredictionSet, threshold: float = DEFAULT_THRESHOLD) -> F1Result:
    """Classify score >= threshold as predicted success; F1 = 2PR/(P+R).

    The degenerate case P + R = 0 is defined as F1 = 0.
    """
    tp = fp = fn = tn = 0
    for item in predictions.items:
        predicted_success = item.score >= threshold
        actual_success = item.label == LABEL_SUCCESS
        if predicted_success and actual_success:
            tp += 1
        elif predicted_success:
            fp += 1
        elif actual_success:
            fn += 1
        else:
            tn += 1
    return f1_from_confusion(Confusion(tp, fp, fn, tn))


def f1_from_confusion(confusion: Confusion) -> F1Result:
    tp, fp, fn = confusion.tp, confusion.fp, confusion.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    score = (
        2 * precision * recall / (precision + recall) if precision + recall else 0.0
    )
    return F1Result(precision, recall, score, confusion)


@dataclass
class EvalReport:
    methods: list[str]
    overall: dict[str, F1Result]
    per_split: dict[str, dict[str, F1Result]]
    overall_split_average: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        def cell(result: F1Result) -> dict:
            return {
                "f1": result.f1,
                "precision": result.precision,
                "recall": result.recall,
                "confusion": result.confusion.to_json(),
            }

        return {
            "methods": self.methods,
            "overall": {m: cell(self.overall[m]) for m in self.methods},
            "overall_split_average": {
                m: self.overall_split_average[m] for m in self.methods
            },
            "splits": {
                split: {m: cell(self.per_split[split][m]) for m in self.methods}
                for split in SPLITS
            },
        }

    def render_text(self) -> str:
        rows = [
            ("Overall", {m: self.overall[m].f1 for m in self.methods}),
            (
                "In-Distribution set",
                {m: self.per_split[SPLIT_IN_DISTRIBUTION][m].f1 for m in self.methods},
            ),
            ("OOD set", {m: self.per_split[SPLIT_OOD][m].f1 for m in self.methods}),
        ]
        label_width = max(len(label) for label, _ in rows)
        col_widths = [max(len(m), 4) for m in self.methods]
        header = " ".join(
            [" " * label_width] + [m.rjust(w) for m, w in zip(self.methods, col_widths)]
        )
        lines = [header]
        for label, cells in rows:
            line = " ".join(
                [label.ljust(label_width)]
                + [f"{cells[m]:.2f}".rjust(w) for m, w in zip(self.methods, col_widths)]
            )
            lines.append(line)
        return "\n".join(lines)


def evaluate_splits(sets_by_method: dict[str, list[PredictionSet]], threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Per-method F1 for each split plus a pooled-confusion Overall row.

    Overall is computed from the summed confusion counts; the split-averaged
    alternative is also carried in the machine-readable report since either
    reading of an "overall" row is defensible.
    """
    methods = list(sets_by_method)
    per_split: dict[str, dict[str, F1Result]] = {s: {} for s in SPLITS}
    overall: dict[str, F1Result] = {}
    averaged: dict[str, float] = {}
    for method, sets in sets_by_method.items():
        by_split = {s.split: s for s in sets}
        for split in SPLITS:
            if split not in by_split:
                raise MissingSplitError(f"method {method!r} is missing split {split!r}")
            per_split[split][method] = f1(by_split[split], threshold)
        pooled = (
            per_split[SPLIT_IN_DISTRIBUTION][method].confusion
            + per_split[SPLIT_OOD][method].confusion
        )
        overall[method] = f1_from_confusion(pooled)
        averaged[method] = (
            per_split[SPLIT_IN_DISTRIBUTION][method].f1
            + per_split[SPLIT_OOD][method].f1
        ) / 2.0
    return EvalReport(methods, overall, per_split, averaged)


def load_prediction_sets(path: Path) -> dict[str, list[PredictionSet]]:
    """File form: either a list of {score, label, split} items (one method)
    or {"methods": {name: [items]}}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(raw, list):
        raw = {"methods": {"default": raw}}
    out: dict[str, list[PredictionSet]] = {}
    for method, items in raw["methods"].items():
        by_split: dict[str, list[PredictionItem]] = {}
        for item in items:
            by_split.setdefault(item["split"], []).append(
                PredictionItem(score=float(item["score"]), label=item["label"])
            )
        out[method] = [
            PredictionSet(tuple(items), split) for split, items in by_split.items()
        ]
    return out


# -- rollout tabulation --------------------------------------------------------

@dataclass
class SuccessTable:
    tasks: dict[str, tuple[int, int, float | None]]  # task -> (n, successes, rate)
    families: dict[str, float | None]

    def render_text(self) -> str:
        width = max((len(t) for t in list(self.tasks) + list(self.families)), default=4)
        lines = []
        for family, rate in self.families.items():
            shown = "-" if rate is None else f"{rate:.2f}"
            lines.append(f"{family.ljust(width)}  {shown}")
            for task, (n, wins, task_rate) in self.tasks.items():
                if self._family_of(task) != family:
                    continue
                shown = "-" if task_rate is None else f"{task_rate:.2f}"
                lines.append(f"  {task.ljust(width - 2)}  {shown}  ({wins}/{n})")
        return "\n".join(lines)

    def _family_of(self, task: str) -> str:
        return self._families_map.get(task, task)

    _families_map: dict[str, str] = field(default_factory=dict)


def success_rate_table(
    rollouts: list[tuple[str, bool]],
    families: dict[str, str] | None = None,
) -> SuccessTable:
    """Per-task success fractions plus unweighted family means.

    Tasks declared in ``families`` but absent from the rollouts are reported
    with an absent rate rather than zero.
    """
    families = families or {}
    counts: dict[str, list[int]] = {}
    for task, outcome in rollouts:
        entry = counts.setdefault(task, [0, 0])
        entry[0] += 1
        entry[1] += int(bool(outcome))

    tasks: dict[str, tuple[int, int, float | None]] = {}
    for task in sorted(set(counts) | set(families)):
        if task in counts:
            n, wins = counts[task]
            tasks[task] = (n, wins, wins / n)
        else:
            tasks[task] = (0, 0, None)

    family_rates: dict[str, float | None] = {}
    for task, (_, _, rate) in tasks.items():
        family = families.get(task, task)
        family_rates.setdefault(family, None)
    for family in family_rates:
        member_rates = [
            rate
            for task, (_, _, rate) in tasks.items()
            if families.get(task, task) == family and rate is not None
        ]
        family_rates[family] = (
            sum(member_rates) / len(member_rates) if member_rates else None
        )

    table = SuccessTable(tasks=tasks, families=family_rates)
    table._families_map = dict(families)
    return table


# -- toy success detector -------------------------------------------------------

@dataclass(frozen=True)
class ToyDetector:
    success_centroid: np.ndarray
    failure_centroid: np.ndarray
    clutter_augmented: bool


def color_histogram(image: np.ndarray, bins: int = HISTOGRAM_BINS) -> np.ndarray:
    """Concatenated per-channel histograms, normalized by pixel count."""
    pixels = image.reshape(-1, 3)
    feats = [
        np.bincount(pixels[:, c] // (256 // bins), minlength=bins).astype(np.float64)
        for c in range(3)
    ]
    return np.concatenate(feats) / pixels.shape[0]


def toy_detector_train(
    samples: list[tuple[np.ndarray, bool]], clutter_augmented: bool = False
) -> ToyDetector:
    """Nearest-centroid detector over labeled scene images."""
    success = [color_histogram(img) for img, ok in samples if ok]
    failure = [color_histogram(img) for img, ok in samples if not ok]
    if not success or not failure:
        raise ValueError("training data must contain both classes")
    return ToyDetector(
        success_centroid=np.mean(success, axis=0),
        failure_centroid=np.mean(failure, axis=0),
        clutter_augmented=clutter_augmented,
    )


def toy_detector_score(detector: ToyDetector, image: np.ndarray) -> float:
    """Logistic of the signed centroid-distance margin (unit scale)."""
    feats = color_histogram(image)
    d_success = float(np.linalg.norm(feats - detector.success_centroid))
    d_failure = float(np.linalg.norm(feats - detector.failure_centroid))
    margin = d_failure - d_success
    return 1.0 / (1.0 + math.exp(-margin))


def toy_detector_eval(
    detector: ToyDetector, samples: list[tuple[np.ndarray, bool]], split: str
) -> PredictionSet:
    items = tuple(
        PredictionItem(
            score=toy_detector_score(detector, img),
            label=LABEL_SUCCESS if ok else LABEL_FAILURE,
        )
        for img, ok in samples
    )
    return PredictionSet(items, split)


# -- synthetic drawer benchmark ---------------------------------------------

_DRAWER_PLACEMENT = (64, 96, 128, 96)
_CLUTTER_NOUNS = ("coke can", "chip bag", "box of crackers")


def _drawer_scene(rng: np.random.Generator, success: bool, clutter: bool):
    """One labeled drawer scene: success means the bag sits inside the drawer.

    Clutter adds distractor sprites inside the drawer, emulating what the
    augmentation pipeline inserts; labels are unchanged by clutter. The arm
    stays in a fixed-height strip above the drawer so its pixel count is
    constant and never occludes the bag or the drawer.
    """
    from .scene import ArmPose, SceneObject, SceneSpec, generate_scene

    dx, dy, dw, dh = _DRAWER_PLACEMENT
    bag_w = int(rng.integers(28, 41))
    bag_h = int(rng.integers(22, 33))
    if success:
        bx = int(rng.integers(dx + 4, dx + dw - bag_w - 4))
        by = int(rng.integers(dy + 4, dy + dh - bag_h - 4))
    else:
        bx = int(rng.integers(4, 256 - bag_w - 4))
        by = int(rng.integers(46, dy - bag_h - 4))  # on the table above the drawer

    objects = [
        SceneObject(name="drawer", shape="sprite", placement=_DRAWER_PLACEMENT),
        SceneObject(name="green chip bag", shape="sprite", placement=(bx, by, bag_w, bag_h)),
    ]
    if clutter:
        for k in range(int(rng.integers(2, 4))):
            noun = _CLUTTER_NOUNS[int(rng.integers(0, len(_CLUTTER_NOUNS)))]
            cw = int(rng.integers(18, 30))
            ch = int(rng.integers(14, 24))
            cx = int(rng.integers(dx + 2, dx + dw - cw - 2))
            cy = int(rng.integers(dy + 2, dy + dh - ch - 2))
            objects.append(
                SceneObject(name=f"{noun} {k}", shape=sprite_shape(noun), placement=(cx, cy, cw, ch), color=sprite_color(noun))
            )
    arm_tip = (int(rng.integers(40, 216)), 40)
    spec = SceneSpec(
        table_region=(0, 0, 256, 256),
        objects=tuple(objects),
        arm=ArmPose(arm_tip),
    )
    image, _ = generate_scene(spec, 0)
    return image, success


def sprite_color(noun: str) -> tuple[int, int, int]:
    from .scene import sprite_for

    return sprite_for(noun).color


def sprite_shape(noun: str) -> str:
    from .scene import sprite_for

    return sprite_for(noun).shape


def build_success_benchmark(
    seed: int, n_train: int = 40, n_eval: int = 32
) -> dict[str, list[tuple[np.ndarray, bool]]]:
    """Fixed-seed train and eval splits for the detector study.

    train_plain holds clean scenes only; train_augmented adds an equal number
    of clutter-augmented scenes. eval_in_distribution is clean, eval_ood is
    cluttered; both are class-balanced.
    """
    from .pipeline import derive_seed

    def batch(tag: str, n: int, clutter: bool) -> list[tuple[np.ndarray, bool]]:
        rng = np.random.default_rng(derive_seed(seed, "success-benchmark", tag))
        return [_drawer_scene(rng, success=(i % 2 == 0), clutter=clutter) for i in range(n)]

    train_plain = batch("train-plain", n_train, clutter=False)
    train_clutter = batch("train-clutter", n_train, clutter=True)
    return {
        "train_plain": train_plain,
        "train_augmented": train_plain + train_clutter,
        "eval_in_distribution": batch("eval-id", n_eval, clutter=False),
        "eval_ood": batch("eval-ood", n_eval, clutter=True),
    }
