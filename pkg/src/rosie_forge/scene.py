"""Deterministic procedural tabletop world with exact ground-truth masks.

Scenes are flat-colored layers: the whole canvas is table surface, objects
are drawn back-to-front in list order, and an optional gripper-arm overlay is
drawn topmost. Ground truth records, per object, the full un-occluded shape
mask, the visible mask after layering, and the visibility fraction
(visible pixels / full-shape pixels). This module is an oracle for the
detection and inpainting mocks, not a robot simulator.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .masks import Mask, RLE, rle_decode, rle_encode

DEFAULT_IMAGE_SIZE = (256, 256)

TABLE_COLOR = (110, 104, 96)
ARM_COLOR = (70, 70, 74)

# Arm overlay geometry: a fixed rectilinear polygon (shaft + two gripper
# fingers) translated along the episode script. The tip y is the lowest
# occupied row, so the arm first overlaps a target exactly when
# tip_y >= target top row.
_ARM_SHAFT_HALF = 7
_FINGER_LEN = 8
_FINGER_W = 4
_FINGER_INNER = 4  # finger columns are tx +/- [inner, inner + w - 1]

_RECT = "rectangle"
_ELLIPSE = "ellipse"
_SPRITE = "sprite"
_SHAPES = (_RECT, _ELLIPSE, _SPRITE)


@dataclass(frozen=True)
class Sprite:
    shape: str
    color: tuple[int, int, int]


# Recurring tabletop nouns rendered as distinct flat-colored shapes so that
# instructions can be reused verbatim in closed-loop tests. Colors are unique
# and distinct from the table/arm colors.
SPRITES: dict[str, Sprite] = {
    "coke can": Sprite(_ELLIPSE, (200, 16, 24)),
    "pepsi can": Sprite(_ELLIPSE, (16, 48, 160)),
    "green chip bag": Sprite(_RECT, (40, 168, 72)),
    "green rice chip bag": Sprite(_RECT, (56, 152, 96)),
    "blue microfiber cloth": Sprite(_RECT, (64, 144, 224)),
    "drawer": Sprite(_RECT, (132, 92, 48)),
    "sink": Sprite(_RECT, (176, 184, 192)),
    "lunch box": Sprite(_RECT, (128, 64, 160)),
    "woven basket": Sprite(_ELLIPSE, (192, 144, 80)),
    "box of crackers": Sprite(_RECT, (224, 144, 32)),
    "chip bag": Sprite(_RECT, (168, 120, 24)),
    "orange": Sprite(_ELLIPSE, (240, 160, 16)),
}

_RESERVED_COLORS = {TABLE_COLOR, ARM_COLOR}


class SceneError(ValueError):
    """Invalid scene specification or task."""


def sprite_for(noun: str) -> Sprite:
    """Vocabulary sprite for a noun; unknown nouns get a stable hashed color."""
    known = SPRITES.get(noun)
    if known is not None:
        return known
    digest = hashlib.sha256(noun.encode("utf-8")).digest()
    color = (digest[0], digest[1], digest[2])
    if color in _RESERVED_COLORS or color in {s.color for s in SPRITES.values()}:
        color = (digest[0], digest[1], (digest[2] + 1) % 256)
    return Sprite(_RECT, color)


@dataclass(frozen=True)
class ArmPose:
    """Gripper tip position in pixel coordinates."""

    tip: tuple[int, int]


@dataclass(frozen=True)
class SceneObject:
    name: str
    shape: str
    placement: tuple[int, int, int, int]  # (x, y, w, h)
    color: tuple[int, int, int] | None = None

    def appearance(self) -> Sprite:
        if self.shape == _SPRITE:
            return sprite_for(self.name)
        if self.color is None:
            raise SceneError(f"object '{self.name}': shape {self.shape!r} needs a color")
        return Sprite(self.shape, self.color)


@dataclass(frozen=True)
class SceneSpec:
    table_region: tuple[int, int, int, int]
    objects: tuple[SceneObject, ...]
    arm: ArmPose | None = None
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE


@dataclass(frozen=True)
class ObjectTruth:
    mask: Mask          # full un-occluded shape
    visible: Mask       # pixels actually shown after layering
    visibility: float   # visible count / full-shape count


@dataclass(frozen=True)
class GroundTruth:
    objects: dict[str, ObjectTruth]
    arm_mask: Mask

    def table_mask(self) -> Mask:
        bits = ~self.arm_mask.bits.copy()
        for truth in self.objects.values():
            bits &= ~truth.visible.bits
        return Mask(bits)


@dataclass(frozen=True)
class TaskSpec:
    verb: str
    target_object: str
    scene: SceneSpec

    @property
    def instruction(self) -> str:
        return f"{self.verb} {self.target_object}"


def _validate_spec(spec: SceneSpec) -> None:
    h, w = spec.image_size
    names = [o.name for o in spec.objects]
    if len(set(names)) != len(names):
        raise SceneError(f"duplicate object names in scene: {sorted(names)}")
    tx, ty, tw, th = spec.table_region
    if tx < 0 or ty < 0 or tw < 1 or th < 1 or tx + tw > w or ty + th > h:
        raise SceneError(f"table region {spec.table_region} outside {w}x{h} image")
    for obj in spec.objects:
        x, y, ow, oh = obj.placement
        if obj.shape not in _SHAPES:
            raise SceneError(f"object '{obj.name}': unknown shape {obj.shape!r}")
        if x < 0 or y < 0 or ow < 1 or oh < 1 or x + ow > w or y + oh > h:
            raise SceneError(
                f"object '{obj.name}' placement {obj.placement} outside {w}x{h} image"
            )
        obj.appearance()


def _raster_shape(obj: SceneObject, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    x, y, ow, oh = obj.placement
    bits = np.zeros((h, w), dtype=bool)
    shape = obj.appearance().shape
    if shape == _RECT:
        bits[y : y + oh, x : x + ow] = True
        return bits
    # Ellipse inscribed in the placement rectangle, evaluated at pixel centers.
    cy = y + (oh - 1) / 2.0
    cx = x + (ow - 1) / 2.0
    ry = max(oh / 2.0, 0.5)
    rx = max(ow / 2.0, 0.5)
    yy, xx = np.ogrid[:h, :w]
    bits = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return bits


def _raster_arm(pose: ArmPose, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    tx, ty = pose.tip
    bits = np.zeros((h, w), dtype=bool)

    def fill(x0: int, x1: int, y0: int, y1: int) -> None:
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(w - 1, x1), min(h - 1, y1)
        if x0 <= x1 and y0 <= y1:
            bits[y0 : y1 + 1, x0 : x1 + 1] = True

    fill(tx - _FINGER_INNER - _FINGER_W + 1, tx - _FINGER_INNER, ty - _FINGER_LEN + 1, ty)
    fill(tx + _FINGER_INNER, tx + _FINGER_INNER + _FINGER_W - 1, ty - _FINGER_LEN + 1, ty)
    fill(tx - _ARM_SHAFT_HALF, tx + _ARM_SHAFT_HALF, 0, ty - _FINGER_LEN)
    return bits


def generate_scene(spec: SceneSpec, seed: int) -> tuple[np.ndarray, GroundTruth]:
    """Render a scene and its exact ground truth; pure function of (spec, seed).

    Rendering itself is fully determined by the spec; the seed only enters
    through callers that script poses (see :func:`generate_episode`).
    """
    _validate_spec(spec)
    h, w = spec.image_size
    full_masks = [_raster_shape(obj, (h, w)) for obj in spec.objects]

    owner = np.full((h, w), -1, dtype=np.int32)  # -1 table, -2 arm, k = object k
    for k, bits in enumerate(full_masks):
        owner[bits] = k
    arm_bits = (
        _raster_arm(spec.arm, (h, w)) if spec.arm is not None else np.zeros((h, w), bool)
    )
    owner[arm_bits] = -2

    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = TABLE_COLOR
    objects: dict[str, ObjectTruth] = {}
    for k, obj in enumerate(spec.objects):
        visible = owner == k
        image[visible] = obj.appearance().color
        total = int(full_masks[k].sum())
        fraction = float(visible.sum()) / total if total else 0.0
        objects[obj.name] = ObjectTruth(Mask(full_masks[k]), Mask(visible), fraction)
    image[arm_bits] = ARM_COLOR
    return image, GroundTruth(objects, Mask(arm_bits))


def scripted_contact_frame(length: int) -> int | None:
    """Frame index at which the scripted arm first touches the target."""
    if length <= 1:
        return None
    return max(1, math.ceil(0.6 * (length - 1)))


def _tip_schedule(
    start_y: int, target_top: int, grasp_y: int, length: int, contact: int | None
) -> list[int]:
    ys: list[int] = []
    approach_y = max(start_y, target_top - 1)
    touch_y = max(target_top, min(target_top + 2, grasp_y))
    for i in range(length):
        if contact is None or i < contact:
            frac = i / (contact - 1) if contact is not None and contact > 1 else 0.0
            y = round(start_y + (approach_y - start_y) * frac)
            ys.append(min(y, target_top - 1))
        else:
            span = (length - 1) - contact
            frac = (i - contact) / span if span else 0.0
            y = round(touch_y + (grasp_y - touch_y) * frac)
            ys.append(max(y, target_top))
    return ys


def generate_episode(
    task: TaskSpec, length: int, seed: int, episode_id: str | None = None
):
    """Scripted grasp episode with per-frame ground truth.

    The arm descends vertically over the target: strictly above it before the
    scripted contact frame, overlapping from the contact frame onward.
    Actions are the scripted tip deltas (6 pose components, most zero) plus a
    gripper scalar that closes at contact. Deterministic in (task, length,
    seed). Returns (episode, ground_truths).
    """
    from .store import Episode, Frame, Provenance  # local import breaks the cycle

    if length < 1:
        raise SceneError(f"episode length must be >= 1, got {length}")
    names = {o.name for o in task.scene.objects}
    if task.target_object not in names:
        raise SceneError(f"target '{task.target_object}' absent from scene")

    target = next(o for o in task.scene.objects if o.name == task.target_object)
    x, y, w, h = target.placement
    cx = x + w // 2
    grasp_y = y + h // 2
    start_y = min(8 + seed % 9, y - 1)
    contact = scripted_contact_frame(length)
    tips = _tip_schedule(start_y, y, grasp_y, length, contact)

    frames: list[Frame] = []
    truths: list[GroundTruth] = []
    for i in range(length):
        scene_i = replace(task.scene, arm=ArmPose((cx, tips[i])))
        image, truth = generate_scene(scene_i, seed)
        dy = float(tips[i + 1] - tips[i]) if i + 1 < length else 0.0
        grip = 1.0 if contact is not None and i >= contact else 0.0
        action = np.array([0.0, dy, 0.0, 0.0, 0.0, 0.0, grip], dtype=np.float64)
        frames.append(Frame(image=image, action=action))
        truths.append(truth)

    if episode_id is None:
        episode_id = f"ep-{seed:08x}"
    episode = Episode(
        episode_id=episode_id,
        instruction=task.instruction,
        frames=frames,
        provenance=Provenance.collected(),
    )
    return episode, truths


# -- serialization ----------------------------------------------------------

def scene_spec_from_json(obj: dict) -> SceneSpec:
    try:
        objects = tuple(
            SceneObject(
                name=o["name"],
                shape=o.get("shape", _SPRITE),
                placement=tuple(o["placement"]),
                color=tuple(o["color"]) if o.get("color") is not None else None,
            )
            for o in obj.get("objects", [])
        )
        arm = ArmPose(tip=tuple(obj["arm"]["tip"])) if obj.get("arm") else None
        return SceneSpec(
            table_region=tuple(obj["table_region"]),
            objects=objects,
            arm=arm,
            image_size=tuple(obj.get("image_size", DEFAULT_IMAGE_SIZE)),
        )
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene spec: {exc}") from exc


def scene_spec_to_json(spec: SceneSpec) -> dict:
    out: dict = {
        "image_size": list(spec.image_size),
        "table_region": list(spec.table_region),
        "objects": [
            {
                "name": o.name,
                "shape": o.shape,
                "placement": list(o.placement),
                **({"color": list(o.color)} if o.color is not None else {}),
            }
            for o in spec.objects
        ],
    }
    if spec.arm is not None:
        out["arm"] = {"tip": list(spec.arm.tip)}
    return out


GROUND_TRUTH_FILENAME = "ground_truth.json"


def save_ground_truth(episode_dir: Path, truths: list[GroundTruth]) -> None:
    """Sidecar file with per-frame exact masks, used to seed mock detection."""
    payload = {
        "frames": [
            {
                "objects": {
                    name: {
                        "mask": rle_encode(t.mask).to_json(),
                        "visible": rle_encode(t.visible).to_json(),
                        "visibility": t.visibility,
                    }
                    for name, t in truth.objects.items()
                },
                "arm": rle_encode(truth.arm_mask).to_json(),
            }
            for truth in truths
        ]
    }
    path = Path(episode_dir) / GROUND_TRUTH_FILENAME
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_ground_truth(episode_dir: Path) -> list[GroundTruth] | None:
    path = Path(episode_dir) / GROUND_TRUTH_FILENAME
    if not path.exists():
        return None
    payload = json.loads(path.read_text(encoding="utf-8"))
    truths = []
    for frame in payload["frames"]:
        objects = {
            name: ObjectTruth(
                mask=rle_decode(RLE.from_json(entry["mask"])),
                visible=rle_decode(RLE.from_json(entry["visible"])),
                visibility=float(entry["visibility"]),
            )
            for name, entry in frame["objects"].items()
        }
        truths.append(GroundTruth(objects, rle_decode(RLE.from_json(frame["arm"]))))
    return truths
