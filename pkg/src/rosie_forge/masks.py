"""Binary image masks: run-length codec, set algebra, and seeded placement sampling.

The run-length wire format is row-major with alternating zero-run / one-run
counts; the first count is the (possibly zero) length of the leading zero
run, so an all-zero mask encodes to ``[H*W]`` and an all-one mask to
``[0, H*W]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_PLACEMENT_ATTEMPTS = 10_000


class MaskError(ValueError):
    """Size mismatch or malformed codec input."""


class PlacementExhausted(RuntimeError):
    """No valid rectangle placement found within the attempt budget."""


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary bitmap at image resolution, stored as a boolean grid."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise MaskError(f"mask bits must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "bits", arr.astype(bool, copy=False))

    @property
    def size(self) -> tuple[int, int]:
        """(H, W) of the originating image."""
        return self.bits.shape  # type: ignore[return-value]

    @classmethod
    def zeros(cls, size: tuple[int, int]) -> "Mask":
        return cls(np.zeros(size, dtype=bool))

    @classmethod
    def full(cls, size: tuple[int, int]) -> "Mask":
        return cls(np.ones(size, dtype=bool))

    @classmethod
    def rect(cls, size: tuple[int, int], x: int, y: int, w: int, h: int) -> "Mask":
        bits = np.zeros(size, dtype=bool)
        bits[y : y + h, x : x + w] = True
        return cls(bits)

    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def same_as(self, other: "Mask") -> bool:
        return self.size == other.size and bool(np.array_equal(self.bits, other.bits))

    def intersect(self, other: "Mask") -> "Mask":
        _require_same_size(self, other)
        return Mask(self.bits & other.bits)

    def union(self, other: "Mask") -> "Mask":
        _require_same_size(self, other)
        return Mask(self.bits | other.bits)


@dataclass(frozen=True)
class RLE:
    """Run-length encoded mask, the wire form used by all backend protocols."""

    size: tuple[int, int]
    counts: tuple[int, ...]

    def to_json(self) -> dict:
        return {"size": list(self.size), "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RLE":
        try:
            size = tuple(int(v) for v in obj["size"])
            counts = tuple(int(v) for v in obj["counts"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MaskError(f"malformed RLE object: {obj!r}") from exc
        if len(size) != 2:
            raise MaskError(f"RLE size must have two entries, got {size!r}")
        return cls((size[0], size[1]), counts)


def _require_same_size(*masks: Mask) -> None:
    sizes = {m.size for m in masks}
    if len(sizes) > 1:
        raise MaskError(f"mask sizes differ: {sorted(sizes)}")


def tight_bbox(mask: Mask) -> tuple[int, int, int, int]:
    """Tight (x, y, w, h) bounding box of the set bits; (0, 0, 0, 0) if empty."""
    ys, xs = np.nonzero(mask.bits)
    if ys.size == 0:
        return (0, 0, 0, 0)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def rle_encode(mask: Mask) -> RLE:
    flat = mask.bits.ravel(order="C")
    if flat.size == 0:
        return RLE(mask.size, (0,))
    changes = np.flatnonzero(np.diff(flat.view(np.int8))) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return RLE(mask.size, tuple(int(r) for r in runs))


def rle_decode(rle: RLE) -> Mask:
    h, w = rle.size
    total = sum(rle.counts)
    if any(c < 0 for c in rle.counts):
        raise MaskError(f"negative run count in {rle.counts!r}")
    if total != h * w:
        raise MaskError(f"run counts sum to {total}, expected {h * w} for size {rle.size}")
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return Mask(flat.reshape(h, w))


def subtract_passthrough(region: Mask, passthroughs: list[Mask]) -> Mask:
    """Region bits minus the union of all passthrough bits."""
    _require_same_size(region, *passthroughs)
    out = region.bits.copy()
    for p in passthroughs:
        out &= ~p.bits
    return Mask(out)


def sample_free_region(
    region: Mask,
    obstacles: list[Mask],
    box: tuple[int, int],
    seed: int,
) -> Mask:
    """Seeded rejection sampling of a w*h rectangle inside ``region``.

    Top-left candidates are drawn uniformly over all in-image positions; a
    candidate is accepted when the rectangle lies entirely inside ``region``
    and touches no obstacle. Deterministic in (inputs, seed).
    """
    _require_same_size(region, *obstacles)
    h_img, w_img = region.size
    w, h = box
    if w < 1 or h < 1 or w > w_img or h > h_img:
        raise MaskError(f"box {box} does not fit in image of size {region.size}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        x = int(rng.integers(0, w_img - w + 1))
        y = int(rng.integers(0, h_img - h + 1))
        window = region.bits[y : y + h, x : x + w]
        if not window.all():
            continue
        if any(ob.bits[y : y + h, x : x + w].any() for ob in obstacles):
            continue
        return Mask.rect(region.size, x, y, w, h)
    raise PlacementExhausted(
        f"no free {w}x{h} placement found in {MAX_PLACEMENT_ATTEMPTS} attempts"
    )
