"""Two-stage text-guided inpainting: cascade client, offline mock, locality checks.

The cascade issues exactly two backend calls per frame: a base edit on the
image and mask downsampled to the base resolution (area-average image,
any-hit mask, so no masked region is lost), then a super-resolution pass
conditioned on the full-resolution image, mask, and the base output.

The mock backend stamps the flat-colored sprite of the prompt's object noun
into the mask's bounding box, clipped to mask=1 pixels. The stamp uses the
same sprite table as the scene world, so mock detection can re-find the
inserted object, and every mask=0 pixel is byte-identical to the input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .client import MalformedResponseError, RetryPolicy, post_json
from .masks import Mask, rle_encode, tight_bbox
from .scene import SPRITES, sprite_for
from .segmentation import image_from_png_b64, image_to_png_b64


class DimensionMismatchError(MalformedResponseError):
    """Backend reply has the wrong image dimensions (non-retryable)."""


@dataclass(frozen=True)
class InpaintRequest:
    image: np.ndarray
    mask: Mask
    prompt: str
    seed: int

    def __post_init__(self) -> None:
        if self.image.shape[:2] != self.mask.size:
            raise ValueError(
                f"mask size {self.mask.size} does not match image {self.image.shape[:2]}"
            )
        if not self.prompt:
            raise ValueError("inpainting prompt must be nonempty")


@dataclass(frozen=True)
class CascadeConfig:
    base_resolution: int = 64
    sr_resolution: int = 256

    def __post_init__(self) -> None:
        if self.sr_resolution % self.base_resolution != 0:
            raise ValueError(
                f"sr resolution {self.sr_resolution} is not a multiple of "
                f"base resolution {self.base_resolution}"
            )

    @property
    def factor(self) -> int:
        return self.sr_resolution // self.base_resolution


@dataclass(frozen=True)
class LocalityReport:
    ok: bool
    worst_pixel: tuple[int, int] | None
    max_delta: int


def downsample_image(image: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsampling by an integer factor."""
    h, w = image.shape[:2]
    blocks = image.reshape(h // factor, factor, w // factor, factor, 3)
    means = blocks.astype(np.float64).mean(axis=(1, 3))
    return np.round(means).astype(np.uint8)


def downsample_mask(mask: Mask, factor: int) -> Mask:
    """Any-hit downsampling: a block with any set bit maps to a set bit."""
    h, w = mask.size
    blocks = mask.bits.reshape(h // factor, factor, w // factor, factor)
    return Mask(blocks.any(axis=(1, 3)))


def _noun_of_prompt(prompt: str) -> str:
    """Longest sprite-vocabulary phrase mentioned in the prompt, else the
    whole prompt (hashed to a stable color downstream)."""
    lowered = prompt.lower()
    best = None
    for noun in SPRITES:
        if re.search(rf"\b{re.escape(noun)}\b", lowered):
            if best is None or len(noun) > len(best):
                best = noun
    return best if best is not None else prompt


def mock_inpaint(image: np.ndarray, mask: Mask, prompt: str, seed: int) -> np.ndarray:
    """Offline inpainting stand-in with exact locality.

    Pure function of (image, mask, prompt, seed); the seed is accepted for
    interface parity but the stamp is fully determined by the prompt noun so
    the same noun always renders the same appearance.
    """
    if image.shape[:2] != mask.size:
        raise ValueError(f"mask size {mask.size} does not match image {image.shape[:2]}")
    out = np.array(image, dtype=np.uint8, copy=True)
    if mask.is_empty():
        return out
    sprite = sprite_for(_noun_of_prompt(prompt))
    x, y, w, h = tight_bbox(mask)
    stamp = np.zeros(mask.size, dtype=bool)
    if sprite.shape == "ellipse":
        cy, cx = y + (h - 1) / 2.0, x + (w - 1) / 2.0
        ry, rx = max(h / 2.0, 0.5), max(w / 2.0, 0.5)
        yy, xx = np.ogrid[: mask.size[0], : mask.size[1]]
        stamp = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    else:
        stamp[y : y + h, x : x + w] = True
    stamp &= mask.bits
    out[stamp] = sprite.color
    return out


class MockInpaintBackend:
    """Base and SR stages backed by :func:`mock_inpaint`."""

    def base(self, image: np.ndarray, mask: Mask, prompt: str, seed: int) -> np.ndarray:
        return mock_inpaint(image, mask, prompt, seed)

    def sr(
        self,
        image: np.ndarray,
        low_res: np.ndarray,
        mask: Mask,
        prompt: str,
        seed: int,
    ) -> np.ndarray:
        # The mock renders the full-resolution edit directly; the base output
        # only fixes what a real cascade would be conditioned on.
        return mock_inpaint(image, mask, prompt, seed)


class HttpInpaintBackend:
    """Client for the remote cascade protocol (/v1/inpaint/base, /v1/inpaint/sr)."""

    def __init__(self, base_endpoint: str, sr_endpoint: str, retry: RetryPolicy | None = None):
        self.base_endpoint = base_endpoint.rstrip("/")
        self.sr_endpoint = sr_endpoint.rstrip("/")
        self.retry = retry or RetryPolicy()

    def base(self, image: np.ndarray, mask: Mask, prompt: str, seed: int) -> np.ndarray:
        payload = {
            "image_png_b64": image_to_png_b64(image),
            "mask_rle": rle_encode(mask).to_json(),
            "prompt": prompt,
            "seed": seed,
        }
        reply = post_json(f"{self.base_endpoint}/v1/inpaint/base", payload, self.retry)
        return _decode_reply_image(reply)

    def sr(
        self,
        image: np.ndarray,
        low_res: np.ndarray,
        mask: Mask,
        prompt: str,
        seed: int,
    ) -> np.ndarray:
        payload = {
            "image_png_b64": image_to_png_b64(image),
            "low_res_png_b64": image_to_png_b64(low_res),
            "mask_rle": rle_encode(mask).to_json(),
            "prompt": prompt,
            "seed": seed,
        }
        reply = post_json(f"{self.sr_endpoint}/v1/inpaint/sr", payload, self.retry)
        return _decode_reply_image(reply)


def _decode_reply_image(reply: dict) -> np.ndarray:
    if "image_png_b64" not in reply:
        raise MalformedResponseError("inpaint reply lacks image_png_b64", payload=reply)
    return image_from_png_b64(reply["image_png_b64"])


def inpaint_cascade(backend, request: InpaintRequest, config: CascadeConfig) -> np.ndarray:
    """Run the two-stage edit; deterministic given a deterministic backend."""
    sr_size = (config.sr_resolution, config.sr_resolution, 3)
    if request.image.shape != sr_size:
        raise ValueError(
            f"cascade input must be {sr_size}, got {request.image.shape}"
        )
    low_image = downsample_image(request.image, config.factor)
    low_mask = downsample_mask(request.mask, config.factor)

    base_out = backend.base(low_image, low_mask, request.prompt, request.seed)
    base_size = (config.base_resolution, config.base_resolution, 3)
    if tuple(base_out.shape) != base_size:
        raise DimensionMismatchError(
            f"base reply has shape {base_out.shape}, expected {base_size}"
        )

    sr_out = backend.sr(request.image, base_out, request.mask, request.prompt, request.seed)
    if tuple(sr_out.shape) != sr_size:
        raise DimensionMismatchError(
            f"sr reply has shape {sr_out.shape}, expected {sr_size}"
        )
    return sr_out


def verify_locality(
    before: np.ndarray, after: np.ndarray, mask: Mask, tolerance: int = 0
) -> LocalityReport:
    """True iff every mask=0 pixel differs by at most ``tolerance`` per channel.

    Tolerance 0 is exact (mock backends); remote diffusion backends may
    perturb unmasked pixels slightly, so they default to a small nonzero
    tolerance at the pipeline level.
    """
    if before.shape != after.shape or before.shape[:2] != mask.size:
        raise ValueError("before/after/mask sizes must match")
    outside = ~mask.bits
    if not outside.any():
        return LocalityReport(True, None, 0)
    delta = np.abs(before.astype(np.int16) - after.astype(np.int16)).max(axis=-1)
    delta[mask.bits] = 0
    max_delta = int(delta.max())
    if max_delta == 0:
        return LocalityReport(True, None, 0)
    flat = int(np.argmax(delta))
    worst = (flat // delta.shape[1], flat % delta.shape[1])
    return LocalityReport(max_delta <= tolerance, worst, max_delta)
