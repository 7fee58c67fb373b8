from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rosie_forge.masks import (
    Mask,
    MaskError,
    PlacementExhausted,
    RLE,
    rle_decode,
    rle_encode,
    sample_free_region,
    subtract_passthrough,
    tight_bbox,
)

small_masks = arrays(np.bool_, st.tuples(st.integers(1, 8), st.integers(1, 8))).map(Mask)


# -- run-length codec ---------------------------------------------------------

def test_all_zero_mask_encodes_to_single_count():
    rle = rle_encode(Mask.zeros((4, 5)))
    assert rle.counts == (20,)


def test_all_one_mask_encodes_with_leading_zero_run():
    rle = rle_encode(Mask.full((4, 5)))
    assert rle.counts == (0, 20)


def test_decode_rejects_wrong_total():
    with pytest.raises(MaskError):
        rle_decode(RLE((2, 2), (3,)))


def test_decode_rejects_negative_counts():
    with pytest.raises(MaskError):
        rle_decode(RLE((2, 2), (-1, 5)))


def test_roundtrip_500_random_masks_bit_exact():
    rng = np.random.default_rng(0)
    for _ in range(500):
        h, w = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        mask = Mask(rng.random((h, w)) < rng.random())
        assert rle_decode(rle_encode(mask)).same_as(mask)


@given(small_masks)
def test_roundtrip_property(mask):
    assert rle_decode(rle_encode(mask)).same_as(mask)


@given(small_masks)
def test_encode_length_bounded_by_pixels_plus_one(mask):
    h, w = mask.size
    assert len(rle_encode(mask).counts) <= h * w + 1


# -- passthrough subtraction --------------------------------------------------

def _enumerate_subtract(region: Mask, passthroughs: list[Mask]) -> Mask:
    h, w = region.size
    out = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            keep = bool(region.bits[y, x])
            for p in passthroughs:
                if p.bits[y, x]:
                    keep = False
            out[y, x] = keep
    return Mask(out)


def test_empty_passthrough_list_is_identity():
    region = Mask.rect((6, 6), 1, 1, 3, 3)
    assert subtract_passthrough(region, []).same_as(region)


def test_full_cover_gives_all_zero():
    region = Mask.rect((6, 6), 1, 1, 3, 3)
    assert subtract_passthrough(region, [Mask.full((6, 6))]).is_empty()


def test_size_mismatch_rejected():
    with pytest.raises(MaskError):
        subtract_passthrough(Mask.zeros((4, 4)), [Mask.zeros((4, 5))])


def test_matches_pixel_enumeration_on_random_4x4_cases():
    rng = np.random.default_rng(1)
    for _ in range(200):
        region = Mask(rng.random((4, 4)) < 0.5)
        passthroughs = [Mask(rng.random((4, 4)) < 0.5) for _ in range(int(rng.integers(0, 4)))]
        got = subtract_passthrough(region, passthroughs)
        assert got.same_as(_enumerate_subtract(region, passthroughs))


@given(small_masks.flatmap(lambda r: st.tuples(st.just(r), st.lists(
    arrays(np.bool_, st.just(r.size)).map(Mask), max_size=3))))
def test_subtraction_algebra(pair):
    region, passthroughs = pair
    out = subtract_passthrough(region, passthroughs)
    assert not (out.bits & ~region.bits).any()  # subset of region
    for p in passthroughs:
        assert not (out.bits & p.bits).any()  # disjoint from each passthrough
    again = subtract_passthrough(out, passthroughs)
    assert again.same_as(out)  # idempotent


# -- free-region sampling -----------------------------------------------------

def _enumerate_placements(region, obstacles, box):
    h_img, w_img = region.size
    w, h = box
    feasible = []
    for y in range(h_img - h + 1):
        for x in range(w_img - w + 1):
            if not region.bits[y : y + h, x : x + w].all():
                continue
            if any(ob.bits[y : y + h, x : x + w].any() for ob in obstacles):
                continue
            feasible.append((x, y))
    return feasible


def test_unique_feasible_placement_is_found():
    region = Mask.rect((10, 10), 3, 4, 2, 2)
    got = sample_free_region(region, [], (2, 2), seed=0)
    assert got.same_as(region)


def test_exhausted_when_obstacles_tile_region():
    region = Mask.full((8, 8))
    with pytest.raises(PlacementExhausted):
        sample_free_region(region, [Mask.full((8, 8))], (2, 2), seed=0)


def test_box_larger_than_image_rejected():
    with pytest.raises(MaskError):
        sample_free_region(Mask.full((4, 4)), [], (5, 2), seed=0)


def test_sampled_placement_is_in_the_enumerated_feasible_set():
    rng = np.random.default_rng(2)
    for trial in range(30):
        region = Mask(rng.random((12, 12)) < 0.8)
        obstacles = [Mask(rng.random((12, 12)) < 0.1)]
        box = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        feasible = _enumerate_placements(region, obstacles, box)
        if not feasible:
            with pytest.raises(PlacementExhausted):
                sample_free_region(region, obstacles, box, seed=trial)
            continue
        got = sample_free_region(region, obstacles, box, seed=trial)
        x, y, w, h = tight_bbox(got)
        assert (w, h) == box
        assert (x, y) in feasible


def test_sampling_is_deterministic_in_seed():
    region = Mask.full((16, 16))
    a = sample_free_region(region, [], (3, 3), seed=9)
    b = sample_free_region(region, [], (3, 3), seed=9)
    assert a.same_as(b)


# -- bbox ----------------------------------------------------------------------

def test_tight_bbox_of_empty_mask():
    assert tight_bbox(Mask.zeros((5, 5))) == (0, 0, 0, 0)


def test_tight_bbox_matches_rect():
    assert tight_bbox(Mask.rect((10, 12), 3, 2, 4, 5)) == (3, 2, 4, 5)
