from __future__ import annotations

import numpy as np
import pytest

from rosie_forge.scene import (
    ARM_COLOR,
    ArmPose,
    SceneError,
    SceneObject,
    SceneSpec,
    TaskSpec,
    generate_episode,
    generate_scene,
    load_ground_truth,
    save_ground_truth,
    scene_spec_from_json,
    scene_spec_to_json,
    scripted_contact_frame,
    sprite_for,
)


def _two_object_scene():
    return SceneSpec(
        table_region=(0, 0, 128, 128),
        objects=(
            SceneObject(name="coke can", shape="sprite", placement=(10, 20, 16, 24)),
            SceneObject(name="lunch box", shape="sprite", placement=(60, 70, 30, 20)),
        ),
        image_size=(128, 128),
    )


def test_same_inputs_render_byte_identical_images():
    spec = _two_object_scene()
    a, _ = generate_scene(spec, seed=3)
    b, _ = generate_scene(spec, seed=3)
    assert np.array_equal(a, b)


def test_non_overlapping_objects_have_disjoint_masks():
    _, truth = generate_scene(_two_object_scene(), seed=0)
    can = truth.objects["coke can"].mask.bits
    box = truth.objects["lunch box"].mask.bits
    intersection = [
        (y, x)
        for y in range(128)
        for x in range(128)
        if can[y, x] and box[y, x]
    ]
    assert intersection == []


def test_object_fully_under_arm_has_zero_visibility():
    spec = SceneSpec(
        table_region=(0, 0, 128, 128),
        objects=(SceneObject(name="coke can", shape="sprite", placement=(58, 30, 6, 6)),),
        arm=ArmPose((61, 100)),  # shaft covers rows 0..92, cols 54..68
        image_size=(128, 128),
    )
    _, truth = generate_scene(spec, seed=0)
    assert truth.objects["coke can"].visibility == 0.0
    assert truth.objects["coke can"].visible.is_empty()


def test_out_of_bounds_placement_rejected():
    spec = SceneSpec(
        table_region=(0, 0, 64, 64),
        objects=(SceneObject(name="coke can", shape="sprite", placement=(60, 0, 10, 10)),),
        image_size=(64, 64),
    )
    with pytest.raises(SceneError):
        generate_scene(spec, seed=0)


def test_duplicate_object_names_rejected():
    spec = SceneSpec(
        table_region=(0, 0, 64, 64),
        objects=(
            SceneObject(name="coke can", shape="sprite", placement=(0, 0, 8, 8)),
            SceneObject(name="coke can", shape="sprite", placement=(20, 20, 8, 8)),
        ),
        image_size=(64, 64),
    )
    with pytest.raises(SceneError):
        generate_scene(spec, seed=0)


def test_layers_partition_the_image():
    spec = SceneSpec(
        table_region=(0, 0, 128, 128),
        objects=(
            SceneObject(name="drawer", shape="sprite", placement=(20, 40, 80, 60)),
            SceneObject(name="coke can", shape="sprite", placement=(30, 50, 16, 24)),
        ),
        arm=ArmPose((64, 70)),
        image_size=(128, 128),
    )
    _, truth = generate_scene(spec, seed=0)
    total = truth.arm_mask.count() + truth.table_mask().count()
    total += sum(t.visible.count() for t in truth.objects.values())
    assert total == 128 * 128


def test_rendering_visible_pixels_shows_each_objects_color():
    spec = _two_object_scene()
    image, truth = generate_scene(spec, seed=0)
    for obj in spec.objects:
        visible = truth.objects[obj.name].visible.bits
        assert visible.any()
        assert np.all(image[visible] == sprite_for(obj.name).color)


def test_arm_pixels_use_arm_color():
    spec = SceneSpec(
        table_region=(0, 0, 64, 64),
        objects=(),
        arm=ArmPose((32, 40)),
        image_size=(64, 64),
    )
    image, truth = generate_scene(spec, seed=0)
    assert truth.arm_mask.count() > 0
    assert np.all(image[truth.arm_mask.bits] == ARM_COLOR)


# -- episode scripting ---------------------------------------------------------

def test_episode_instruction_and_length(bag_episode):
    episode, truths = bag_episode
    assert episode.instruction == "pick green chip bag"
    assert len(episode.frames) == 10
    assert len(truths) == 10


def test_single_frame_episode_has_zero_motion_action(bag_scene):
    task = TaskSpec(verb="pick", target_object="green chip bag", scene=bag_scene)
    episode, _ = generate_episode(task, 1, seed=3)
    assert len(episode.frames) == 1
    assert np.array_equal(episode.frames[0].action, np.zeros(7))


def test_arm_overlaps_target_exactly_from_contact_frame(bag_scene):
    task = TaskSpec(verb="pick", target_object="green chip bag", scene=bag_scene)
    for length in (2, 5, 10, 13):
        episode, truths = generate_episode(task, length, seed=11)
        contact = scripted_contact_frame(length)
        target_full = [t.objects["green chip bag"].mask.bits for t in truths]
        overlaps = [
            bool((t.arm_mask.bits & m).any()) for t, m in zip(truths, target_full)
        ]
        expected = [i >= contact for i in range(length)]
        assert overlaps == expected, f"length={length}"


def test_gripper_closes_at_contact(bag_scene):
    task = TaskSpec(verb="pick", target_object="green chip bag", scene=bag_scene)
    episode, _ = generate_episode(task, 10, seed=5)
    contact = scripted_contact_frame(10)
    grips = [frame.action[-1] for frame in episode.frames]
    assert grips == [0.0] * contact + [1.0] * (10 - contact)


def test_missing_target_rejected(bag_scene):
    task = TaskSpec(verb="pick", target_object="pepsi can", scene=bag_scene)
    with pytest.raises(SceneError):
        generate_episode(task, 5, seed=0)


def test_episode_deterministic_in_inputs(bag_scene):
    task = TaskSpec(verb="pick", target_object="green chip bag", scene=bag_scene)
    a, _ = generate_episode(task, 6, seed=21)
    b, _ = generate_episode(task, 6, seed=21)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.action, fb.action)


# -- serialization ---------------------------------------------------------------

def test_scene_spec_json_roundtrip():
    spec = SceneSpec(
        table_region=(0, 0, 128, 128),
        objects=(
            SceneObject(name="coke can", shape="sprite", placement=(10, 20, 16, 24)),
            SceneObject(name="blob", shape="ellipse", placement=(40, 40, 10, 12), color=(1, 2, 3)),
        ),
        arm=ArmPose((64, 30)),
        image_size=(128, 128),
    )
    assert scene_spec_from_json(scene_spec_to_json(spec)) == spec


def test_ground_truth_sidecar_roundtrip(tmp_path, bag_episode):
    _, truths = bag_episode
    save_ground_truth(tmp_path, truths)
    loaded = load_ground_truth(tmp_path)
    assert loaded is not None and len(loaded) == len(truths)
    for a, b in zip(truths, loaded):
        assert a.arm_mask.same_as(b.arm_mask)
        assert set(a.objects) == set(b.objects)
        for name in a.objects:
            assert a.objects[name].mask.same_as(b.objects[name].mask)
            assert a.objects[name].visible.same_as(b.objects[name].visible)
            assert a.objects[name].visibility == b.objects[name].visibility


def test_missing_sidecar_returns_none(tmp_path):
    assert load_ground_truth(tmp_path) is None
