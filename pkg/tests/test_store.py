from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from rosie_forge.prompting import PromptTriple
from rosie_forge.store import (
    Dataset,
    DatasetValidationError,
    Episode,
    Frame,
    Provenance,
    StoreError,
    datasets_equal,
    load_dataset,
    save_dataset,
    validate_dataset,
)

TRIPLE = PromptTriple("empty drawer", ("robot arm", "robot gripper"), "add a coke can in the drawer")


def tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(p for p in Path(root).rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def _frame(rng, h=32, w=32, dim=7) -> Frame:
    return Frame(
        image=rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8),
        action=rng.random(dim),
    )


def _dataset(n_episodes=2, length=4, name="toy") -> Dataset:
    rng = np.random.default_rng(42)
    episodes = [
        Episode(
            episode_id=f"ep_{k:03d}",
            instruction="pick green chip bag",
            frames=[_frame(rng) for _ in range(length)],
        )
        for k in range(n_episodes)
    ]
    return Dataset(name=name, action_dim=7, image_size=(32, 32), episodes=episodes)


def test_roundtrip_preserves_everything(tmp_path):
    dataset = _dataset()
    save_dataset(dataset, tmp_path)
    loaded = load_dataset(tmp_path)
    assert datasets_equal(dataset, loaded)


def test_frames_named_by_zero_padded_index(tmp_path):
    dataset = _dataset(n_episodes=1, length=10)
    save_dataset(dataset, tmp_path)
    files = sorted(p.name for p in (tmp_path / "episodes/ep_000/frames").iterdir())
    assert files == [f"{i:05d}.png" for i in range(10)]


def test_two_saves_produce_identical_tree_hashes(tmp_path):
    dataset = _dataset()
    save_dataset(dataset, tmp_path / "a")
    save_dataset(dataset, tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_resave_of_loaded_dataset_is_byte_identical(tmp_path):
    dataset = _dataset()
    save_dataset(dataset, tmp_path / "a")
    save_dataset(load_dataset(tmp_path / "a"), tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_manifest_keys_in_fixed_order(tmp_path):
    save_dataset(_dataset(), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert list(manifest) == ["version", "name", "action_dim", "image_size", "episodes"]
    assert [e["id"] for e in manifest["episodes"]] == ["ep_000", "ep_001"]


def test_missing_manifest(tmp_path):
    with pytest.raises(StoreError, match="missing manifest"):
        load_dataset(tmp_path)


def test_version_mismatch(tmp_path):
    save_dataset(_dataset(), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(StoreError, match="version"):
        load_dataset(tmp_path)


def test_dropped_frame_file_names_the_episode(tmp_path):
    save_dataset(_dataset(), tmp_path)
    (tmp_path / "episodes/ep_001/frames/00003.png").unlink()
    with pytest.raises(StoreError, match="ep_001"):
        load_dataset(tmp_path)


def test_declared_length_flip_is_detected(tmp_path):
    save_dataset(_dataset(), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["episodes"][0]["length"] = 10
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(StoreError, match="ep_000"):
        load_dataset(tmp_path)


def test_injected_nan_action_fails_validation(tmp_path):
    save_dataset(_dataset(), tmp_path)
    actions_path = tmp_path / "episodes/ep_000/actions.json"
    actions = json.loads(actions_path.read_text())
    actions[1][3] = float("nan")
    actions_path.write_text(json.dumps(actions))
    with pytest.raises(DatasetValidationError) as err:
        load_dataset(tmp_path)
    assert any(v.invariant == "action-finite" for v in err.value.violations)


def test_validate_well_formed_dataset_is_clean():
    assert validate_dataset(_dataset()) == []


def test_validate_duplicate_ids():
    dataset = _dataset()
    dataset.episodes[1].episode_id = "ep_000"
    violations = validate_dataset(dataset)
    assert any(v.invariant == "unique-episode-ids" for v in violations)


def test_validate_wrong_action_dim():
    dataset = _dataset()
    dataset.episodes[0].frames[0].action = np.zeros(5)
    violations = validate_dataset(dataset)
    assert any(v.invariant == "action-dim" for v in violations)


def test_validate_wrong_image_size():
    dataset = _dataset()
    dataset.episodes[0].frames[2].image = np.zeros((16, 16, 3), dtype=np.uint8)
    violations = validate_dataset(dataset)
    assert any(v.invariant == "frame-image-size" for v in violations)


def test_validate_empty_instruction():
    dataset = _dataset()
    dataset.episodes[0].instruction = ""
    assert any(v.invariant == "instruction-nonempty" for v in validate_dataset(dataset))


def test_dangling_provenance_found_when_co_loaded():
    original = _dataset(name="orig")
    augmented = Dataset(
        name="aug",
        action_dim=7,
        image_size=(32, 32),
        episodes=[
            Episode(
                episode_id="ep_000a",
                instruction="pick blue microfiber cloth",
                frames=[_frame(np.random.default_rng(0))],
                provenance=Provenance.augmented("ep_000", TRIPLE, seed=1),
            )
        ],
    )
    assert validate_dataset(augmented, companion=original) == []

    del original.episodes[0]  # drop the source episode
    violations = validate_dataset(augmented, companion=original)
    assert any(v.invariant == "provenance-resolves" for v in violations)


def test_standalone_augmented_dataset_does_not_flag_dangling():
    augmented = Dataset(
        name="aug",
        action_dim=7,
        image_size=(32, 32),
        episodes=[
            Episode(
                episode_id="ep_000a",
                instruction="x",
                frames=[_frame(np.random.default_rng(0))],
                provenance=Provenance.augmented("ep_000", TRIPLE, seed=1),
            )
        ],
    )
    assert validate_dataset(augmented) == []


def test_save_rejects_invalid_dataset(tmp_path):
    dataset = _dataset()
    dataset.episodes[0].frames[0].action = np.array([np.inf] * 7)
    with pytest.raises(DatasetValidationError):
        save_dataset(dataset, tmp_path)
    assert not (tmp_path / "manifest.json").exists()


def test_augmented_provenance_roundtrips(tmp_path):
    rng = np.random.default_rng(3)
    dataset = Dataset(
        name="aug",
        action_dim=7,
        image_size=(32, 32),
        episodes=[
            Episode(
                episode_id="ep_000a",
                instruction="pick blue microfiber cloth",
                frames=[_frame(rng)],
                provenance=Provenance.augmented("ep_000", TRIPLE, seed=33),
            )
        ],
    )
    save_dataset(dataset, tmp_path)
    loaded = load_dataset(tmp_path)
    prov = loaded.episodes[0].provenance
    assert prov.origin == "augmented"
    assert prov.source_episode_id == "ep_000"
    assert prov.prompt_triple == TRIPLE
    assert prov.seed == 33
