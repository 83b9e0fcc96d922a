"""Dataset plumbing: array container, tile IO, manifests, synthetic scenes."""

import hashlib
import json

import numpy as np
import pytest

from davi.data import (
    DatasetManifest,
    PairRecord,
    SyntheticSceneConfig,
    decode_array,
    encode_array,
    generate_synthetic_dataset,
    load_array,
    load_ground_truth,
    load_manifest,
    load_pairs,
    load_targets,
    load_tile,
    read_binary_map,
    read_probability_map,
    render_scene,
    sample_scene,
    save_array,
    save_manifest,
    save_tile,
    scene_ground_truth,
    source_style,
    style_from_spec,
    target_style,
    write_binary_map,
    write_probability_map,
)
from davi.data.tiles import binarize_damage_levels
from davi.errors import MissingArtifactError, ValidationError

from conftest import small_scene_config


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- array container ---------------------------------------------------------


def test_array_container_roundtrip_float32(tmp_path, rng):
    arr = rng.random((7, 11), dtype=np.float32)
    path = tmp_path / "a.davg"
    save_array(path, arr)
    back = load_array(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_array_container_roundtrip_uint8(tmp_path, rng):
    arr = (rng.random((5, 3)) < 0.5).astype(np.uint8)
    path = tmp_path / "b.davg"
    save_array(path, arr)
    assert np.array_equal(load_array(path), arr)


def test_array_container_bytes_are_deterministic(rng):
    arr = rng.random((4, 4), dtype=np.float32)
    assert encode_array(arr) == encode_array(arr.copy())


def test_array_container_rejects_corruption(tmp_path, rng):
    arr = rng.random((4, 4), dtype=np.float32)
    data = encode_array(arr)
    with pytest.raises(ValidationError):
        decode_array(b"XXXX" + data[4:])  # bad magic
    with pytest.raises(ValidationError):
        decode_array(data[:-3])  # truncated payload
    with pytest.raises(ValidationError):
        decode_array(data[:8])  # truncated header
    version_bumped = bytes([data[0], data[1], data[2], data[3], 9]) + data[5:]
    with pytest.raises(ValidationError):
        decode_array(version_bumped)


def test_array_container_rejects_bad_arrays():
    with pytest.raises(ValidationError):
        encode_array(np.zeros((2, 2, 2), dtype=np.float32))
    with pytest.raises(ValidationError):
        encode_array(np.zeros((2, 2), dtype=np.float64))


# --- tiles and rasters -------------------------------------------------------


def test_tile_roundtrip(tmp_path, rng):
    tile = (rng.integers(0, 256, size=(16, 16, 3)) / 255.0).astype(np.float32)
    path = tmp_path / "t.png"
    save_tile(path, tile)
    back = load_tile(path)
    assert back.shape == (16, 16, 3)
    assert np.allclose(back, tile, atol=1 / 255 + 1e-6)


def test_binary_map_roundtrip_bitwise(tmp_path, rng):
    m = (rng.random((12, 9)) < 0.3).astype(np.uint8)
    path = tmp_path / "m.png"
    write_binary_map(path, m)
    assert np.array_equal(read_binary_map(path), m)
    # Re-writing the same map produces identical bytes.
    first = _digest(path)
    write_binary_map(path, m)
    assert _digest(path) == first


def test_probability_map_roundtrip_bitwise(tmp_path, rng):
    p = rng.random((6, 8), dtype=np.float32)
    path = tmp_path / "p.davg"
    write_probability_map(path, p)
    assert np.array_equal(read_probability_map(path), p)


def test_binarize_damage_levels():
    # any nonzero damage grade counts as change
    levels = np.array([[0, 1], [2, 3]], dtype=np.uint8)
    assert binarize_damage_levels(levels).tolist() == [[0, 1], [1, 1]]
    with pytest.raises(ValidationError):
        binarize_damage_levels(np.array([[4]], dtype=np.uint8))


def test_load_ground_truth_accepts_levels_and_binary(tmp_path):
    from PIL import Image

    levels = np.array([[0, 1], [2, 3]], dtype=np.uint8)
    path = tmp_path / "gt_levels.png"
    Image.fromarray(levels, mode="L").save(path)
    assert load_ground_truth(path).tolist() == [[0, 1], [1, 1]]

    mask = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    path2 = tmp_path / "gt_mask.png"
    Image.fromarray(mask, mode="L").save(path2)
    assert load_ground_truth(path2).tolist() == [[0, 1], [1, 0]]


def test_read_binary_map_missing(tmp_path):
    with pytest.raises(MissingArtifactError):
        read_binary_map(tmp_path / "absent.png")


# --- manifests ---------------------------------------------------------------


def _write_pair_files(root, pair_id, shape=(8, 8)):
    rng = np.random.default_rng(hash(pair_id) % 2**32)
    for phase in ("pre", "post"):
        save_tile(root / f"{pair_id}_{phase}.png", rng.random((*shape, 3)).astype(np.float32))
    write_binary_map(root / f"{pair_id}_gt.png", np.zeros(shape, dtype=np.uint8))


def test_manifest_roundtrip_with_relative_paths(tmp_path):
    _write_pair_files(tmp_path, "a")
    manifest = DatasetManifest(
        role="source",
        pairs=[
            PairRecord(
                pair_id="a",
                pre=tmp_path / "a_pre.png",
                post=tmp_path / "a_post.png",
                gt=tmp_path / "a_gt.png",
            )
        ],
    )
    save_manifest(manifest, tmp_path / "manifest.json")
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["pairs"][0]["pre"] == "a_pre.png"  # relative to the manifest

    back = load_manifest(tmp_path / "manifest.json")
    assert back.role == "source"
    assert back.pair_ids() == ["a"]
    assert back.pairs[0].pre.is_file()


def test_manifest_missing_file_is_exit_3_class(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_manifest(tmp_path / "nope.json")


def test_manifest_reports_all_problems_at_once(tmp_path):
    _write_pair_files(tmp_path, "a")
    doc = {
        "format": "davi-manifest/1",
        "role": "source",
        "pairs": [
            {"id": "a", "pre": "a_pre.png", "post": "a_post.png", "gt": "a_gt.png"},
            {"id": "a", "pre": "a_pre.png", "post": "a_post.png", "gt": "a_gt.png"},
            {"id": "b", "pre": "missing.png", "post": "a_post.png"},
        ],
    }
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError) as err:
        load_manifest(tmp_path / "manifest.json")
    message = str(err.value)
    assert "duplicate" in message
    assert "missing.png" in message
    assert "require gt" in message  # a source manifest needs gt everywhere


def test_load_pairs_and_targets(tmp_path):
    config = small_scene_config(source_style())
    manifest, _ = generate_synthetic_dataset(config, 3, tmp_path / "d", seed=5, role="source")
    ids, arr = load_pairs(manifest)
    targets = load_targets(manifest)
    assert ids == ["pair_0000", "pair_0001", "pair_0002"]
    assert arr.shape == (3, 2, 48, 48, 3)
    assert targets.shape == (3, 48, 48)


# --- synthetic scenes --------------------------------------------------------


def test_scene_ground_truth_matches_damaged_buildings(rng):
    config = small_scene_config(source_style())
    for _ in range(20):
        scene = sample_scene(rng, config, "p")
        gt = scene_ground_truth(scene)
        expected = np.zeros(gt.shape, dtype=np.uint8)
        for b in scene.buildings:
            if b.state != "intact":
                expected[b.top : b.top + b.height, b.left : b.left + b.width] = 1
        assert np.array_equal(gt, expected)


def test_render_scene_is_deterministic(rng):
    config = small_scene_config(source_style())
    scene = sample_scene(rng, config, "p")
    pre1, post1, gt1 = render_scene(scene, config.style)
    pre2, post2, gt2 = render_scene(scene, config.style)
    assert np.array_equal(pre1, pre2)
    assert np.array_equal(post1, post2)
    assert np.array_equal(gt1, gt2)


def test_styles_actually_differ(rng):
    config = small_scene_config(source_style())
    scene = sample_scene(rng, config, "p")
    pre_source, _, _ = render_scene(scene, source_style())
    pre_target, _, _ = render_scene(scene, target_style())
    assert np.abs(pre_source - pre_target).mean() > 0.05


def test_generate_synthetic_dataset_idempotent(tmp_path):
    config = small_scene_config(source_style())
    m1, _ = generate_synthetic_dataset(config, 4, tmp_path / "one", seed=9, role="target")
    m2, _ = generate_synthetic_dataset(config, 4, tmp_path / "two", seed=9, role="target")
    for r1, r2 in zip(m1.pairs, m2.pairs):
        assert _digest(r1.pre) == _digest(r2.pre)
        assert _digest(r1.post) == _digest(r2.post)
        assert _digest(r1.gt) == _digest(r2.gt)


def test_generated_dataset_has_damaged_and_clean_pairs(tmp_path):
    config = small_scene_config(source_style())
    manifest, _ = generate_synthetic_dataset(config, 12, tmp_path / "d", seed=3, role="target")
    sums = [load_ground_truth(rec.gt).sum() for rec in manifest.pairs]
    assert any(s > 0 for s in sums)
    assert any(s == 0 for s in sums)


def test_style_from_spec(tmp_path):
    assert style_from_spec(None) == source_style()
    assert style_from_spec("target") == target_style()
    custom = tmp_path / "style.json"
    custom.write_text(json.dumps({"background_color": [0.1, 0.2, 0.3]}))
    style = style_from_spec(str(custom))
    assert style.background_color == (0.1, 0.2, 0.3)
    with pytest.raises(ValidationError):
        style_from_spec("no-such-style")
