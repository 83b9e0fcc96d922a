"""Dataset manifests, tile IO, synthetic scenes and the array container."""

from .arrayio import decode_array, encode_array, load_array, save_array
from .manifest import (
    MANIFEST_FORMAT,
    DatasetManifest,
    PairRecord,
    load_manifest,
    load_pairs,
    load_targets,
    save_manifest,
)
from .synthetic import (
    Building,
    SyntheticScene,
    SyntheticSceneConfig,
    SyntheticStyle,
    generate_synthetic_dataset,
    render_scene,
    sample_scene,
    scene_ground_truth,
    source_style,
    style_from_spec,
    target_style,
)
from .tiles import (
    binarize_damage_levels,
    load_ground_truth,
    load_tile,
    read_binary_map,
    read_probability_map,
    save_tile,
    write_binary_map,
    write_probability_map,
)

__all__ = [
    "MANIFEST_FORMAT",
    "Building",
    "DatasetManifest",
    "PairRecord",
    "SyntheticScene",
    "SyntheticSceneConfig",
    "SyntheticStyle",
    "binarize_damage_levels",
    "decode_array",
    "encode_array",
    "generate_synthetic_dataset",
    "load_array",
    "load_ground_truth",
    "load_manifest",
    "load_pairs",
    "load_tile",
    "load_targets",
    "read_binary_map",
    "read_probability_map",
    "render_scene",
    "sample_scene",
    "save_array",
    "save_manifest",
    "save_tile",
    "scene_ground_truth",
    "source_style",
    "style_from_spec",
    "target_style",
    "write_binary_map",
    "write_probability_map",
]
