"""Dataset construction: manifests, pair enumeration, overlap filtering,
label noise, serialization formats, and criteria statistics."""

from .build import (
    DatasetVariant,
    PairRecord,
    VARIANT_ALL,
    VARIANT_HIGH_OVERLAP,
    build_variant,
    criteria_histograms,
    inject_label_noise,
    read_pair_index,
    write_pair_index,
)
from .formats import (
    FormatError,
    decode_covis,
    encode_covis,
    labels_to_pgm,
    overlay_ppm,
    read_covis,
    read_pfm,
    read_ppm,
    write_covis,
    write_pfm,
    write_ppm,
)
from .manifest import (
    FrameRecord,
    SceneManifest,
    enumerate_pairs,
    load_frame,
    load_manifest,
    save_manifest,
    scene_to_manifest,
    split_check,
)

__all__ = [
    "DatasetVariant",
    "FormatError",
    "FrameRecord",
    "PairRecord",
    "SceneManifest",
    "VARIANT_ALL",
    "VARIANT_HIGH_OVERLAP",
    "build_variant",
    "criteria_histograms",
    "decode_covis",
    "encode_covis",
    "enumerate_pairs",
    "inject_label_noise",
    "labels_to_pgm",
    "load_frame",
    "load_manifest",
    "overlay_ppm",
    "read_covis",
    "read_pair_index",
    "read_pfm",
    "read_ppm",
    "save_manifest",
    "scene_to_manifest",
    "split_check",
    "write_covis",
    "write_pair_index",
    "write_pfm",
    "write_ppm",
]
