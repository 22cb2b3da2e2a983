"""Synthetic dataset generation, loading and augmentation."""
from .augment import (
    NO_JITTER,
    JitterParams,
    apply_photometric,
    augment_roll,
    photometric_jitter,
    roll_pose,
    roll_warp_matrix,
)
from .dataset import (
    SampleRecord,
    generate_dataset,
    load_dataset,
    load_intrinsics,
    read_labels,
    render_sample,
    split_train_val,
    write_manifest,
)
from .render import DOMAINS, DomainParams, SatelliteModel3D, render, sample_pose

__all__ = [
    "DOMAINS", "DomainParams", "JitterParams", "NO_JITTER", "SampleRecord", "SatelliteModel3D",
    "apply_photometric", "augment_roll", "generate_dataset", "load_dataset", "load_intrinsics",
    "photometric_jitter", "read_labels", "render", "render_sample", "roll_pose", "roll_warp_matrix",
    "sample_pose", "split_train_val", "write_manifest",
]
