"""Multimodal coherent field fusion for volumetric segmentation features."""

from umcf._umcf import (  # noqa: F401
    __version__,
    dice,
    generate_phantom,
    hierarchy_violation_rate,
    l2_normalize,
    logistic,
    read_volume,
    run_fusion,
    signed_distance_transform,
    spatial_stats,
    sym3_eigenvalues,
    tempered_softmax,
    write_volume,
)
