"""Desk-scale cloud-masking benchmark pipeline.

Synthetic multi-channel scenes, a small U-Net trained on patches, stitched
full-image inference and multi-seed benchmark runs, all backed by the C++
core.
"""

from cloudmask._core import (
    CloudmaskError,
    Model,
    UNetConfig,
    __version__,
    aggregate_accuracies,
    build_unet,
    evaluate_run,
    extract_test_grid,
    generate_scene,
    gradcheck,
    load_model,
    param_count,
    pixel_accuracy,
    read_dataset,
    reconstruct,
    threshold_mask,
    train_run,
    write_dataset,
)

__all__ = [
    "CloudmaskError",
    "Model",
    "UNetConfig",
    "__version__",
    "aggregate_accuracies",
    "build_unet",
    "evaluate_run",
    "extract_test_grid",
    "generate_scene",
    "gradcheck",
    "load_model",
    "param_count",
    "pixel_accuracy",
    "read_dataset",
    "reconstruct",
    "threshold_mask",
    "train_run",
    "write_dataset",
]
