"""Bit-plane trigger embedding, corrupted selective scans, and the
experiment harness around a toy visual state-space classifier."""

from ._core import (
    TriggerSpec,
    VssModel,
    __version__,
    apply_kernel,
    badscan_origins,
    bench_timing,
    compute_metrics,
    corner_trigger,
    detect_trigger,
    discretize_zoh,
    efficient_groups,
    embed_trigger,
    extract_patch,
    kernel,
    load_checkpoint,
    load_ppm,
    place_patch,
    psnr,
    report,
    run_experiment,
    save_checkpoint,
    save_ppm,
    scan_recurrent,
    slice_planes,
    ss2d_orders,
    synth_dataset,
)

__all__ = [
    "TriggerSpec",
    "VssModel",
    "__version__",
    "apply_kernel",
    "badscan_origins",
    "bench_timing",
    "compute_metrics",
    "corner_trigger",
    "detect_trigger",
    "discretize_zoh",
    "efficient_groups",
    "embed_trigger",
    "extract_patch",
    "kernel",
    "load_checkpoint",
    "load_ppm",
    "place_patch",
    "psnr",
    "report",
    "run_experiment",
    "save_checkpoint",
    "save_ppm",
    "scan_recurrent",
    "slice_planes",
    "ss2d_orders",
    "synth_dataset",
]
