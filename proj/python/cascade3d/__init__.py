"""Python bindings for the cascade3d library."""

from ._core import (
    PhantomDomain,
    ScalePlan,
    canny3d,
    estimate_memory,
    gen_phantom,
    load_volume,
    mae,
    memory_architectures,
    mse,
    paired_ttest,
    patch_grid,
    plan_scales,
    psnr,
    resample_trilinear,
    save_volume,
    ssim3d,
)

__all__ = [
    "PhantomDomain",
    "ScalePlan",
    "canny3d",
    "estimate_memory",
    "gen_phantom",
    "load_volume",
    "mae",
    "memory_architectures",
    "mse",
    "paired_ttest",
    "patch_grid",
    "plan_scales",
    "psnr",
    "resample_trilinear",
    "save_volume",
    "ssim3d",
]
