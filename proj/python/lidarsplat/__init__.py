"""LiDAR-constrained Gaussian splatting."""

from ._lidarsplat import (
    Camera,
    Dataset,
    DegenerateError,
    Error,
    GaussianSet,
    LidarCloud,
    NumericError,
    ParseError,
    RadialUnits,
    align,
    distort,
    downsample,
    init_from_lidar,
    lidar_maps,
    lidar_rmse,
    load_camera,
    load_dataset,
    load_gaussians,
    load_lidar,
    project,
    psnr,
    render,
    save_camera,
    save_gaussians,
    ssim,
    synth,
    train,
    undistort,
)

__version__ = "0.1.0"
