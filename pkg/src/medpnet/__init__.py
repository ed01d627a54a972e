"""Coarse-to-fine rigid registration toolkit for die-cast-like point clouds.

Layers, bottom up:

- ``geometry``: SE(3) algebra, nearest neighbors, closed-form alignment,
  error metrics.
- ``synth`` / ``cloud_io``: deterministic synthetic part generator,
  registration pairs, PLY/XYZ/manifest files.
- ``autodiff``: minimal reverse-mode tensor engine for the learned parts.
- ``edcp``: learned coarse registration (graph features, linear-attention
  cross-encoder, soft correspondence, SVD head).
- ``msreg``: single- and multiscale ICP and NDT channels.
- ``fusion``: learned dual-channel blending with the epsilon refinement.
- ``pipeline`` / ``cli``: dataset, training, registration, benchmark
  orchestration.
"""

from .edcp import (
    EdcpConfig,
    EdcpModel,
    TrainConfig,
    edcp_register,
    init_edcp_model,
    train_edcp,
)
from .fusion import (
    EpsilonFilterConfig,
    FusionMlp,
    FusionSample,
    blend_transforms,
    epsilon_filter,
    mdr_register,
    train_fusion,
)
from .geometry import (
    KdTree,
    PointCloud,
    RigidTransform,
    Twist,
    apply_transform,
    compose,
    invert,
    kabsch,
    point_rmse,
    registration_metrics,
    rotation_errors,
    se3_exp,
    se3_log,
    translation_errors,
)
from .msreg import (
    IcpConfig,
    NdtConfig,
    PyramidConfig,
    build_ndt_grid,
    build_pyramid,
    icp,
    multiscale_icp,
    multiscale_ndt,
    ndt,
)
from .pipeline import RunConfig, cmd_bench, cmd_gen_data, cmd_register, cmd_train_edcp, cmd_train_fusion
from .synth import (
    PairSpec,
    ShapeSpec,
    add_gaussian_noise,
    crop_overlap,
    make_pair,
    normalize_unit_sphere,
    random_shape,
    sample_surface,
)

__all__ = [
    "EdcpConfig",
    "EdcpModel",
    "EpsilonFilterConfig",
    "FusionMlp",
    "FusionSample",
    "IcpConfig",
    "KdTree",
    "NdtConfig",
    "PairSpec",
    "PointCloud",
    "PyramidConfig",
    "RigidTransform",
    "RunConfig",
    "ShapeSpec",
    "TrainConfig",
    "Twist",
    "add_gaussian_noise",
    "apply_transform",
    "blend_transforms",
    "build_ndt_grid",
    "build_pyramid",
    "cmd_bench",
    "cmd_gen_data",
    "cmd_register",
    "cmd_train_edcp",
    "cmd_train_fusion",
    "compose",
    "crop_overlap",
    "edcp_register",
    "epsilon_filter",
    "icp",
    "init_edcp_model",
    "invert",
    "kabsch",
    "make_pair",
    "mdr_register",
    "multiscale_icp",
    "multiscale_ndt",
    "ndt",
    "normalize_unit_sphere",
    "point_rmse",
    "random_shape",
    "registration_metrics",
    "rotation_errors",
    "sample_surface",
    "se3_exp",
    "se3_log",
    "train_edcp",
    "train_fusion",
    "translation_errors",
]
