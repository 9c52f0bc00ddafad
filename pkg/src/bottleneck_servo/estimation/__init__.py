"""Pose-from-correspondence estimation: rigid registration and homography servoing math."""
from .homography import (
    Homography,
    HomographyConfig,
    HomographySolution,
    ReferencePoint,
    TaskError25D,
    build_task_error,
    decompose_homography,
    dlt,
    estimate_homography,
    fit_plane_normal,
    select_solution,
    task_error,
)
from .registration import (
    IcpConfig,
    IcpResult,
    KabschFit,
    PriorConfig,
    RansacConfig,
    global_prior,
    icp_refine,
    robust_kabsch,
    weighted_kabsch,
    wrist_measurement,
)

__all__ = [
    "Homography", "HomographyConfig", "HomographySolution", "ReferencePoint", "TaskError25D",
    "build_task_error", "decompose_homography", "dlt", "estimate_homography", "fit_plane_normal", "select_solution",
    "task_error", "IcpConfig", "IcpResult", "KabschFit", "PriorConfig", "RansacConfig",
    "global_prior", "icp_refine", "robust_kabsch", "weighted_kabsch", "wrist_measurement",
]
