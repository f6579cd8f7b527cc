from __future__ import annotations

import math

import torch

from grasp_capture.geom.transforms import RigidTransform


def pose_errors(prediction: RigidTransform, target: RigidTransform, name: str) -> dict[str, float]:
    """Rotation (rad) and translation (m) error between two poses."""
    rotation, translation = target.distance(prediction)
    return {f"eval/{name}_rot": rotation, f"eval/{name}_trans": translation}


def rmse(prediction: torch.Tensor, target: torch.Tensor) -> float:
    """Root-mean-square point distance over rows finite in both inputs."""
    valid = torch.isfinite(prediction).all(dim=-1) & torch.isfinite(target).all(dim=-1)
    if not valid.any():
        return math.nan
    return (prediction[valid] - target[valid]).pow(2).sum(dim=-1).mean().sqrt().item()


def iou(prediction: torch.Tensor, target: torch.Tensor) -> float:
    """Intersection over union of two boolean masks; 1 when both are empty."""
    union = (prediction | target).sum()
    if union == 0:
        return 1.0
    return ((prediction & target).sum() / union).item()


def summarize(errors: list[float], name: str) -> dict[str, float]:
    """Mean and max of per-frame errors, NaN-aware."""
    values = torch.tensor([e for e in errors if not math.isnan(e)], dtype=torch.float64)
    if values.numel() == 0:
        return {f"eval/{name}_mean": math.nan, f"eval/{name}_max": math.nan}
    return {f"eval/{name}_mean": values.mean().item(), f"eval/{name}_max": values.max().item()}
