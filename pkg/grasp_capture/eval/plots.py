from __future__ import annotations

import math
from pathlib import Path

import torch
from matplotlib import pyplot as plt

from grasp_capture.geom.transforms import RigidTransform


def plot_trajectory(
    camera_poses: list[RigidTransform | None],
    joints: torch.Tensor,
    axis_length: float = 0.02,
) -> plt.Figure:
    """Camera centers with their viewing axes around the reconstructed landmarks."""
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    registered = [pose for pose in camera_poses if pose is not None]
    if registered:
        centers = torch.stack([pose.translation for pose in registered])
        ax.plot(*centers.T.tolist(), "-o", markersize=2, color="tab:blue", label="cameras")
        for pose in registered:
            tip = pose.translation + axis_length * pose.rotation[:, 2]
            ax.plot(*torch.stack([pose.translation, tip]).T.tolist(), color="tab:blue", linewidth=0.5)
    finite = joints[torch.isfinite(joints).all(dim=-1)]
    ax.scatter(*finite.T.tolist(), color="tab:red", s=8, label="landmarks")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.legend()
    return fig


def plot_residuals(residuals: torch.Tensor, nbins: int = 50) -> plt.Figure:
    """Histogram of the per-observation reprojection residual norms."""
    norms = torch.linalg.vector_norm(residuals.reshape(-1, 2), dim=-1)
    norms = norms[torch.isfinite(norms)]
    fig, ax = plt.subplots(1)
    ax.hist(norms.tolist(), bins=nbins, color="tab:blue")
    rms = norms.pow(2).mean().sqrt().item() if norms.numel() else math.nan
    ax.axvline(rms, color="tab:red", linestyle="--", label=f"RMS {rms:.3g} px")
    ax.set_xlabel("residual [px]")
    ax.set_ylabel("count")
    ax.legend()
    return fig


def save_fig(fig: plt.Figure, path: Path | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
