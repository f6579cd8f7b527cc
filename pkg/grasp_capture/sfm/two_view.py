"""
Two-view initialization: normalized 8-point essential matrix, cheirality
disambiguation and linear triangulation.
"""
from __future__ import annotations

import logging

import torch

from grasp_capture.geom.camera import MIN_DEPTH
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.skeleton import NUM_LANDMARKS
from grasp_capture.sfm.observations import ObservationSet
from grasp_capture.utils.common import DTYPE
from grasp_capture.utils.errors import DegenerateMotion, InsufficientCorrespondences

MIN_SHARED = 8
MIN_TRIANGULATED = 6
MIN_PARALLAX = 1e-3  # rad


def _hartley(points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Homogeneous points with zero centroid and mean distance sqrt(2), and the normalizing matrix."""
    centroid = points.mean(dim=0)
    spread = torch.linalg.vector_norm(points - centroid, dim=-1).mean().clamp(min=1e-12)
    s = 2.0**0.5 / spread
    norm = torch.tensor(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]], dtype=points.dtype
    )
    homog = torch.cat([points, torch.ones_like(points[:, :1])], dim=-1)
    return homog @ norm.transpose(0, 1), norm


def essential_matrix(xy_a: torch.Tensor, xy_b: torch.Tensor) -> torch.Tensor:
    """Essential matrix E with x_b^T E x_a = 0 from normalized image coordinates (n >= 8)."""
    ha, norm_a = _hartley(xy_a)
    hb, norm_b = _hartley(xy_b)
    system = (hb[:, :, None] * ha[:, None, :]).reshape(-1, 9)
    _, _, vh = torch.linalg.svd(system)
    essential = vh[-1].reshape(3, 3)
    essential = norm_b.transpose(0, 1) @ essential @ norm_a
    # Project onto the essential manifold
    u, _, vh = torch.linalg.svd(essential)
    return u @ torch.diag(torch.tensor([1.0, 1.0, 0.0], dtype=DTYPE)) @ vh


def decompose_essential(essential: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """The four (R, t) with E ~ [t]x R, unit t."""
    u, _, vh = torch.linalg.svd(essential)
    if torch.linalg.det(u) < 0:
        u = -u
    if torch.linalg.det(vh) < 0:
        vh = -vh
    w = torch.tensor([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], dtype=DTYPE)
    t = u[:, 2]
    candidates = []
    for rot in (u @ w @ vh, u @ w.transpose(0, 1) @ vh):
        candidates.extend([(rot, t), (rot, -t)])
    return candidates


def projection_matrix(pose: RigidTransform) -> torch.Tensor:
    """Normalized projection [R^T | -R^T t] of a camera with pose ^wT_c."""
    rot_t = pose.rotation.transpose(0, 1)
    return torch.cat([rot_t, (-rot_t @ pose.translation)[:, None]], dim=-1)


def triangulate(projections: torch.Tensor, xy: torch.Tensor, weights: torch.Tensor | None = None) -> torch.Tensor:
    """Linear (DLT) triangulation.

    Args:
        projections: Normalized projection matrices (..., k, 3, 4).
        xy: Normalized image coordinates (..., k, 2).
        weights: Optional per-view weights (..., k).

    Returns:
        World points (..., 3).
    """
    rows = torch.cat(
        [
            xy[..., 0:1] * projections[..., 2, :] - projections[..., 0, :],
            xy[..., 1:2] * projections[..., 2, :] - projections[..., 1, :],
        ],
        dim=-2,
    )
    if weights is not None:
        rows = rows * torch.cat([weights, weights], dim=-1)[..., None]
    _, _, vh = torch.linalg.svd(rows)
    homog = vh[..., -1, :]
    return homog[..., :3] / homog[..., 3:]


def _parallax(points: torch.Tensor, center_b: torch.Tensor) -> torch.Tensor:
    ray_a, ray_b = points, points - center_b
    cos = (ray_a * ray_b).sum(-1) / (
        torch.linalg.vector_norm(ray_a, dim=-1) * torch.linalg.vector_norm(ray_b, dim=-1)
    )
    return torch.arccos(cos.clamp(-1.0, 1.0))


def init_two_view(
    obs: ObservationSet, frame_a: int, frame_b: int, threshold: float = 0.2
) -> tuple[RigidTransform, torch.Tensor]:
    """Relative pose ^aT_b with unit translation and landmarks in the frame of camera a.

    Landmarks not shared by both frames, or not triangulated in front of
    both cameras with enough parallax, are NaN.
    """
    mask = obs.mask(threshold)
    shared = (mask[frame_a] & mask[frame_b]).nonzero().squeeze(-1)
    if len(shared) < MIN_SHARED:
        raise InsufficientCorrespondences(
            f"Frames {frame_a} and {frame_b} share {len(shared)} landmarks, need {MIN_SHARED}."
        )
    xy_a = obs.intrinsics.normalize(obs.uv[frame_a, shared])
    xy_b = obs.intrinsics.normalize(obs.uv[frame_b, shared])
    if torch.linalg.vector_norm(xy_b - xy_a, dim=-1).max() < MIN_PARALLAX * 1e-3:
        raise DegenerateMotion(f"Frames {frame_a} and {frame_b} show no keypoint motion.")
    essential = essential_matrix(xy_a, xy_b)

    best = None
    camera_a = projection_matrix(RigidTransform.identity())
    xy = torch.stack([xy_a, xy_b], dim=1)
    for rot, t in decompose_essential(essential):
        # X_b = R X_a + t, i.e. ^aT_b = (R^T, -R^T t)
        pose_b = RigidTransform(rot.transpose(0, 1), -rot.transpose(0, 1) @ t, check=False)
        projections = torch.stack([camera_a, projection_matrix(pose_b)])
        points = triangulate(projections.expand(len(shared), 2, 3, 4), xy)
        depth_a = points[:, 2]
        depth_b = (points @ rot.transpose(0, 1) + t)[:, 2]
        valid = (
            torch.isfinite(points).all(dim=-1)
            & (depth_a > MIN_DEPTH)
            & (depth_b > MIN_DEPTH)
            & (_parallax(points, pose_b.translation) > MIN_PARALLAX)
        )
        count = int(valid.sum())
        if best is None or count > best[0]:
            best = (count, pose_b, points, valid)

    count, pose_b, points, valid = best
    if count < MIN_TRIANGULATED:
        raise DegenerateMotion(
            f"Only {count} landmarks triangulate in front of frames {frame_a} and {frame_b}."
        )
    joints = torch.full((NUM_LANDMARKS, 3), float("nan"), dtype=DTYPE)
    joints[shared[valid]] = points[valid]
    logging.info(
        "Initialized from frames %d and %d with %d triangulated landmarks.", frame_a, frame_b, count
    )
    return RigidTransform(pose_b.rotation, pose_b.translation), joints


def rank_partner_frames(obs: ObservationSet, anchor: int = 0, threshold: float = 0.2) -> list[int]:
    """Frames ordered by shared detections with `anchor` times their median keypoint displacement."""
    mask = obs.mask(threshold)
    scores = []
    for frame in range(obs.num_frames):
        if frame == anchor:
            continue
        shared = mask[anchor] & mask[frame]
        if shared.sum() < MIN_SHARED:
            continue
        displacement = torch.linalg.vector_norm(obs.uv[frame, shared] - obs.uv[anchor, shared], dim=-1)
        scores.append((shared.sum().item() * displacement.median().item(), frame))
    # Ties go to the earlier frame
    return [frame for _, frame in sorted(scores, key=lambda s: (-s[0], s[1]))]
