"""
Reprojection residuals of world points seen by posed cameras, with
closed-form Jacobians w.r.t. the points and the camera tangent parameters.
"""
from __future__ import annotations

import math
from collections import namedtuple

import torch

from grasp_capture.geom.camera import MIN_DEPTH, CameraIntrinsics, pinhole, pinhole_jacobian, to_camera
from grasp_capture.geom.so3 import hat, rotation_exp
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.sfm.least_squares import LeastSquaresProblem, robust_cost, whiten

# Rotations (F, 3, 3) and translations (F, 3) of ^wT_c, points (L, 3) in the world frame
BundleState = namedtuple("BundleState", "rotations translations points")


def stack_poses(poses: list[RigidTransform]) -> tuple[torch.Tensor, torch.Tensor]:
    return torch.stack([p.rotation for p in poses]), torch.stack([p.translation for p in poses])


def reprojection_residuals(
    points: torch.Tensor,
    rotations: torch.Tensor,
    translations: torch.Tensor,
    uv: torch.Tensor,
    intrinsics: CameraIntrinsics,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-observation residuals (m, 2) = projection - detection, and camera-frame points (m, 3).

    All inputs are aligned per observation.
    """
    points_cam = to_camera(points[:, None, :], rotations, translations[:, None, :]).squeeze(-2)
    return pinhole(points_cam, intrinsics) - uv, points_cam


def reprojection_jacobians(
    points: torch.Tensor,
    rotations: torch.Tensor,
    translations: torch.Tensor,
    points_cam: torch.Tensor,
    intrinsics: CameraIntrinsics,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns d(residual)/d(point) (m, 2, 3) and d(residual)/d(camera tangent) (m, 2, 6).

    The camera tangent is the left perturbation of `RigidTransform.retract`.
    """
    d_pix = pinhole_jacobian(points_cam, intrinsics)
    rot_t = rotations.transpose(-1, -2)
    d_point = d_pix @ rot_t
    d_rot = d_point @ hat(points - translations)
    d_trans = -d_point
    return d_point, torch.cat([d_rot, d_trans], dim=-1)


class ReprojectionProblem(LeastSquaresProblem):
    """Robust reprojection error over a subset of free cameras and points.

    Observations are given as flat arrays: frame index, landmark index,
    detection (m, 2) and confidence weight (m,).
    """

    def __init__(
        self,
        intrinsics: CameraIntrinsics,
        frames: torch.Tensor,
        landmarks: torch.Tensor,
        uv: torch.Tensor,
        weights: torch.Tensor,
        free_cameras: list[int],
        free_points: list[int],
        huber_width: float = math.inf,
    ):
        self.intrinsics = intrinsics
        self.frames = frames
        self.landmarks = landmarks
        self.uv = uv
        self.weights = weights
        self.free_cameras = list(free_cameras)
        self.free_points = list(free_points)
        self.huber_width = huber_width

        # Tangent layout: 6 per free camera, then 3 per free point
        self.camera_column = {f: 6 * i for i, f in enumerate(self.free_cameras)}
        offset = 6 * len(self.free_cameras)
        self.point_column = {p: offset + 3 * i for i, p in enumerate(self.free_points)}
        self.num_params = offset + 3 * len(self.free_points)

    def residuals(self, state: BundleState) -> tuple[torch.Tensor, torch.Tensor]:
        return reprojection_residuals(
            state.points[self.landmarks],
            state.rotations[self.frames],
            state.translations[self.frames],
            self.uv,
            self.intrinsics,
        )

    def cost(self, state: BundleState) -> float:
        residuals, points_cam = self.residuals(state)
        if (points_cam[:, 2] <= MIN_DEPTH).any():
            return math.inf
        return robust_cost(residuals, self.weights, self.huber_width).item()

    def linearize(self, state: BundleState) -> tuple[torch.Tensor, torch.Tensor]:
        residuals, points_cam = self.residuals(state)
        d_point, d_camera = reprojection_jacobians(
            state.points[self.landmarks],
            state.rotations[self.frames],
            state.translations[self.frames],
            points_cam,
            self.intrinsics,
        )
        jac = torch.zeros(len(self.frames), 2, self.num_params, dtype=residuals.dtype)
        rows = torch.arange(len(self.frames))
        for frame, col in self.camera_column.items():
            sel = rows[self.frames == frame]
            jac[sel, :, col : col + 6] = d_camera[sel]
        for landmark, col in self.point_column.items():
            sel = rows[self.landmarks == landmark]
            jac[sel, :, col : col + 3] = d_point[sel]
        return whiten(residuals, jac, self.weights, self.huber_width)

    def retract(self, state: BundleState, delta: torch.Tensor) -> BundleState:
        rotations, translations, points = state.rotations.clone(), state.translations.clone(), state.points.clone()
        if self.free_cameras:
            cams = torch.tensor(self.free_cameras)
            steps = delta[: 6 * len(self.free_cameras)].reshape(-1, 6)
            rotations[cams] = rotation_exp(steps[:, :3]) @ rotations[cams]
            translations[cams] = translations[cams] + steps[:, 3:]
        if self.free_points:
            pts = torch.tensor(self.free_points)
            points[pts] = points[pts] + delta[6 * len(self.free_cameras) :].reshape(-1, 3)
        return BundleState(rotations, translations, points)

    def norm(self, state: BundleState) -> float:
        values = [state.translations[self.free_cameras].reshape(-1), state.points[self.free_points].reshape(-1)]
        return torch.linalg.vector_norm(torch.cat(values)).item()
