"""
Joint refinement of the hand parameters and the virtual cameras against
the 2D detections, with the landmarks produced by forward kinematics.
"""
from __future__ import annotations

import logging
import math
from collections import namedtuple
from dataclasses import dataclass

import torch

from grasp_capture.geom.camera import MIN_DEPTH
from grasp_capture.geom.so3 import rotation_exp
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.kinematics import fk_jacobian, forward_kinematics
from grasp_capture.hand.skeleton import NUM_PARAMS, HandParams, HandSkeleton
from grasp_capture.sfm.least_squares import (
    LeastSquaresProblem,
    SolverConfig,
    levenberg_marquardt,
    robust_cost,
    whiten,
)
from grasp_capture.sfm.observations import ObservationSet
from grasp_capture.sfm.reprojection import reprojection_jacobians, reprojection_residuals, stack_poses
from grasp_capture.utils.common import SolveReport

JointState = namedtuple("JointState", "params rotations translations")


@dataclass(frozen=True, eq=False)
class JointResult:
    """`final_cost` is the robust reprojection cost minimized; `inlier_cost` the plain inlier sum."""

    params: HandParams
    camera_poses: list[RigidTransform | None]
    final_cost: float
    inlier_cost: float
    report: SolveReport

    @property
    def converged(self) -> bool:
        return bool(self.report.converged)


class HandReprojectionProblem(LeastSquaresProblem):
    """Reprojection of the posed hand landmarks; palm scale fixed, first camera anchored."""

    def __init__(
        self,
        skeleton: HandSkeleton,
        obs: ObservationSet,
        registered: torch.Tensor,
        cfg: SolverConfig,
    ):
        self.skeleton = skeleton
        self.obs = obs
        used = obs.mask(cfg.confidence_threshold) & registered[:, None]
        self.frames, self.landmarks = used.nonzero(as_tuple=True)
        self.uv = obs.uv[self.frames, self.landmarks]
        self.weights = obs.confidence[self.frames, self.landmarks]
        self.huber_width = cfg.huber_width
        self.free_cameras = [f for f in range(1, obs.num_frames) if registered[f]]
        self.camera_column = {f: NUM_PARAMS + 6 * i for i, f in enumerate(self.free_cameras)}
        self.num_params = NUM_PARAMS + 6 * len(self.free_cameras)

    def residuals(self, state: JointState) -> tuple[torch.Tensor, torch.Tensor]:
        joints = forward_kinematics(self.skeleton, state.params)
        return reprojection_residuals(
            joints[self.landmarks],
            state.rotations[self.frames],
            state.translations[self.frames],
            self.uv,
            self.obs.intrinsics,
        )

    def cost(self, state: JointState) -> float:
        residuals, points_cam = self.residuals(state)
        if (points_cam[:, 2] <= MIN_DEPTH).any():
            return math.inf
        return robust_cost(residuals, self.weights, self.huber_width).item()

    def plain_cost(self, state: JointState) -> float:
        """Sum of squared pixel residuals within the robust width."""
        residuals, _ = self.residuals(state)
        norms = torch.linalg.vector_norm(residuals, dim=-1)
        return (norms[norms <= self.huber_width] ** 2).sum().item()

    def linearize(self, state: JointState) -> tuple[torch.Tensor, torch.Tensor]:
        joints = forward_kinematics(self.skeleton, state.params)
        residuals, points_cam = self.residuals(state)
        d_point, d_camera = reprojection_jacobians(
            joints[self.landmarks],
            state.rotations[self.frames],
            state.translations[self.frames],
            points_cam,
            self.obs.intrinsics,
        )
        d_hand = fk_jacobian(self.skeleton, state.params).reshape(-1, 3, NUM_PARAMS)
        jac = torch.zeros(len(self.frames), 2, self.num_params, dtype=residuals.dtype)
        jac[:, :, :NUM_PARAMS] = d_point @ d_hand[self.landmarks]
        rows = torch.arange(len(self.frames))
        for frame, col in self.camera_column.items():
            sel = rows[self.frames == frame]
            jac[sel, :, col : col + 6] = d_camera[sel]
        return whiten(residuals, jac, self.weights, self.huber_width)

    def retract(self, state: JointState, delta: torch.Tensor) -> JointState:
        params = state.params.retract(delta[:NUM_PARAMS], self.skeleton)
        rotations, translations = state.rotations.clone(), state.translations.clone()
        if self.free_cameras:
            cams = torch.tensor(self.free_cameras)
            steps = delta[NUM_PARAMS:].reshape(-1, 6)
            rotations[cams] = rotation_exp(steps[:, :3]) @ rotations[cams]
            translations[cams] = translations[cams] + steps[:, 3:]
        return JointState(params, rotations, translations)

    def norm(self, state: JointState) -> float:
        return (
            torch.linalg.vector_norm(state.params.palm_pose.translation)
            + torch.linalg.vector_norm(state.translations[self.free_cameras])
        ).item()


def _initial_state(params: HandParams, cameras: list[RigidTransform | None]) -> tuple[JointState, torch.Tensor]:
    registered = torch.tensor([c is not None for c in cameras])
    poses = [c if c is not None else RigidTransform.identity() for c in cameras]
    rotations, translations = stack_poses(poses)
    return JointState(params, rotations, translations), registered


def hand_reprojection_cost(
    skeleton: HandSkeleton,
    obs: ObservationSet,
    params: HandParams,
    cameras: list[RigidTransform | None],
    cfg: SolverConfig | None = None,
) -> tuple[float, float]:
    """Plain and robust reprojection costs of the posed hand seen by `cameras`."""
    cfg = cfg or SolverConfig()
    state, registered = _initial_state(params, cameras)
    problem = HandReprojectionProblem(skeleton, obs, registered, cfg)
    return problem.plain_cost(state), problem.cost(state)


def joint_hand_sfm(
    skeleton: HandSkeleton,
    obs: ObservationSet,
    init_params: HandParams,
    init_cams: list[RigidTransform | None],
    cfg: SolverConfig | None = None,
) -> JointResult:
    """Levenberg-Marquardt over the hand parameters and all registered cameras but the first."""
    cfg = cfg or SolverConfig()
    if init_cams[0] is None:
        raise ValueError("The anchor frame must be registered.")
    start, registered = _initial_state(init_params, init_cams)
    problem = HandReprojectionProblem(skeleton, obs, registered, cfg)
    state, report = levenberg_marquardt(problem, start, cfg)
    if not problem.cost(state) <= problem.cost(start):
        logging.warning("Joint solve raised the cost; keeping the initialization.")
        state = start

    cameras = [
        None if cam is None else RigidTransform(state.rotations[f], state.translations[f], check=False)
        for f, cam in enumerate(init_cams)
    ]
    cameras[0] = RigidTransform.identity()
    result = JointResult(state.params, cameras, problem.cost(state), problem.plain_cost(state), report)
    log = logging.info if report.converged else logging.warning
    log(
        "Joint hand/camera solve: %d iterations (%s), reprojection cost %.6g px^2.",
        report.iterations,
        report.reason,
        result.final_cost,
    )
    return result
