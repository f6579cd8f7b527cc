from __future__ import annotations

import logging
import math

import torch

from grasp_capture.geom.camera import CameraIntrinsics
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.sfm.least_squares import SolverConfig, levenberg_marquardt
from grasp_capture.sfm.reprojection import BundleState, ReprojectionProblem
from grasp_capture.utils.common import SolveReport
from grasp_capture.utils.errors import InsufficientCorrespondences, NonConvergence

MIN_REGISTER = 4


def solve_frame(
    joints: torch.Tensor,
    uv: torch.Tensor,
    confidence: torch.Tensor,
    intrinsics: CameraIntrinsics,
    init: RigidTransform | None = None,
    cfg: SolverConfig | None = None,
) -> tuple[RigidTransform, SolveReport]:
    """Camera pose ^wT_c minimizing the robust reprojection error of one frame, points held fixed."""
    cfg = cfg or SolverConfig()
    init = init or RigidTransform.identity()
    usable = (confidence >= cfg.confidence_threshold) & torch.isfinite(joints).all(dim=-1)
    landmarks = usable.nonzero().squeeze(-1)
    if len(landmarks) < MIN_REGISTER:
        raise InsufficientCorrespondences(
            f"Only {len(landmarks)} landmarks with 3D estimates are detected, need {MIN_REGISTER}."
        )

    problem = ReprojectionProblem(
        intrinsics,
        frames=torch.zeros(len(landmarks), dtype=torch.long),
        landmarks=landmarks,
        uv=uv[landmarks],
        weights=confidence[landmarks],
        free_cameras=[0],
        free_points=[],
        huber_width=cfg.huber_width,
    )
    state = BundleState(init.rotation[None], init.translation[None], torch.nan_to_num(joints))
    if not math.isfinite(problem.cost(state)):
        raise NonConvergence("Landmarks lie behind the initial camera.", result=init)
    state, report = levenberg_marquardt(problem, state, cfg)
    return RigidTransform(state.rotations[0], state.translations[0], check=False), report


def register_frame(
    joints: torch.Tensor,
    uv: torch.Tensor,
    confidence: torch.Tensor,
    intrinsics: CameraIntrinsics,
    init: RigidTransform | None = None,
    cfg: SolverConfig | None = None,
) -> RigidTransform:
    """Registers a frame against the current landmarks; raises `NonConvergence` at the iteration cap."""
    pose, report = solve_frame(joints, uv, confidence, intrinsics, init=init, cfg=cfg)
    if not report.converged:
        raise NonConvergence(
            f"Frame registration hit {report.iterations} iterations at cost {report.cost:.3g}.",
            result=pose,
        )
    logging.debug("Registered frame in %d iterations (cost %.3g).", report.iterations, report.cost)
    return pose
