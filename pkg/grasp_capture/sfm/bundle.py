"""
Incremental reconstruction and bundle adjustment of the steady hand.

The first frame is the gauge anchor: its camera is the world frame.
Frames that cannot be registered keep a `None` pose and take no part in
the reprojection error.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import torch
from tqdm import tqdm

from grasp_capture.geom.camera import MIN_DEPTH, to_camera
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.skeleton import NUM_LANDMARKS
from grasp_capture.sfm.least_squares import SolverConfig, huber_cost, levenberg_marquardt
from grasp_capture.sfm.observations import ObservationSet
from grasp_capture.sfm.register import register_frame
from grasp_capture.sfm.reprojection import BundleState, ReprojectionProblem, reprojection_residuals
from grasp_capture.sfm.two_view import init_two_view, projection_matrix, rank_partner_frames, triangulate
from grasp_capture.utils.common import DTYPE, SolveReport
from grasp_capture.utils.errors import DegenerateMotion, InsufficientCorrespondences, NonConvergence

REGISTERED = "registered"
EXCLUDED_LOW_CONFIDENCE = "excluded_low_confidence"
EXCLUDED_UNCONVERGED = "excluded_unconverged"


@dataclass(frozen=True, eq=False)
class SfMSolution:
    """Landmarks X (21, 3), NaN where unobserved, and cameras ^wT_c per frame (None if unregistered).

    `final_cost` is the confidence-weighted robust reprojection cost the solver
    minimizes; inside the robust width it is the squared pixel residual.
    `inlier_cost` is the plain sum of squared pixel residuals over the inliers.
    """

    joints: torch.Tensor
    camera_poses: list[RigidTransform | None]
    final_cost: float = math.nan
    inlier_cost: float = math.nan
    residuals: torch.Tensor | None = None
    inliers: torch.Tensor | None = None
    status: list[str] = field(default_factory=list)
    report: SolveReport = SolveReport(math.nan)

    @property
    def num_frames(self) -> int:
        return len(self.camera_poses)

    @property
    def registered(self) -> torch.Tensor:
        return torch.tensor([pose is not None for pose in self.camera_poses])

    @property
    def observed(self) -> torch.Tensor:
        return torch.isfinite(self.joints).all(dim=-1)

    @property
    def converged(self) -> bool:
        return bool(self.report.converged)

    def rms(self) -> float:
        """Root-mean-square pixel residual over the inliers."""
        count = int(self.inliers.sum()) if self.inliers is not None else 0
        return math.sqrt(self.inlier_cost / count) if count else math.nan


def _state(solution: SfMSolution) -> BundleState:
    poses = [p if p is not None else RigidTransform.identity() for p in solution.camera_poses]
    return BundleState(
        torch.stack([p.rotation for p in poses]),
        torch.stack([p.translation for p in poses]),
        torch.nan_to_num(solution.joints),
    )


def _observations(obs: ObservationSet, solution: SfMSolution, cfg: SolverConfig) -> torch.Tensor:
    """Usable (frame, landmark) pairs: confident, registered frame, observed landmark."""
    return obs.mask(cfg.confidence_threshold) & solution.registered[:, None] & solution.observed[None, :]


def evaluate_solution(obs: ObservationSet, solution: SfMSolution, cfg: SolverConfig) -> SfMSolution:
    """Fills residuals, inliers, the robust reprojection cost and the plain inlier cost."""
    used = _observations(obs, solution, cfg)
    frames, landmarks = used.nonzero(as_tuple=True)
    state = _state(solution)
    res, _ = reprojection_residuals(
        state.points[landmarks],
        state.rotations[frames],
        state.translations[frames],
        obs.uv[frames, landmarks],
        obs.intrinsics,
    )
    norms = torch.linalg.vector_norm(res, dim=-1)
    residuals = torch.full((obs.num_frames, NUM_LANDMARKS, 2), math.nan, dtype=DTYPE)
    residuals[frames, landmarks] = res
    inliers = torch.zeros_like(used)
    inliers[frames, landmarks] = norms <= cfg.huber_width
    weights = obs.confidence[frames, landmarks]
    return replace(
        solution,
        residuals=residuals,
        inliers=inliers,
        final_cost=(weights * huber_cost(norms, cfg.huber_width)).sum().item(),
        inlier_cost=(norms[norms <= cfg.huber_width] ** 2).sum().item(),
    )


def triangulate_landmarks(
    obs: ObservationSet, camera_poses: list[RigidTransform | None], joints: torch.Tensor, threshold: float
) -> torch.Tensor:
    """Fills NaN landmarks seen in at least two registered frames by weighted multi-view DLT."""
    joints = joints.clone()
    mask = obs.mask(threshold)
    for landmark in range(NUM_LANDMARKS):
        if torch.isfinite(joints[landmark]).all():
            continue
        frames = [f for f, pose in enumerate(camera_poses) if pose is not None and mask[f, landmark]]
        if len(frames) < 2:
            continue
        projections = torch.stack([projection_matrix(camera_poses[f]) for f in frames])
        xy = obs.intrinsics.normalize(obs.uv[frames, landmark])
        point = triangulate(projections, xy, obs.confidence[frames, landmark])
        depths = torch.stack(
            [to_camera(point, camera_poses[f].rotation, camera_poses[f].translation)[2] for f in frames]
        )
        if torch.isfinite(point).all() and (depths > MIN_DEPTH).all():
            joints[landmark] = point
            logging.debug("Triangulated landmark %d from %d frames.", landmark, len(frames))
    return joints


def initialize(obs: ObservationSet, cfg: SolverConfig | None = None) -> SfMSolution:
    """Two-view initialization followed by per-frame registration."""
    cfg = cfg or SolverConfig()
    threshold = cfg.confidence_threshold
    partners = rank_partner_frames(obs, anchor=0, threshold=threshold)
    init = None
    for partner in partners:
        try:
            init = (partner, *init_two_view(obs, 0, partner, threshold=threshold))
            break
        except (DegenerateMotion, InsufficientCorrespondences) as e:
            logging.info("Skipping initial pair (0, %d): %s", partner, e)
    if init is None:
        raise DegenerateMotion("No frame pair with the first frame admits a two-view initialization.")

    partner, pose_b, joints = init
    poses: list[RigidTransform | None] = [None] * obs.num_frames
    poses[0], poses[partner] = RigidTransform.identity(), pose_b
    status = [EXCLUDED_LOW_CONFIDENCE] * obs.num_frames
    status[0] = status[partner] = REGISTERED

    previous = poses[0]
    for frame in tqdm(range(1, obs.num_frames), desc="Registering frames", leave=False):
        if frame == partner:
            previous = pose_b
            continue
        try:
            poses[frame] = register_frame(
                joints, obs.uv[frame], obs.confidence[frame], obs.intrinsics, init=previous, cfg=cfg
            )
            status[frame] = REGISTERED
            previous = poses[frame]
        except InsufficientCorrespondences as e:
            logging.warning("Frame %d excluded: %s", obs.frame_ids[frame], e)
        except NonConvergence as e:
            status[frame] = EXCLUDED_UNCONVERGED
            logging.warning("Frame %d excluded: %s", obs.frame_ids[frame], e)

    joints = triangulate_landmarks(obs, poses, joints, threshold)
    solution = SfMSolution(joints=joints, camera_poses=poses, status=status)
    logging.info(
        "Registered %d of %d frames, %d landmarks triangulated.",
        int(solution.registered.sum()),
        obs.num_frames,
        int(solution.observed.sum()),
    )
    return evaluate_solution(obs, solution, cfg)


def bundle_adjust(obs: ObservationSet, init: SfMSolution, cfg: SolverConfig | None = None) -> SfMSolution:
    """Jointly refines landmarks and all registered cameras but the anchor.

    Landmarks seen in fewer than two registered frames are excluded and set to NaN.
    """
    cfg = cfg or SolverConfig()
    if init.camera_poses[0] is None:
        raise ValueError("The anchor frame must be registered.")
    if init.registered.sum() < 2:
        raise ValueError(f"Need at least 2 registered frames, got {int(init.registered.sum())}.")

    used = _observations(obs, init, cfg)
    active = used.sum(dim=0) >= 2
    joints = torch.where(active[:, None], init.joints, torch.full_like(init.joints, math.nan))
    if (~active & init.observed).any():
        logging.info("Excluding unobserved landmarks %s.", (~active & init.observed).nonzero().squeeze(-1).tolist())
    used = used & active[None, :]
    frames, landmarks = used.nonzero(as_tuple=True)

    problem = ReprojectionProblem(
        obs.intrinsics,
        frames=frames,
        landmarks=landmarks,
        uv=obs.uv[frames, landmarks],
        weights=obs.confidence[frames, landmarks],
        free_cameras=[f for f in range(1, obs.num_frames) if init.camera_poses[f] is not None],
        free_points=active.nonzero().squeeze(-1).tolist(),
        huber_width=cfg.huber_width,
    )
    state = _state(replace(init, joints=joints))
    state, report = levenberg_marquardt(problem, state, cfg)

    poses = [
        None if pose is None else RigidTransform(state.rotations[f], state.translations[f], check=False)
        for f, pose in enumerate(init.camera_poses)
    ]
    poses[0] = RigidTransform.identity()
    points = torch.where(active[:, None], state.points, torch.full_like(state.points, math.nan))
    solution = evaluate_solution(
        obs, SfMSolution(joints=points, camera_poses=poses, status=list(init.status), report=report), cfg
    )
    start = evaluate_solution(obs, init, cfg)
    if not solution.final_cost <= start.final_cost:
        logging.warning(
            "Bundle adjustment raised the cost from %.6g to %.6g; keeping the initialization.",
            start.final_cost,
            solution.final_cost,
        )
        solution = replace(start, report=report)
    log = logging.info if report.converged else logging.warning
    log(
        "Bundle adjustment: %d iterations (%s), reprojection cost %.6g px^2, RMS %.4g px.",
        report.iterations,
        report.reason,
        solution.final_cost,
        solution.rms(),
    )
    return solution


def reconstruct(obs: ObservationSet, cfg: SolverConfig | None = None) -> SfMSolution:
    cfg = cfg or SolverConfig()
    return bundle_adjust(obs, initialize(obs, cfg), cfg)


def rescale_to_metric(solution: SfMSolution, scale: float) -> SfMSolution:
    """Multiplies landmarks and camera translations by `scale`; residuals are unchanged."""
    if not scale > 0:
        raise ValueError(f"Scale must be positive, got {scale}.")
    return replace(
        solution,
        joints=solution.joints * scale,
        camera_poses=[None if p is None else p.scaled(scale) for p in solution.camera_poses],
    )
