"""
Damped least-squares inverse kinematics on the 20 joint angles with the palm held fixed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch

from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.kinematics import fk_jacobian, forward_kinematics
from grasp_capture.hand.skeleton import NON_RIGID_INDICES, NUM_ANGLES, HandParams, HandSkeleton
from grasp_capture.utils.common import DTYPE


@dataclass
class IkConfig:
    damping: float = 1e-2
    damping_up: float = 2.0
    damping_down: float = 0.5
    max_damping: float = 1e10
    max_iterations: int = 200
    # Landmark RMS (m) at which the targets count as reached
    tolerance: float = 1e-8
    # Largest angle change per iteration (rad)
    step_limit: float = 0.5
    min_decrease: float = 1e-12
    # Stationary solutions above this RMS (m) are flagged as unreachable
    max_residual: float = 0.02

    def __post_init__(self):
        if not self.damping > 0:
            raise ValueError(f"Damping must be positive, got {self.damping}.")
        if not self.tolerance > 0:
            raise ValueError(f"Tolerance must be positive, got {self.tolerance}.")
        if not self.step_limit > 0:
            raise ValueError(f"Step limit must be positive, got {self.step_limit}.")
        if self.max_iterations < 0:
            raise ValueError("The iteration cap must be non-negative.")


@dataclass(frozen=True, eq=False)
class IkResult:
    angles: torch.Tensor
    rms: float
    iterations: int
    converged: bool
    reason: str
    history: tuple[float, ...] = ()


def solve_ik(
    skeleton: HandSkeleton,
    palm_pose: RigidTransform,
    palm_scale: float,
    targets: torch.Tensor,
    cfg: IkConfig | None = None,
    init_angles: torch.Tensor | None = None,
) -> IkResult:
    """Fits the angles so the non-rigid landmarks reach `targets` (21, 3); NaN targets are ignored.

    Never raises for unreachable targets: the best angles are returned with
    `converged=False`.
    """
    cfg = cfg or IkConfig()
    if init_angles is None:
        init_angles = torch.zeros(NUM_ANGLES, dtype=DTYPE)
    landmarks = [i for i in NON_RIGID_INDICES if torch.isfinite(targets[i]).all()]
    rows = torch.tensor([3 * i + k for i in landmarks for k in range(3)], dtype=torch.long)
    goal = targets[landmarks]

    def residual(params: HandParams) -> torch.Tensor:
        return (forward_kinematics(skeleton, params)[landmarks] - goal).reshape(-1)

    def rms_of(res: torch.Tensor) -> float:
        return math.sqrt((res**2).sum().item() / max(len(landmarks), 1))

    params = HandParams(palm_pose, palm_scale, skeleton.clamp(init_angles))
    res = residual(params)
    rms = rms_of(res)
    history = [rms]
    damping = cfg.damping
    reason = "max_iterations"
    iterations = 0

    while iterations < cfg.max_iterations:
        if rms < cfg.tolerance:
            reason = "tolerance"
            break
        jac = fk_jacobian(skeleton, params)[rows, 6:]
        hessian = jac.transpose(0, 1) @ jac
        grad = jac.transpose(0, 1) @ res
        diag = torch.diagonal(hessian) + 1e-12

        accepted = False
        while not accepted:
            step = -torch.linalg.solve(hessian + damping * torch.diag(diag), grad)
            largest = step.abs().max()
            if largest > cfg.step_limit:
                step = step * (cfg.step_limit / largest)
            candidate = params.with_angles(skeleton.clamp(params.angles + step))
            new_res = residual(candidate)
            new_rms = rms_of(new_res)
            if new_rms < rms - cfg.min_decrease:
                accepted = True
                damping = max(damping * cfg.damping_down, 1e-12)
            else:
                damping *= cfg.damping_up
                if damping > cfg.max_damping:
                    reason = "stationary"
                    break
        if not accepted:
            break
        params, res, rms = candidate, new_res, new_rms
        history.append(rms)
        iterations += 1

    if rms < cfg.tolerance:
        reason = "tolerance"
    converged = reason == "tolerance" or (reason == "stationary" and rms <= cfg.max_residual)
    log = logging.info if converged else logging.warning
    log("IK: %d iterations (%s), landmark RMS %.3g m.", iterations, reason, rms)
    return IkResult(params.angles, rms, iterations, converged, reason, tuple(history))
