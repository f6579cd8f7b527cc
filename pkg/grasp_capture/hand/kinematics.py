"""
Forward kinematics of the 20-DOF hand as a product of exponentials.

Each finger is a chain of four revolute joints applied in the order base
abduction, base flexion, middle flexion, distal flexion. Joint axes and
pivots are given in the palm frame of the rest template; the spatial axis
of a joint is its rest axis moved by the joints above it.
"""
from __future__ import annotations

import torch

from grasp_capture.geom.so3 import hat, rotation_exp
from grasp_capture.hand.skeleton import (
    BASE_ABDUCTION,
    BASE_FLEXION,
    DISTAL_FLEXION,
    MIDDLE_FLEXION,
    NUM_ANGLES,
    NUM_LANDMARKS,
    NUM_PARAMS,
    HandParams,
    HandSkeleton,
    JointSet3D,
)

# Chain order within a finger and the landmark each joint pivots about
# (0 = base, 1 = middle, 2 = distal).
CHAIN = (
    (BASE_ABDUCTION, 0),
    (BASE_FLEXION, 0),
    (MIDDLE_FLEXION, 1),
    (DISTAL_FLEXION, 2),
)


def finger_chain(
    skeleton: HandSkeleton, angles: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Unit-scale landmarks in the palm frame with the spatial axes and pivots of all joints.

    Returns `(local, axes, pivots)` of shapes (21, 3), (20, 3), (20, 3).
    Differentiable with respect to `angles`.
    """
    rest = skeleton.rest
    local = list(rest.unbind(0))
    axes: list[torch.Tensor | None] = [None] * NUM_ANGLES
    pivots: list[torch.Tensor | None] = [None] * NUM_ANGLES

    for f, landmarks in enumerate(skeleton.finger_landmarks):
        rot = torch.eye(3, dtype=rest.dtype)
        trans = torch.zeros(3, dtype=rest.dtype)
        for k, (slot, pivot_slot) in enumerate(CHAIN):
            idx = 4 * f + slot
            q = rest[landmarks[pivot_slot]]
            axes[idx] = rot @ skeleton.axes[idx]
            pivots[idx] = rot @ q + trans

            # Compose with the rotation about the rest axis through q
            g_rot = rotation_exp(skeleton.axes[idx] * angles[idx])
            trans = rot @ (q - g_rot @ q) + trans
            rot = rot @ g_rot
            if k > 0:
                lm = landmarks[k]
                local[lm] = rot @ rest[lm] + trans

    return torch.stack(local), torch.stack(axes), torch.stack(pivots)


def pose_landmarks(
    skeleton: HandSkeleton,
    rotation: torch.Tensor,
    translation: torch.Tensor,
    scale: float | torch.Tensor,
    angles: torch.Tensor,
) -> JointSet3D:
    """Tensor-level FK; gradients flow to every argument."""
    local, _, _ = finger_chain(skeleton, angles)
    return scale * local @ rotation.transpose(0, 1) + translation


def forward_kinematics(skeleton: HandSkeleton, params: HandParams) -> JointSet3D:
    return pose_landmarks(
        skeleton,
        params.palm_pose.rotation,
        params.palm_pose.translation,
        params.palm_scale,
        params.angles,
    )


def downstream(skeleton: HandSkeleton) -> list[tuple[int, ...]]:
    """Landmarks moved by each of the 20 angles."""
    out: list[tuple[int, ...]] = [()] * NUM_ANGLES
    for f, landmarks in enumerate(skeleton.finger_landmarks):
        for k, (slot, _) in enumerate(CHAIN):
            out[4 * f + slot] = tuple(landmarks[max(k, 1) :])
    return out


def fk_jacobian(skeleton: HandSkeleton, params: HandParams) -> torch.Tensor:
    """Jacobian (63, 26) of the stacked landmarks.

    Columns follow `HandParams.retract`: palm rotation tangent, palm
    translation, then the 20 angles.
    """
    local, axes, pivots = finger_chain(skeleton, params.angles)
    rot = params.palm_pose.rotation
    scale = params.palm_scale
    joints = scale * local @ rot.transpose(0, 1) + params.palm_pose.translation

    jac = torch.zeros(NUM_LANDMARKS, 3, NUM_PARAMS, dtype=joints.dtype)
    # Left perturbation R <- exp(w) R
    jac[:, :, :3] = -hat(joints - params.palm_pose.translation)
    jac[:, :, 3:6] = torch.eye(3, dtype=joints.dtype)
    for idx, moved in enumerate(downstream(skeleton)):
        moved = list(moved)
        d_local = torch.linalg.cross(axes[idx].expand(len(moved), 3), local[moved] - pivots[idx])
        jac[moved, :, 6 + idx] = scale * d_local @ rot.transpose(0, 1)
    return jac.reshape(3 * NUM_LANDMARKS, NUM_PARAMS)
