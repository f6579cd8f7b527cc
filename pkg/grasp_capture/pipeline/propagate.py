from __future__ import annotations

import torch

from grasp_capture.geom.transforms import RigidTransform

FramePoses = tuple[RigidTransform, RigidTransform]


def propagate_poses(
    camera_poses: list[RigidTransform | None],
    T_adj: RigidTransform,
    wTo: RigidTransform,
    wTp: RigidTransform,
) -> list[FramePoses | None]:
    """Object and palm poses ^cT_o, ^cT_p seen from every registered camera; `None` elsewhere."""
    wTo_grasped = T_adj @ wTo
    out = []
    for wTc in camera_poses:
        if wTc is None:
            out.append(None)
            continue
        cTw = wTc.inverse()
        out.append((cTw @ wTo_grasped, cTw @ wTp))
    return out


def posed_landmarks(camera_poses: list[RigidTransform | None], joints: torch.Tensor) -> list[torch.Tensor | None]:
    """World landmarks (21, 3) expressed in every registered camera frame."""
    return [None if wTc is None else wTc.inverse().apply(joints) for wTc in camera_poses]
