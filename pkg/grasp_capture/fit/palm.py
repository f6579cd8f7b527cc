from __future__ import annotations

import torch

from grasp_capture.geom.align import umeyama_align
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.skeleton import HandSkeleton, rigid_points
from grasp_capture.utils.errors import DegenerateConfiguration


def fit_palm_pose(joints: torch.Tensor, skeleton: HandSkeleton) -> tuple[RigidTransform, float]:
    """Similarity from the template's rigid points onto those of `joints`, split into pose and scale."""
    target = rigid_points(joints)
    if not torch.isfinite(target).all():
        raise DegenerateConfiguration("Not all six rigid landmarks are reconstructed.")
    similarity = umeyama_align(rigid_points(skeleton.rest), target)
    return similarity.rigid, similarity.scale
