from __future__ import annotations

import torch

from grasp_capture.contact.energy import CapsuleProxy
from grasp_capture.eval.metrics import iou, pose_errors, rmse, summarize
from grasp_capture.geom.align import umeyama
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.pipeline.io import CaptureResult
from grasp_capture.synth.scene import SyntheticScene, contact_values


def gauge_alignment(joints: torch.Tensor, target: torch.Tensor) -> RigidTransform:
    """Best rigid map of `joints` onto `target` over the landmarks finite in both."""
    valid = torch.isfinite(joints).all(dim=-1) & torch.isfinite(target).all(dim=-1)
    if torch.equal(joints[valid], target[valid]):
        return RigidTransform.identity()
    _, rotation, translation = umeyama(joints[valid], target[valid], estimate_scale=False)
    return RigidTransform(rotation, translation, check=False)


def evaluate(result: CaptureResult, scene: SyntheticScene, contact_threshold: float = 0.4) -> dict[str, float]:
    """Errors of a capture against the scene's ground truth.

    Hand and camera errors are measured after rigidly aligning the recovered
    landmarks onto the true ones; object poses live in the depth frame and are
    compared directly.
    """
    if result.num_frames != scene.obs.num_frames:
        raise ValueError(f"Result has {result.num_frames} frames, the scene {scene.obs.num_frames}.")
    truth = scene.as_result()
    align = gauge_alignment(result.joints, truth.joints)

    metrics = {"eval/joint_rmse": rmse(align.apply(result.joints), truth.joints)}
    metrics.update(pose_errors(align @ result.hand.palm_pose, truth.hand.palm_pose, "palm"))
    angle_errors = (result.hand.angles - truth.hand.angles).abs()
    metrics["eval/angle_error_mean"] = angle_errors.mean().item()
    metrics["eval/angle_error_max"] = angle_errors.max().item()

    rotations, translations = [], []
    for camera, true_camera in zip(result.camera_poses, truth.camera_poses):
        if camera is None or true_camera is None:
            continue
        rotation, translation = pose_errors(align @ camera, true_camera, "camera").values()
        rotations.append(rotation)
        translations.append(translation)
    metrics.update(summarize(rotations, "camera_rot"))
    metrics.update(summarize(translations, "camera_trans"))
    metrics["eval/registered_frames"] = len(rotations)

    metrics.update(pose_errors(result.object_pose_world, truth.object_pose_world, "object"))
    metrics.update(pose_errors(result.adjustment, truth.adjustment, "adjustment"))

    # Contact the recovered grasp would leave on the object
    cfg = scene.config
    grasped = scene.mesh.transformed(result.adjustment @ result.object_pose_world)
    values = contact_values(
        grasped,
        CapsuleProxy(scene.skeleton),
        result.joints,
        result.hand.palm_scale,
        cfg.contact_distance,
        cfg.contact_falloff,
    )
    metrics["eval/contact_iou"] = iou(values >= contact_threshold, scene.contact_map.contacted(contact_threshold))
    return metrics
