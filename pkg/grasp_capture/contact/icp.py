from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from grasp_capture.contact.mesh import MIN_CLOUD_SIZE, PointCloud, TriMesh
from grasp_capture.geom.align import umeyama
from grasp_capture.geom.so3 import rotation_exp
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.utils.errors import IllConditioned


@dataclass
class IcpConfig:
    max_iterations: int = 100
    # Change of the correspondence RMS (m) at which ICP stops
    tolerance: float = 1e-7
    # Smallest admissible eigenvalue ratio of the point-to-plane information matrix
    min_conditioning: float = 1e-4
    min_points: int = MIN_CLOUD_SIZE


@dataclass(frozen=True, eq=False)
class IcpResult:
    pose: RigidTransform
    rms: float
    iterations: int
    converged: bool
    reason: str


def conditioning(points: torch.Tensor, normals: torch.Tensor) -> float:
    """Eigenvalue ratio of the point-to-plane information matrix, in units of the cloud extent."""
    centered = points - points.mean(dim=0)
    length = centered.pow(2).sum(dim=-1).mean().sqrt().clamp(min=1e-12)
    rows = torch.cat([torch.linalg.cross(centered, normals) / length, normals], dim=-1)
    eig = torch.linalg.eigvalsh(rows.transpose(0, 1) @ rows)
    return (eig[0] / eig[-1]).item()


def correspondences(cloud: PointCloud, mesh: TriMesh, pose: RigidTransform):
    """Closest mesh points in the object frame for a cloud in the world frame."""
    return mesh.closest_points(pose.inverse().apply(cloud.points))


def plane_step(cloud: PointCloud, mesh: TriMesh, pose: RigidTransform, closest) -> RigidTransform:
    """Gauss-Newton step on the point-to-plane distances, about the centroid of the matched points."""
    matched = pose.apply(closest.points)
    normals = mesh.face_normals[closest.faces] @ pose.rotation.transpose(0, 1)
    center = matched.mean(dim=0)
    rows = torch.cat([torch.linalg.cross(matched - center, normals), normals], dim=-1)
    distances = ((cloud.points - matched) * normals).sum(dim=-1)
    step = torch.linalg.lstsq(rows, distances[:, None]).solution.squeeze(-1)
    rotation = rotation_exp(step[:3])
    return RigidTransform(rotation, center - rotation @ center + step[3:], check=False)


def icp_register(
    cloud: PointCloud, mesh: TriMesh, init: RigidTransform, cfg: IcpConfig | None = None
) -> IcpResult:
    """ICP for the object pose ^wT_o; the RMS is evaluated at the returned pose.

    Each iteration takes a point-to-plane Gauss-Newton step and falls back
    to the closed-form point-to-point update when that step raises the RMS.
    """
    cfg = cfg or IcpConfig()
    cloud.check_size(cfg.min_points)
    pose = init
    closest = correspondences(cloud, mesh, pose)
    rms = closest.distances.pow(2).mean().sqrt().item()
    normals = mesh.interpolated_normals(closest) @ pose.rotation.transpose(0, 1)
    ratio = conditioning(cloud.points, normals)
    if ratio < cfg.min_conditioning:
        raise IllConditioned(f"Correspondences leave the pose unobservable (eigenvalue ratio {ratio:.2e}).")

    reason = "max_iterations"
    iterations = 0
    while iterations < cfg.max_iterations:
        if rms < cfg.tolerance:
            reason = "tolerance"
            break
        iterations += 1
        candidate = plane_step(cloud, mesh, pose, closest) @ pose
        candidate_closest = correspondences(cloud, mesh, candidate)
        candidate_rms = candidate_closest.distances.pow(2).mean().sqrt().item()
        if candidate_rms > rms:
            _, rotation, translation = umeyama(closest.points, cloud.points, estimate_scale=False)
            candidate = RigidTransform(rotation, translation, check=False)
            candidate_closest = correspondences(cloud, mesh, candidate)
            candidate_rms = candidate_closest.distances.pow(2).mean().sqrt().item()
        previous = rms
        pose, closest, rms = candidate, candidate_closest, candidate_rms
        if abs(previous - rms) < cfg.tolerance:
            reason = "tolerance"
            break

    converged = reason == "tolerance"
    log = logging.info if converged else logging.warning
    log("ICP: %d iterations, RMS %.3g m (%s).", iterations, rms, reason)
    return IcpResult(pose, rms, iterations, converged, reason)


def estimate_adjustment(
    grasp_cloud: PointCloud, mesh: TriMesh, wTo: RigidTransform, cfg: IcpConfig | None = None
) -> tuple[RigidTransform, IcpResult]:
    """T_adj such that the grasped object sits at T_adj ^wT_o."""
    result = icp_register(grasp_cloud, mesh, wTo, cfg)
    return result.pose @ wTo.inverse(), result
