"""
Hand-object contact energy on a capsule proxy of the hand.

The energy attracts contacted object vertices to the closest hand segment,
repels nearby non-contacted vertices beyond a margin and penalizes hand
samples inside the object. Distances to the hand use a smooth minimum over
the capsules; gradients come from autograd through forward kinematics.
"""
from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import trimesh

from grasp_capture.contact.mesh import ContactMap, TriMesh
from grasp_capture.geom.so3 import rotation_exp
from grasp_capture.hand.kinematics import pose_landmarks
from grasp_capture.hand.skeleton import NUM_PARAMS, HandParams, HandSkeleton
from grasp_capture.utils.common import DTYPE

EnergyTerms = namedtuple("EnergyTerms", "attraction repulsion penetration")

AXIS_STATIONS = (0.0, 0.25, 0.5, 0.75, 1.0)
RING_SIZE = 8


@dataclass
class ContactConfig:
    contact_threshold: float = 0.4
    # Repulsion margin and gating radius (m)
    margin: float = 0.004
    near: float = 0.010
    w_attract: float = 1.0
    w_repel: float = 0.5
    w_penetrate: float = 10.0
    # Smooth-min temperature (m)
    temperature: float = 0.001

    def __post_init__(self):
        if not 0 < self.contact_threshold <= 1:
            raise ValueError(f"Contact threshold must lie in (0, 1], got {self.contact_threshold}.")
        for name in ["margin", "near", "temperature"]:
            if not getattr(self, name) > 0:
                raise ValueError(f"`{name}` must be positive, got {getattr(self, name)}.")
        for name in ["w_attract", "w_repel", "w_penetrate"]:
            if getattr(self, name) < 0:
                raise ValueError(f"`{name}` must be non-negative, got {getattr(self, name)}.")


class CapsuleProxy:
    """21 capsules bound to landmark pairs: four per finger, then the palm."""

    def __init__(self, skeleton: HandSkeleton):
        self.skeleton = skeleton
        self.pairs, self.radii = skeleton.capsules()
        if (self.radii <= 0).any():
            raise ValueError("Capsule radii must be positive.")

    def __len__(self) -> int:
        return len(self.radii)

    def segments(self, joints: torch.Tensor, scale: float | torch.Tensor = 1.0):
        """Endpoints (21, 3), (21, 3) and radii (21,) for posed landmarks."""
        return joints[self.pairs[:, 0]], joints[self.pairs[:, 1]], self.radii * scale

    def distances(self, points: torch.Tensor, joints: torch.Tensor, scale=1.0) -> torch.Tensor:
        """Signed distances (n, 21) from points to every capsule surface."""
        a, b, radii = self.segments(joints, scale)
        ab = b - a
        t = (((points[:, None, :] - a) * ab).sum(-1) / (ab * ab).sum(-1).clamp(min=1e-18)).clamp(0.0, 1.0)
        offset = points[:, None, :] - (a + t[..., None] * ab)
        return (offset.pow(2).sum(-1) + 1e-30).sqrt() - radii

    def samples(self, joints: torch.Tensor, scale=1.0) -> torch.Tensor:
        """Points on and inside the capsules: axis stations, radial rings and the two cap apexes."""
        a, b, radii = self.segments(joints, scale)
        ab = b - a
        axis = ab / torch.linalg.vector_norm(ab, dim=-1, keepdim=True).clamp(min=1e-12)
        with torch.no_grad():
            ref = torch.eye(3, dtype=DTYPE)[axis.abs().argmin(dim=-1)]
        e1 = torch.linalg.cross(axis, ref)
        e1 = e1 / torch.linalg.vector_norm(e1, dim=-1, keepdim=True)
        e2 = torch.linalg.cross(axis, e1)

        stations = torch.tensor(AXIS_STATIONS, dtype=DTYPE)
        centers = a[:, None, :] + stations[None, :, None] * ab[:, None, :]
        phi = torch.arange(RING_SIZE, dtype=DTYPE) * (2 * math.pi / RING_SIZE)
        ring = torch.cos(phi)[None, :, None] * e1[:, None, :] + torch.sin(phi)[None, :, None] * e2[:, None, :]
        rings = centers[:, :, None, :] + radii[:, None, None, None] * ring[:, None, :, :]
        apexes = torch.stack([a - radii[:, None] * axis, b + radii[:, None] * axis], dim=1)
        return torch.cat([centers.reshape(-1, 3), rings.reshape(-1, 3), apexes.reshape(-1, 3)])

    def export(self, joints: torch.Tensor, path: Path | str, scale: float = 1.0):
        """Writes the posed capsules as one triangle mesh."""
        a, b, radii = self.segments(joints.detach(), scale)
        parts = []
        for start, end, radius in zip(a.numpy(), b.numpy(), radii.numpy()):
            length = float(np.linalg.norm(end - start))
            capsule = trimesh.creation.capsule(height=length, radius=float(radius))
            # Along +z with the lower sphere centered at the origin
            capsule.apply_translation([0.0, 0.0, -float(radius) - capsule.bounds[0, 2]])
            transform = trimesh.geometry.align_vectors([0.0, 0.0, 1.0], (end - start) / max(length, 1e-12))
            transform[:3, 3] = start
            capsule.apply_transform(transform)
            parts.append(capsule)
        trimesh.util.concatenate(parts).export(str(path))


def smooth_min(distances: torch.Tensor, temperature: float) -> torch.Tensor:
    return -temperature * torch.logsumexp(-distances / temperature, dim=-1)


def _posed(params: HandParams, skeleton: HandSkeleton, delta: torch.Tensor) -> torch.Tensor:
    """Landmarks at `params.retract(delta)` without clamping, differentiable in `delta`."""
    rotation = rotation_exp(delta[:3]) @ params.palm_pose.rotation
    translation = params.palm_pose.translation + delta[3:6]
    return pose_landmarks(skeleton, rotation, translation, params.palm_scale, params.angles + delta[6:])


def energy_terms(
    params: HandParams,
    proxy: CapsuleProxy,
    mesh: TriMesh,
    cmap: ContactMap,
    cfg: ContactConfig | None = None,
    delta: torch.Tensor | None = None,
) -> EnergyTerms:
    """Weighted attraction, repulsion and penetration terms as tensors."""
    cfg = cfg or ContactConfig()
    if len(cmap.values) != mesh.num_vertices:
        raise ValueError(f"Contact map has {len(cmap.values)} values for {mesh.num_vertices} vertices.")
    if delta is None:
        delta = torch.zeros(NUM_PARAMS, dtype=DTYPE)
    joints = _posed(params, proxy.skeleton, delta)

    # Object vertices against the hand
    dist = proxy.distances(mesh.vertices, joints, params.palm_scale)
    d = smooth_min(dist, cfg.temperature)
    contacted = cmap.contacted(cfg.contact_threshold)
    with torch.no_grad():
        near = dist.min(dim=-1).values < cfg.near
    repelled = ~contacted & near
    attraction = cfg.w_attract * d[contacted].pow(2).sum()
    repulsion = cfg.w_repel * torch.relu(cfg.margin - d[repelled]).pow(2).sum()

    # Hand samples against the object
    samples = proxy.samples(joints, params.palm_scale)
    with torch.no_grad():
        closest = mesh.closest_points(samples)
        inside = ((samples - closest.points) * mesh.face_normals[closest.faces]).sum(-1) < 0
    gap = ((samples[inside] - closest.points[inside]).pow(2).sum(-1) + 1e-30).sqrt()
    penetration = cfg.w_penetrate * gap.pow(2).sum()
    return EnergyTerms(attraction, repulsion, penetration)


def contact_energy(
    params: HandParams,
    proxy: CapsuleProxy,
    mesh: TriMesh,
    cmap: ContactMap,
    cfg: ContactConfig | None = None,
) -> tuple[float, torch.Tensor]:
    """Energy and its gradient w.r.t. the 26 parameters in the `HandParams.retract` tangent."""
    delta = torch.zeros(NUM_PARAMS, dtype=DTYPE, requires_grad=True)
    terms = energy_terms(params, proxy, mesh, cmap, cfg, delta=delta)
    energy = terms.attraction + terms.repulsion + terms.penetration
    (grad,) = torch.autograd.grad(energy, delta, allow_unused=True)
    if grad is None:
        grad = torch.zeros(NUM_PARAMS, dtype=DTYPE)
    return energy.item(), grad.detach()


def contacted_distance(
    params: HandParams, proxy: CapsuleProxy, mesh: TriMesh, cmap: ContactMap, cfg: ContactConfig | None = None
) -> float:
    """Mean distance from contacted vertices to the nearest capsule surface."""
    cfg = cfg or ContactConfig()
    contacted = cmap.contacted(cfg.contact_threshold)
    if not contacted.any():
        return 0.0
    with torch.no_grad():
        joints = _posed(params, proxy.skeleton, torch.zeros(NUM_PARAMS, dtype=DTYPE))
        dist = proxy.distances(mesh.vertices[contacted], joints, params.palm_scale)
    return dist.min(dim=-1).values.mean().item()
