"""
Object-side data: triangle meshes with a nearest-triangle index, per-vertex
contact maps and depth point clouds.
"""
from __future__ import annotations

import logging
from collections import namedtuple
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import torch
import trimesh
from scipy.spatial import cKDTree

from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.utils.common import as_tensor

MIN_AREA = 1e-14  # m^2
MIN_CLOUD_SIZE = 100

Closest = namedtuple("Closest", "points distances faces barycentric")


class TriMesh:
    """Triangle mesh in meters; zero-area triangles are dropped at construction.

    Nearest-point queries use a kd-tree over triangle centroids: the true
    nearest triangle lies within the nearest centroid distance plus the
    largest centroid-to-corner radius, so a ball query yields an exact
    candidate set.
    """

    def __init__(self, vertices, triangles):
        vertices = np.asarray(vertices, dtype=np.float64)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3 or not np.isfinite(vertices).all():
            raise ValueError(f"Vertices must be a finite (n, 3) array, got shape {vertices.shape}.")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError(f"Triangles must be an (m, 3) index array, got shape {triangles.shape}.")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("Triangle indices out of range.")

        mesh = trimesh.Trimesh(vertices=vertices, faces=triangles, process=False)
        keep = mesh.area_faces > MIN_AREA
        if not keep.all():
            logging.info("Dropping %d degenerate triangles.", int((~keep).sum()))
            mesh = trimesh.Trimesh(vertices=vertices, faces=triangles[keep], process=False)
        if len(mesh.faces) == 0:
            raise ValueError("Mesh has no non-degenerate triangles.")
        self.mesh = mesh

    @classmethod
    def from_trimesh(cls, mesh: trimesh.Trimesh) -> TriMesh:
        return cls(mesh.vertices, mesh.faces)

    @classmethod
    def from_file(cls, path: Path | str) -> TriMesh:
        mesh = trimesh.load(str(path), force="mesh", process=False)
        logging.info("Loaded mesh %s with %d vertices.", path, len(mesh.vertices))
        return cls.from_trimesh(mesh)

    def to_file(self, path: Path | str):
        path = Path(path)
        if path.suffix.lower() == ".obj":
            # Positions only, so loading keeps one vertex per contact value
            path.write_text(trimesh.exchange.obj.export_obj(self.mesh, include_normals=False, include_texture=False))
        else:
            self.mesh.export(str(path))

    @property
    def num_vertices(self) -> int:
        return len(self.mesh.vertices)

    @cached_property
    def vertices(self) -> torch.Tensor:
        return as_tensor(self.mesh.vertices)

    @cached_property
    def triangles(self) -> torch.Tensor:
        return torch.as_tensor(np.asarray(self.mesh.faces), dtype=torch.long)

    @cached_property
    def face_normals(self) -> torch.Tensor:
        return as_tensor(self.mesh.face_normals)

    @cached_property
    def vertex_normals(self) -> torch.Tensor:
        return as_tensor(self.mesh.vertex_normals)

    @cached_property
    def _index(self) -> tuple[cKDTree, float]:
        corners = self.mesh.triangles
        centroids = corners.mean(axis=1)
        radius = np.linalg.norm(corners - centroids[:, None, :], axis=-1).max()
        return cKDTree(centroids), float(radius)

    def transformed(self, pose: RigidTransform) -> TriMesh:
        """The mesh with vertices mapped by `pose`."""
        return TriMesh(pose.apply(self.vertices).numpy(), self.mesh.faces)

    def closest_points(self, points) -> Closest:
        """Closest surface points, distances, triangle ids and barycentric coordinates."""
        queries = as_tensor(points).detach().numpy().reshape(-1, 3)
        tree, radius = self._index
        nearest, _ = tree.query(queries)
        candidates = tree.query_ball_point(queries, r=nearest + radius + 1e-12)

        owners = np.repeat(np.arange(len(queries)), [len(c) for c in candidates])
        faces = np.concatenate([np.asarray(c, dtype=np.int64) for c in candidates])
        corners = self.mesh.triangles[faces]
        closest = trimesh.triangles.closest_point(corners, queries[owners])
        dist = np.linalg.norm(closest - queries[owners], axis=-1)

        # Per query, the candidate with the smallest distance (ties: lowest triangle id)
        order = np.lexsort((faces, dist, owners))
        _, first = np.unique(owners[order], return_index=True)
        best = order[first]
        bary = trimesh.triangles.points_to_barycentric(corners[best], closest[best])
        return Closest(as_tensor(closest[best]), as_tensor(dist[best]), torch.as_tensor(faces[best]), as_tensor(bary))

    def signed_distance(self, points) -> torch.Tensor:
        """Distance to the surface, negative on the inner side of the nearest triangle."""
        points = as_tensor(points)
        closest = self.closest_points(points)
        side = ((points - closest.points) * self.face_normals[closest.faces]).sum(dim=-1)
        return torch.where(side < 0, -closest.distances, closest.distances)

    def interpolated_normals(self, closest: Closest) -> torch.Tensor:
        normals = (closest.barycentric[:, :, None] * self.vertex_normals[self.triangles[closest.faces]]).sum(dim=1)
        return normals / torch.linalg.vector_norm(normals, dim=-1, keepdim=True).clamp(min=1e-12)

    def sample(self, count: int, seed: int | None = None) -> torch.Tensor:
        """Area-uniform surface samples."""
        points, _ = trimesh.sample.sample_surface(self.mesh, count, seed=seed)
        return as_tensor(points)


def make_box(extents=(0.10, 0.06, 0.04), max_edge: float = 0.005) -> TriMesh:
    box = trimesh.creation.box(extents=extents)
    vertices, faces = trimesh.remesh.subdivide_to_size(box.vertices, box.faces, max_edge=max_edge)
    return TriMesh(vertices, faces)


def make_sphere(radius: float = 0.06, subdivisions: int = 4) -> TriMesh:
    return TriMesh.from_trimesh(trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius))


@dataclass(frozen=True, eq=False)
class ContactMap:
    """Per-vertex contact values in [0, 1]."""

    values: torch.Tensor

    def __post_init__(self):
        values = as_tensor(self.values)
        if values.ndim != 1 or not torch.isfinite(values).all():
            raise ValueError("Contact values must be a finite vector.")
        object.__setattr__(self, "values", values.clamp(0.0, 1.0))

    @classmethod
    def from_file(cls, path: Path | str, num_vertices: int) -> ContactMap:
        """Reads one value per line; line i belongs to vertex i."""
        values = np.loadtxt(path, dtype=np.float64, ndmin=1)
        if len(values) != num_vertices:
            raise ValueError(f"Contact map {path} has {len(values)} values for {num_vertices} vertices.")
        return cls(values)

    def to_file(self, path: Path | str):
        np.savetxt(path, self.values.numpy(), fmt="%.17g")

    def contacted(self, threshold: float) -> torch.Tensor:
        return self.values >= threshold


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points (n, 3) in meters in the sensor frame."""

    points: torch.Tensor

    def __post_init__(self):
        points = as_tensor(self.points).reshape(-1, 3)
        if not torch.isfinite(points).all():
            raise ValueError("Point cloud contains non-finite points.")
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_file(cls, path: Path | str) -> PointCloud:
        """ASCII xyz, one point per line; extra columns are ignored."""
        values = np.loadtxt(path, dtype=np.float64, ndmin=2)
        if values.size == 0:
            return cls(np.zeros((0, 3)))
        if values.shape[1] < 3:
            raise ValueError(f"Point cloud {path} needs 3 columns, got {values.shape[1]}.")
        return cls(values[:, :3])

    def to_file(self, path: Path | str):
        np.savetxt(path, self.points.numpy(), fmt="%.17g")

    def transformed(self, pose: RigidTransform) -> PointCloud:
        return PointCloud(pose.apply(self.points))

    def check_size(self, minimum: int = MIN_CLOUD_SIZE):
        if len(self) < minimum:
            raise ValueError(f"Point cloud has {len(self)} points, need at least {minimum}.")
