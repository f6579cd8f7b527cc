from __future__ import annotations

from dataclasses import dataclass

import torch

from grasp_capture.geom.so3 import is_rotation, rotation_exp, rotation_log
from grasp_capture.utils.common import DTYPE, as_tensor

# Points are tensors of shape (..., 3) in meters; pixels are tensors of shape (..., 2).
Vec3 = torch.Tensor
PixelPoint = torch.Tensor
AxisAngle = torch.Tensor


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3) mapping frame-b coordinates to frame-a coordinates (^aT_b)."""

    rotation: torch.Tensor
    translation: torch.Tensor
    check: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_tensor(self.rotation))
        object.__setattr__(self, "translation", as_tensor(self.translation))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError(
                f"Expected (3, 3) rotation and (3,) translation, got "
                f"{tuple(self.rotation.shape)} and {tuple(self.translation.shape)}."
            )
        if self.check:
            if not torch.isfinite(self.translation).all():
                raise ValueError("Translation must be finite.")
            if not is_rotation(self.rotation.detach()):
                raise ValueError("Rotation is not orthonormal with determinant +1.")

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_matrix(cls, matrix) -> RigidTransform:
        matrix = as_tensor(matrix)
        if matrix.shape != (4, 4):
            raise ValueError(f"Expected a 4x4 matrix, got {tuple(matrix.shape)}.")
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_vector(cls, vector) -> RigidTransform:
        """Builds the transform from (axis-angle, translation)."""
        vector = as_tensor(vector)
        return cls(rotation_exp(vector[:3]), vector[3:])

    def to_vector(self) -> torch.Tensor:
        return torch.cat([rotation_log(self.rotation), self.translation])

    def matrix(self) -> torch.Tensor:
        out = torch.eye(4, dtype=self.rotation.dtype)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> RigidTransform:
        rot_t = self.rotation.transpose(0, 1)
        return RigidTransform(rot_t, -rot_t @ self.translation, check=False)

    def compose(self, other: RigidTransform) -> RigidTransform:
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            check=False,
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return self.compose(other)

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return points @ self.rotation.transpose(0, 1) + self.translation

    def retract(self, delta: torch.Tensor) -> RigidTransform:
        """Left perturbation: R <- exp(w) R, t <- t + v for delta = (w, v)."""
        return RigidTransform(
            rotation_exp(delta[:3]) @ self.rotation,
            self.translation + delta[3:],
            check=False,
        )

    def scaled(self, scale: float) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation * scale, check=False)

    def distance(self, other: RigidTransform) -> tuple[float, float]:
        """Rotation angle (rad) and translation distance (m) between two transforms."""
        rel = self.rotation.transpose(0, 1) @ other.rotation
        angle = torch.linalg.vector_norm(rotation_log(rel))
        return angle.item(), torch.linalg.vector_norm(self.translation - other.translation).item()

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: torch.Tensor
    translation: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_tensor(self.rotation))
        object.__setattr__(self, "translation", as_tensor(self.translation))
        if not self.scale > 0:
            raise ValueError(f"Scale must be positive, got {self.scale}.")
        if not is_rotation(self.rotation.detach()):
            raise ValueError("Rotation is not orthonormal with determinant +1.")

    @property
    def rigid(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation, check=False)

    def matrix(self) -> torch.Tensor:
        out = torch.eye(4, dtype=self.rotation.dtype)
        out[:3, :3] = self.scale * self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return self.scale * points @ self.rotation.transpose(0, 1) + self.translation
