"""
Pinhole camera model. Inputs are assumed undistorted.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import yaml

from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.utils.common import DTYPE, as_tensor
from grasp_capture.utils.errors import PointBehindCamera

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}.")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"Principal point ({self.cx}, {self.cy}) outside the "
                f"{self.width}x{self.height} image."
            )

    @classmethod
    def from_file(cls, path: Path | str) -> CameraIntrinsics:
        """Reads a key-value document with fx, fy, cx, cy, width, height."""
        with Path(path).open() as f:
            values = yaml.safe_load(f)
        missing = {"fx", "fy", "cx", "cy", "width", "height"}.difference(values or {})
        if missing:
            raise ValueError(f"Intrinsics file {path} misses the fields {sorted(missing)}.")
        return cls(
            fx=float(values["fx"]),
            fy=float(values["fy"]),
            cx=float(values["cx"]),
            cy=float(values["cy"]),
            width=int(values["width"]),
            height=int(values["height"]),
        )

    def to_file(self, path: Path | str):
        with Path(path).open("w") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=False)

    def matrix(self) -> torch.Tensor:
        return torch.tensor(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=DTYPE,
        )

    def normalize(self, pixels: torch.Tensor) -> torch.Tensor:
        """Pixel coordinates to normalized image coordinates."""
        return torch.stack(
            [(pixels[..., 0] - self.cx) / self.fx, (pixels[..., 1] - self.cy) / self.fy],
            dim=-1,
        )

    def contains(self, pixels: torch.Tensor, pad: float = 0.1) -> torch.Tensor:
        u, v = pixels[..., 0], pixels[..., 1]
        pad_u, pad_v = pad * self.width, pad * self.height
        return (u >= -pad_u) & (u <= self.width + pad_u) & (v >= -pad_v) & (v <= self.height + pad_v)


def to_camera(points_world: torch.Tensor, rotation: torch.Tensor, translation: torch.Tensor) -> torch.Tensor:
    """Expresses world points in the frame of a camera with pose ^wT_c = (rotation, translation)."""
    return (points_world - translation) @ rotation


def pinhole(points_cam: torch.Tensor, intrinsics: CameraIntrinsics) -> torch.Tensor:
    z = points_cam[..., 2]
    return torch.stack(
        [
            intrinsics.fx * points_cam[..., 0] / z + intrinsics.cx,
            intrinsics.fy * points_cam[..., 1] / z + intrinsics.cy,
        ],
        dim=-1,
    )


def pinhole_jacobian(points_cam: torch.Tensor, intrinsics: CameraIntrinsics) -> torch.Tensor:
    """Derivative of `pinhole` w.r.t. the camera-frame point, shape (..., 2, 3)."""
    x, y, z = points_cam[..., 0], points_cam[..., 1], points_cam[..., 2]
    zero = torch.zeros_like(z)
    inv_z = 1.0 / z
    return torch.stack(
        [
            torch.stack([intrinsics.fx * inv_z, zero, -intrinsics.fx * x * inv_z**2], dim=-1),
            torch.stack([zero, intrinsics.fy * inv_z, -intrinsics.fy * y * inv_z**2], dim=-1),
        ],
        dim=-2,
    )


def project(X_world, T_wc: RigidTransform, intrinsics: CameraIntrinsics) -> torch.Tensor:
    """Projects world points (..., 3) through the camera with pose ^wT_c."""
    points_cam = to_camera(as_tensor(X_world), T_wc.rotation, T_wc.translation)
    depth = points_cam[..., 2]
    if (depth <= MIN_DEPTH).any():
        raise PointBehindCamera(
            f"Point depth {depth.min().item():.3g} m is not in front of the camera."
        )
    return pinhole(points_cam, intrinsics)
