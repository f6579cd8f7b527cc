"""
Rotation parameterization on SO(3): axis-angle exponential and logarithm.

All functions are batched over leading dimensions and differentiable,
including at the identity.
"""
from __future__ import annotations

import math

import torch

_SMALL_ANGLE_SQ = 1e-12


def hat(v: torch.Tensor) -> torch.Tensor:
    """Skew-symmetric matrix [v]x such that hat(v) @ w == cross(v, w)."""
    zero = torch.zeros_like(v[..., 0])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return torch.stack(
        [
            torch.stack([zero, -z, y], dim=-1),
            torch.stack([z, zero, -x], dim=-1),
            torch.stack([-y, x, zero], dim=-1),
        ],
        dim=-2,
    )


def vee(m: torch.Tensor) -> torch.Tensor:
    return torch.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], dim=-1)


def rotation_exp(xi: torch.Tensor) -> torch.Tensor:
    """Rodrigues formula; Taylor expansion below ~1e-6 rad keeps gradients finite."""
    theta_sq = (xi * xi).sum(dim=-1)
    small = theta_sq < _SMALL_ANGLE_SQ
    theta_sq_safe = torch.where(small, torch.ones_like(theta_sq), theta_sq)
    theta = theta_sq_safe.sqrt()
    a = torch.where(small, 1.0 - theta_sq / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta_sq / 24.0, (1.0 - torch.cos(theta)) / theta_sq_safe)
    k = hat(xi)
    eye = torch.eye(3, dtype=xi.dtype, device=xi.device).expand(k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def _canonical_axis(axis: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Flips axes so that the first nonzero component is non-negative."""
    nonzero = axis.abs() > eps
    first = torch.argmax(nonzero.to(torch.int64), dim=-1, keepdim=True)
    lead = torch.gather(axis, -1, first)
    return torch.where(lead < 0, -axis, axis)


def rotation_log(rot: torch.Tensor) -> torch.Tensor:
    """Inverse of `rotation_exp` with angles in [0, pi].

    At an angle of exactly pi both axis signs are valid; the representative
    with non-negative first nonzero axis component is returned.
    """
    trace = rot[..., 0, 0] + rot[..., 1, 1] + rot[..., 2, 2]
    cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0)
    skew = vee(rot - rot.transpose(-1, -2)) / 2.0
    sin = torch.linalg.vector_norm(skew, dim=-1)
    theta = torch.atan2(sin, cos)

    # Generic and small angles
    small = theta < 1e-6
    scale = torch.where(
        small,
        1.0 + theta**2 / 6.0,
        theta / torch.where(small, torch.ones_like(sin), sin),
    )
    out = skew * scale[..., None]

    # Near pi the skew part vanishes; recover the axis from the symmetric part
    near_pi = theta > math.pi - 1e-3
    if near_pi.any():
        sym = (rot + rot.transpose(-1, -2)) / 2.0
        eye = torch.eye(3, dtype=rot.dtype, device=rot.device)
        outer = (sym - cos[..., None, None] * eye) / (1.0 - cos)[..., None, None].clamp(min=1e-12)
        diag = torch.diagonal(outer, dim1=-2, dim2=-1)
        col = torch.argmax(diag, dim=-1)
        axis = torch.gather(
            outer, -1, col[..., None, None].expand(*outer.shape[:-1], 1)
        ).squeeze(-1)
        axis = axis / torch.linalg.vector_norm(axis, dim=-1, keepdim=True)
        # Sign from the skew part while it is still informative
        dot = (axis * skew).sum(dim=-1)
        informative = dot.abs() > 1e-12
        axis = torch.where(
            informative[..., None],
            torch.where(dot[..., None] < 0, -axis, axis),
            _canonical_axis(axis),
        )
        out = torch.where(near_pi[..., None], axis * theta[..., None], out)
    return out


def is_rotation(rot: torch.Tensor, tol: float = 1e-9) -> bool:
    eye = torch.eye(3, dtype=rot.dtype, device=rot.device)
    ortho = (rot @ rot.transpose(-1, -2) - eye).abs().max()
    det = torch.linalg.det(rot)
    return bool(ortho <= tol and ((det - 1.0).abs() <= tol).all())


def random_rotation(generator: torch.Generator | None = None, max_angle: float = math.pi,
                    dtype: torch.dtype = torch.float64) -> torch.Tensor:
    axis = torch.randn(3, generator=generator, dtype=dtype)
    axis = axis / torch.linalg.vector_norm(axis)
    angle = torch.rand((), generator=generator, dtype=dtype) * max_angle
    return rotation_exp(axis * angle)
