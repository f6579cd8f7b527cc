"""
Closed-form least-squares alignment of corresponding point sets.

Adapted from the scikit-image `_umeyama` estimator.
"""
from __future__ import annotations

import torch

from grasp_capture.geom.transforms import SimilarityTransform
from grasp_capture.utils.common import as_tensor
from grasp_capture.utils.errors import DegenerateConfiguration

COLLINEAR_TOL = 1e-9


def umeyama(
    src: torch.Tensor, dst: torch.Tensor, estimate_scale: bool = True
) -> tuple[float, torch.Tensor, torch.Tensor]:
    """Returns (scale, rotation, translation) minimizing sum ||dst - (s R src + t)||^2.

    Works in any dimension; the determinant-sign correction excludes reflections.
    """
    src, dst = as_tensor(src), as_tensor(dst)
    if src.shape != dst.shape or src.ndim != 2:
        raise ValueError(f"Shape mismatch between {tuple(src.shape)} and {tuple(dst.shape)}.")
    num, dim = src.shape
    if num < dim:
        raise DegenerateConfiguration(f"Need at least {dim} correspondences, got {num}.")

    src_mean = src.mean(dim=0)
    dst_mean = dst.mean(dim=0)
    src_demean = src - src_mean
    dst_demean = dst - dst_mean

    # Rank check on the source: the second singular value rules out collinear sets
    sv = torch.linalg.svdvals(src_demean)
    if sv[0] <= 0 or sv[1] <= COLLINEAR_TOL * sv[0]:
        raise DegenerateConfiguration("Source points are collinear or coincident.")

    cov = dst_demean.transpose(0, 1) @ src_demean / num
    u, s, vh = torch.linalg.svd(cov)
    d = torch.ones(dim, dtype=src.dtype)
    if torch.linalg.det(u) * torch.linalg.det(vh) < 0:
        d[-1] = -1.0
    rotation = u @ torch.diag(d) @ vh

    if estimate_scale:
        var_src = (src_demean**2).sum() / num
        scale = ((s * d).sum() / var_src).item()
    else:
        scale = 1.0
    translation = dst_mean - scale * rotation @ src_mean
    return scale, rotation, translation


def umeyama_align(src, dst, estimate_scale: bool = True) -> SimilarityTransform:
    src, dst = as_tensor(src), as_tensor(dst)
    if src.ndim != 2 or src.shape[-1] != 3:
        raise ValueError(f"Expected (n, 3) point sets, got {tuple(src.shape)}.")
    if src.shape[0] < 3:
        raise DegenerateConfiguration(f"Need at least 3 correspondences, got {src.shape[0]}.")
    scale, rotation, translation = umeyama(src, dst, estimate_scale=estimate_scale)
    if not scale > 0:
        raise DegenerateConfiguration("Destination points collapse to a single point.")
    return SimilarityTransform(scale, rotation, translation)


def rigid_rms(src: torch.Tensor, dst: torch.Tensor, transform) -> float:
    """Root-mean-square residual of `transform` mapping src onto dst."""
    diff = transform.apply(src) - dst
    return (diff**2).sum(dim=-1).mean().sqrt().item()
