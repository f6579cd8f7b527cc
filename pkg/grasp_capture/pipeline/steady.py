from __future__ import annotations

import logging
import math

import torch

from grasp_capture.geom.align import umeyama
from grasp_capture.sfm.observations import ObservationSet
from grasp_capture.utils.errors import DegenerateConfiguration, NoSteadySegment

MIN_SHARED = 3


def frame_motion(obs: ObservationSet, threshold: float = 0.2) -> torch.Tensor:
    """Median residual (px) of each frame against its predecessor after removing the best 2D similarity.

    Entry 0 is 0; pairs with fewer than 3 shared detections are infinite.
    """
    mask = obs.mask(threshold)
    motion = torch.zeros(obs.num_frames, dtype=obs.uv.dtype)
    for frame in range(1, obs.num_frames):
        shared = mask[frame - 1] & mask[frame]
        if shared.sum() < MIN_SHARED:
            motion[frame] = math.inf
            continue
        src, dst = obs.uv[frame - 1, shared], obs.uv[frame, shared]
        try:
            scale, rotation, translation = umeyama(src, dst)
        except DegenerateConfiguration:
            motion[frame] = math.inf
            continue
        residual = dst - (scale * src @ rotation.transpose(0, 1) + translation)
        motion[frame] = torch.linalg.vector_norm(residual, dim=-1).median()
    return motion


def select_steady_frames(
    obs: ObservationSet,
    motion_threshold: float = 4.0,
    min_frames: int = 5,
    threshold: float = 0.2,
) -> tuple[int, int]:
    """Longest steady suffix as a 0-based inclusive frame range."""
    motion = frame_motion(obs, threshold)
    start = obs.num_frames - 1
    while start > 0 and motion[start] <= motion_threshold:
        start -= 1
    count = obs.num_frames - start
    if count < min_frames:
        raise NoSteadySegment(
            f"The steady suffix spans {count} frames, need {min_frames}; supply an explicit range."
        )
    logging.info("Steady segment: frames %d to %d.", start, obs.num_frames - 1)
    return start, obs.num_frames - 1
