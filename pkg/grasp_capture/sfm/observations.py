"""
Per-frame 2D hand-keypoint detections.

Keypoint documents are JSON, one per frame, in either of two layouts:

    {"keypoints": [[u, v, c], ...], "timestamp": 0.033}
    {"people": [{"hand_right_keypoints_2d": [u, v, c, u, v, c, ...]}]}

Missing detections are encoded as confidence 0. A frame without any person
has all confidences 0.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from grasp_capture.geom.camera import CameraIntrinsics
from grasp_capture.hand.skeleton import NUM_LANDMARKS
from grasp_capture.utils.common import as_tensor

OPENPOSE_KEYS = ("hand_right_keypoints_2d", "hand_left_keypoints_2d")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Detections `uv` (N, 21, 2) in pixels and `confidence` (N, 21) in [0, 1]."""

    uv: torch.Tensor
    confidence: torch.Tensor
    intrinsics: CameraIntrinsics
    timestamps: torch.Tensor | None = None
    # Indices of these frames in the original recording
    frame_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "uv", as_tensor(self.uv))
        object.__setattr__(self, "confidence", as_tensor(self.confidence))
        if self.frame_ids is None:
            object.__setattr__(self, "frame_ids", tuple(range(self.uv.shape[0])))
        num = self.uv.shape[0]
        if self.uv.shape != (num, NUM_LANDMARKS, 2) or self.confidence.shape != (num, NUM_LANDMARKS):
            raise ValueError(
                f"Expected detections of shape (N, {NUM_LANDMARKS}, 2) and (N, {NUM_LANDMARKS}), "
                f"got {tuple(self.uv.shape)} and {tuple(self.confidence.shape)}."
            )
        if num < 2:
            raise ValueError(f"Need at least 2 frames, got {num}.")
        if len(self.frame_ids) != num:
            raise ValueError("Frame ids do not match the number of frames.")
        if ((self.confidence < 0) | (self.confidence > 1)).any():
            raise ValueError("Confidences must lie in [0, 1].")
        present = self.confidence > 0
        if not torch.isfinite(self.uv[present]).all():
            raise ValueError("Detections must be finite.")
        outside = present & ~self.intrinsics.contains(self.uv)
        if outside.any():
            frame, landmark = outside.nonzero()[0].tolist()
            raise ValueError(
                f"Detection of landmark {landmark} in frame {frame} lies outside the padded image."
            )

    @property
    def num_frames(self) -> int:
        return self.uv.shape[0]

    def mask(self, threshold: float) -> torch.Tensor:
        """Detections usable at confidence threshold `threshold`."""
        return self.confidence >= threshold

    def subset(self, frames) -> ObservationSet:
        frames = list(frames)
        return ObservationSet(
            uv=self.uv[frames],
            confidence=self.confidence[frames],
            intrinsics=self.intrinsics,
            timestamps=None if self.timestamps is None else self.timestamps[frames],
            frame_ids=tuple(self.frame_ids[i] for i in frames),
        )


def parse_keypoints(doc: dict) -> tuple[np.ndarray, float | None]:
    """Reads one keypoint document into a (21, 3) array of (u, v, confidence)."""
    timestamp = doc.get("timestamp")
    if "keypoints" in doc:
        values = np.asarray(doc["keypoints"], dtype=np.float64).reshape(-1, 3)
    elif "people" in doc:
        people = doc["people"]
        values = np.zeros((NUM_LANDMARKS, 3))
        if people:
            key = next((k for k in OPENPOSE_KEYS if people[0].get(k)), None)
            if key is not None:
                values = np.asarray(people[0][key], dtype=np.float64).reshape(-1, 3)
    else:
        raise ValueError("Keypoint document has neither `keypoints` nor `people`.")
    if values.shape != (NUM_LANDMARKS, 3):
        raise ValueError(f"Expected {NUM_LANDMARKS} keypoint triples, got {values.shape[0]}.")
    return values, timestamp


def load_observations(keypoints_dir: Path | str, intrinsics: CameraIntrinsics) -> ObservationSet:
    """Loads all `*.json` keypoint documents of a directory in lexicographic order."""
    files = sorted(Path(keypoints_dir).glob("*.json"))
    if len(files) < 2:
        raise ValueError(f"Found {len(files)} keypoint documents in {keypoints_dir}, need at least 2.")

    values, timestamps = [], []
    for file in files:
        with file.open() as f:
            frame, timestamp = parse_keypoints(json.load(f))
        values.append(frame)
        timestamps.append(timestamp)
    values = as_tensor(np.stack(values))
    uv, confidence = values[..., :2], values[..., 2].clamp(0.0, 1.0)

    # Detections outside the padded image are treated as missing
    outside = (confidence > 0) & ~intrinsics.contains(uv)
    if outside.any():
        logging.warning("Dropping %d detections outside the image.", outside.sum().item())
        confidence = torch.where(outside, torch.zeros_like(confidence), confidence)
    uv = torch.where(confidence[..., None] > 0, uv, torch.zeros_like(uv))

    if any(t is None for t in timestamps):
        timestamps = None
    else:
        timestamps = as_tensor(timestamps)
    logging.info("Loaded %d frames of keypoints from %s.", len(files), keypoints_dir)
    return ObservationSet(uv=uv, confidence=confidence, intrinsics=intrinsics, timestamps=timestamps)


def write_observations(obs: ObservationSet, keypoints_dir: Path | str):
    keypoints_dir = Path(keypoints_dir)
    keypoints_dir.mkdir(parents=True, exist_ok=True)
    values = torch.cat([obs.uv, obs.confidence[..., None]], dim=-1)
    for i in range(obs.num_frames):
        doc = {"keypoints": values[i].tolist()}
        if obs.timestamps is not None:
            doc["timestamp"] = obs.timestamps[i].item()
        with (keypoints_dir / f"frame_{i:05d}.json").open("w") as f:
            json.dump(doc, f)
