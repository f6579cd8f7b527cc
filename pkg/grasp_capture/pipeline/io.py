"""
The capture output document.

A single JSON document holding every transform as a 4x4 row-major matrix
and the joint angles in radians. Python floats are written with their
shortest round-trip representation, so reading a written document gives
back the same numbers.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.skeleton import NUM_LANDMARKS, HandParams
from grasp_capture.utils.common import as_tensor

SCHEMA_VERSION = "1.0"

EXCLUDED_TRANSIENT = "excluded_transient"


def _matrix(pose: RigidTransform | None) -> list[list[float]] | None:
    return None if pose is None else pose.matrix().tolist()


def _pose(matrix: list[list[float]] | None) -> RigidTransform | None:
    return None if matrix is None else RigidTransform.from_matrix(matrix)


@dataclass(frozen=True, eq=False)
class CaptureResult:
    """Hand and object poses for all frames of a capture.

    Per-frame lists have one entry per input frame; frames without a
    registered camera hold `None`. The anchor frame's camera is the identity.
    """

    hand: HandParams
    object_pose_world: RigidTransform
    adjustment: RigidTransform
    camera_poses: list[RigidTransform | None]
    object_poses: list[RigidTransform | None]
    palm_poses: list[RigidTransform | None]
    frame_status: list[str]
    joints: torch.Tensor
    diagnostics: dict = field(default_factory=dict)
    frame_ids: list[int] | None = None
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        n = len(self.camera_poses)
        lengths = {len(self.object_poses), len(self.palm_poses), len(self.frame_status)}
        if lengths != {n}:
            raise ValueError(f"Per-frame lists must all have length {n}.")
        if self.frame_ids is None:
            object.__setattr__(self, "frame_ids", list(range(n)))
        elif len(self.frame_ids) != n:
            raise ValueError(f"Expected {n} frame ids, got {len(self.frame_ids)}.")
        object.__setattr__(self, "joints", as_tensor(self.joints))
        if self.joints.shape != (NUM_LANDMARKS, 3):
            raise ValueError(f"Expected ({NUM_LANDMARKS}, 3) joints, got {tuple(self.joints.shape)}.")

    @property
    def num_frames(self) -> int:
        return len(self.camera_poses)

    @property
    def anchor(self) -> int | None:
        """Index of the first registered frame."""
        return next((i for i, pose in enumerate(self.camera_poses) if pose is not None), None)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "hand": {
                "palm_pose": _matrix(self.hand.palm_pose),
                "palm_scale": float(self.hand.palm_scale),
                "angles": self.hand.angles.tolist(),
            },
            "object_pose_world": _matrix(self.object_pose_world),
            "adjustment": _matrix(self.adjustment),
            "joints": self.joints.tolist(),
            "frames": [
                {
                    "id": int(frame_id),
                    "status": status,
                    "camera_pose": _matrix(camera),
                    "object_pose": _matrix(obj),
                    "palm_pose": _matrix(palm),
                }
                for frame_id, status, camera, obj, palm in zip(
                    self.frame_ids, self.frame_status, self.camera_poses, self.object_poses, self.palm_poses
                )
            ],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> CaptureResult:
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"Unsupported schema version {version!r}, expected {SCHEMA_VERSION!r}.")
        hand = doc["hand"]
        frames = doc["frames"]
        return cls(
            hand=HandParams(_pose(hand["palm_pose"]), hand["palm_scale"], hand["angles"]),
            object_pose_world=_pose(doc["object_pose_world"]),
            adjustment=_pose(doc["adjustment"]),
            camera_poses=[_pose(f["camera_pose"]) for f in frames],
            object_poses=[_pose(f["object_pose"]) for f in frames],
            palm_poses=[_pose(f["palm_pose"]) for f in frames],
            frame_status=[f["status"] for f in frames],
            joints=doc["joints"],
            diagnostics=doc.get("diagnostics", {}),
            frame_ids=[f["id"] for f in frames],
            schema_version=version,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_file(self, path: Path | str):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps() + "\n")
        logging.info("Capture result written to %s", path)

    @classmethod
    def from_file(cls, path: Path | str) -> CaptureResult:
        return cls.from_dict(json.loads(Path(path).read_text()))


def read_pose(path: Path | str) -> RigidTransform:
    """Reads a 4x4 row-major matrix stored as `{"matrix": [...]}` or as a bare nested list."""
    with Path(path).open() as f:
        doc = json.load(f)
    return RigidTransform.from_matrix(doc["matrix"] if isinstance(doc, dict) else doc)


def write_pose(pose: RigidTransform, path: Path | str):
    with Path(path).open("w") as f:
        json.dump({"matrix": pose.matrix().tolist()}, f, indent=2)
