from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import yaml

from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.utils.common import DATA_DIR, DTYPE, as_tensor

NUM_LANDMARKS = 21
NUM_ANGLES = 20
NUM_PARAMS = 26
FINGER_NAMES = ("thumb", "index", "middle", "ring", "little")
# Wrist and the five finger bases of the detector layout, in this order.
RIGID_INDICES = (0, 1, 5, 9, 13, 17)
NON_RIGID_INDICES = tuple(i for i in range(NUM_LANDMARKS) if i not in RIGID_INDICES)
# Angle slots within a finger
BASE_FLEXION, BASE_ABDUCTION, MIDDLE_FLEXION, DISTAL_FLEXION = range(4)
DEFAULT_TEMPLATE = DATA_DIR / "hand_template.yaml"

# Positions are (21, 3) tensors indexed like the skeleton landmarks.
JointSet3D = torch.Tensor


@dataclass(frozen=True, eq=False)
class HandSkeleton:
    """Fixed-topology 20-DOF hand: 5 fingers with 4 angles each."""

    names: tuple[str, ...]
    rest: torch.Tensor
    parents: tuple[int, ...]
    finger_landmarks: tuple[tuple[int, int, int, int], ...]
    axes: torch.Tensor
    lower: torch.Tensor
    upper: torch.Tensor
    capsule_radii: torch.Tensor
    palm_capsule: tuple[int, int] = (5, 17)
    palm_radius: float = 0.025
    version: int = 1

    def __post_init__(self):
        if self.rest.shape != (NUM_LANDMARKS, 3):
            raise ValueError(f"Expected {NUM_LANDMARKS} rest landmarks, got {tuple(self.rest.shape)}.")
        if self.axes.shape != (NUM_ANGLES, 3):
            raise ValueError(f"Expected {NUM_ANGLES} joint axes, got {tuple(self.axes.shape)}.")
        # Tree rooted at the wrist
        if self.parents[0] != -1 or any(
            not 0 <= p < i for i, p in enumerate(self.parents) if i > 0
        ):
            raise ValueError("Parents must form a tree rooted at landmark 0.")
        if (self.bone_lengths() <= 0).any():
            raise ValueError("Bone lengths must be positive.")
        if (self.lower > 0).any() or (self.upper < 0).any():
            raise ValueError("The rest pose must satisfy the joint limits.")
        if (self.capsule_radii <= 0).any() or self.palm_radius <= 0:
            raise ValueError("Capsule radii must be positive.")

    @classmethod
    def from_file(cls, path: Path | str = DEFAULT_TEMPLATE) -> HandSkeleton:
        with Path(path).open() as f:
            doc = yaml.safe_load(f)
        landmarks = doc["landmarks"]
        if len(landmarks) != NUM_LANDMARKS:
            raise ValueError(f"Template {path} lists {len(landmarks)} landmarks.")
        if len(doc["fingers"]) != len(FINGER_NAMES):
            raise ValueError(f"Template {path} lists {len(doc['fingers'])} fingers.")

        axes, lower, upper, radii, finger_landmarks = [], [], [], [], []
        for finger in doc["fingers"]:
            finger_landmarks.append(tuple(int(i) for i in finger["landmarks"]))
            for axis, (lo, hi) in zip(finger["axes"], finger["limits"]):
                axis = as_tensor(axis)
                axes.append(axis / torch.linalg.vector_norm(axis))
                lower.append(math.radians(lo))
                upper.append(math.radians(hi))
            radii.extend(finger["capsule_radii"])

        palm = doc.get("palm_capsule", {})
        skeleton = cls(
            names=tuple(lm["name"] for lm in landmarks),
            rest=as_tensor([lm["position"] for lm in landmarks]),
            parents=tuple(int(lm["parent"]) for lm in landmarks),
            finger_landmarks=tuple(finger_landmarks),
            axes=torch.stack(axes),
            lower=as_tensor(lower),
            upper=as_tensor(upper),
            capsule_radii=as_tensor(radii),
            palm_capsule=tuple(palm.get("landmarks", (5, 17))),
            palm_radius=float(palm.get("radius", 0.025)),
            version=int(doc.get("version", 1)),
        )
        logging.info("Loaded hand template `%s` (version %d).", doc.get("name", path), skeleton.version)
        return skeleton

    @classmethod
    def default(cls) -> HandSkeleton:
        return cls.from_file(DEFAULT_TEMPLATE)

    def bone_lengths(self, joints: JointSet3D | None = None) -> torch.Tensor:
        joints = self.rest if joints is None else joints
        parents = torch.tensor(self.parents[1:])
        return torch.linalg.vector_norm(joints[1:] - joints[parents], dim=-1)

    def clamp(self, angles: torch.Tensor) -> torch.Tensor:
        return torch.maximum(torch.minimum(angles, self.upper), self.lower)

    def within_limits(self, angles: torch.Tensor, tol: float = 1e-9) -> bool:
        return bool(((angles >= self.lower - tol) & (angles <= self.upper + tol)).all())

    def capsules(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Landmark index pairs (21, 2) and radii (21,): 4 per finger, then the palm."""
        pairs = []
        for base, mid, distal, tip in self.finger_landmarks:
            pairs.extend([(0, base), (base, mid), (mid, distal), (distal, tip)])
        pairs.append(self.palm_capsule)
        radii = torch.cat([self.capsule_radii, as_tensor([self.palm_radius])])
        return torch.tensor(pairs), radii

    def random_angles(self, generator: torch.Generator | None = None, fraction: float = 1.0) -> torch.Tensor:
        """Uniform angles within a centered `fraction` of each limit interval."""
        center = (self.lower + self.upper) / 2.0
        half = fraction * (self.upper - self.lower) / 2.0
        u = torch.rand(NUM_ANGLES, generator=generator, dtype=DTYPE)
        return center + (2.0 * u - 1.0) * half


@dataclass(frozen=True, eq=False)
class HandParams:
    """Palm pose ^wT_p, identity scale, and the 20 joint angles (radians)."""

    palm_pose: RigidTransform
    palm_scale: float = 1.0
    angles: torch.Tensor = field(default_factory=lambda: torch.zeros(NUM_ANGLES, dtype=DTYPE))

    def __post_init__(self):
        object.__setattr__(self, "angles", as_tensor(self.angles))
        if self.angles.shape != (NUM_ANGLES,):
            raise ValueError(f"Expected {NUM_ANGLES} angles, got {tuple(self.angles.shape)}.")
        if not self.palm_scale > 0:
            raise ValueError(f"Palm scale must be positive, got {self.palm_scale}.")

    @classmethod
    def rest(cls, palm_pose: RigidTransform | None = None, palm_scale: float = 1.0) -> HandParams:
        return cls(palm_pose or RigidTransform.identity(), palm_scale)

    def retract(self, delta: torch.Tensor, skeleton: HandSkeleton | None = None) -> HandParams:
        """Applies a 26-vector step (palm tangent, angles); clamps to limits if a skeleton is given."""
        angles = self.angles + delta[6:]
        if skeleton is not None:
            angles = skeleton.clamp(angles)
        return HandParams(self.palm_pose.retract(delta[:6]), self.palm_scale, angles)

    def with_angles(self, angles: torch.Tensor) -> HandParams:
        return HandParams(self.palm_pose, self.palm_scale, angles)


def rigid_points(joints: JointSet3D) -> torch.Tensor:
    """Wrist and the five finger bases, in the order of `RIGID_INDICES`."""
    return joints[list(RIGID_INDICES)]
