"""
Synthetic grasp captures with known ground truth.

A posed hand is watched by a camera orbiting its center; an object rests
against the palm. The scene holds everything the pipeline reads (keypoint
detections, intrinsics, object mesh, contact map, depth clouds and an
initial object pose) together with the true values behind them.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from grasp_capture.contact.energy import CapsuleProxy
from grasp_capture.contact.mesh import ContactMap, PointCloud, TriMesh, make_box, make_sphere
from grasp_capture.geom.camera import CameraIntrinsics, project
from grasp_capture.geom.so3 import rotation_exp
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.kinematics import forward_kinematics
from grasp_capture.hand.skeleton import HandParams, HandSkeleton
from grasp_capture.pipeline.io import EXCLUDED_TRANSIENT, CaptureResult, write_pose
from grasp_capture.pipeline.propagate import propagate_poses
from grasp_capture.sfm.bundle import REGISTERED
from grasp_capture.sfm.observations import ObservationSet, write_observations
from grasp_capture.utils.common import DTYPE

MIN_FRAMES = 10
MIN_CONFIDENCE = 0.1
OBJECTS = ("box", "sphere")


@dataclass
class SceneConfig:
    num_frames: int = 30
    # Leading frames with random articulation before the hand settles
    transient: int = 0
    # Pixel noise standard deviation and per-detection dropout probability
    noise: float = 0.0
    dropout: float = 0.0
    object: str = "box"
    hand_scale: float = 1.0
    # Fraction of each joint range the grasp angles are drawn from
    articulation: float = 0.3
    depth: float = 0.5
    # Orbit about the hand (rad): total yaw and amplitude of the pitch wobble
    orbit_yaw: float = math.radians(30.0)
    orbit_wobble: float = math.radians(10.0)
    fx: float = 600.0
    width: int = 640
    height: int = 480
    fps: float = 30.0
    # Grasp adjustment and Stage-1 initial guess perturbations (rad, m)
    adjust_angle: float = math.radians(5.0)
    adjust_translation: float = 0.02
    init_angle: float = math.radians(10.0)
    init_translation: float = 0.01
    cloud_size: int = 2000
    cloud_noise: float = 0.0
    # Contact map: full contact up to `contact_distance`, Gaussian falloff beyond (m)
    contact_distance: float = 0.005
    contact_falloff: float = 0.005
    # Grasp-cloud points closer than this to the hand are hidden by it (m)
    occlusion: float = 0.01

    def __post_init__(self):
        if self.num_frames < MIN_FRAMES:
            raise ValueError(f"Need at least {MIN_FRAMES} frames, got {self.num_frames}.")
        if not 0 <= self.transient <= self.num_frames - 5:
            raise ValueError(f"Transient length {self.transient} leaves fewer than 5 steady frames.")
        if self.noise < 0 or self.cloud_noise < 0:
            raise ValueError("Noise levels must be non-negative.")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"Dropout must lie in [0, 1), got {self.dropout}.")
        if self.object not in OBJECTS:
            raise ValueError(f"Unknown object `{self.object}`; choose from {OBJECTS}.")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: SceneConfig
    seed: int
    skeleton: HandSkeleton
    params: HandParams
    # Per frame; `None` for transient frames
    camera_poses: list[RigidTransform | None]
    intrinsics: CameraIntrinsics
    exact_uv: torch.Tensor
    obs: ObservationSet
    mesh: TriMesh
    contact_map: ContactMap
    object_pose_world: RigidTransform
    adjustment: RigidTransform
    object_init: RigidTransform
    turntable_cloud: PointCloud
    grasp_cloud: PointCloud

    @property
    def joints(self) -> torch.Tensor:
        return forward_kinematics(self.skeleton, self.params)

    @property
    def grasped_pose(self) -> RigidTransform:
        """Object pose while grasped, T_adj ^wT_o."""
        return self.adjustment @ self.object_pose_world

    def as_result(self) -> CaptureResult:
        """The ground truth in the pipeline's output format."""
        propagated = propagate_poses(
            self.camera_poses, self.adjustment, self.object_pose_world, self.params.palm_pose
        )
        return CaptureResult(
            hand=self.params,
            object_pose_world=self.object_pose_world,
            adjustment=self.adjustment,
            camera_poses=self.camera_poses,
            object_poses=[None if p is None else p[0] for p in propagated],
            palm_poses=[None if p is None else p[1] for p in propagated],
            frame_status=[EXCLUDED_TRANSIENT if c is None else REGISTERED for c in self.camera_poses],
            joints=self.joints,
            diagnostics={"seed": self.seed},
        )


def contact_values(
    mesh: TriMesh, proxy: CapsuleProxy, joints: torch.Tensor, scale: float, distance: float, falloff: float
) -> torch.Tensor:
    """Per-vertex contact of a posed mesh: 1 within `distance` of the capsules, Gaussian beyond."""
    gap = proxy.distances(mesh.vertices, joints, scale).min(dim=-1).values
    excess = (gap - distance).clamp(min=0.0)
    return torch.exp(-((excess / falloff) ** 2))


def random_rigid(generator: torch.Generator, angle: float, translation: float) -> RigidTransform:
    """Rotation by exactly `angle` about a random axis and a shift of length `translation`."""
    axis = torch.randn(3, generator=generator, dtype=DTYPE)
    shift = torch.randn(3, generator=generator, dtype=DTYPE)
    rotation = rotation_exp(angle * axis / torch.linalg.vector_norm(axis))
    return RigidTransform(rotation, translation * shift / torch.linalg.vector_norm(shift), check=False)


def orbit(center: torch.Tensor, yaw: float, pitch: float) -> RigidTransform:
    """Camera ^wT_c rotated about `center` from the identity camera."""
    rotation = rotation_exp(torch.tensor([0.0, yaw, 0.0], dtype=DTYPE)) @ rotation_exp(
        torch.tensor([pitch, 0.0, 0.0], dtype=DTYPE)
    )
    return RigidTransform(rotation, center - rotation @ center, check=False)


def _detections(
    cfg: SceneConfig, generator: torch.Generator, exact_uv: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    noise = cfg.noise * torch.randn(exact_uv.shape, generator=generator, dtype=DTYPE)
    if cfg.noise > 0:
        magnitude = torch.linalg.vector_norm(noise, dim=-1)
        confidence = (1.0 - magnitude / (3.0 * cfg.noise)).clamp(MIN_CONFIDENCE, 1.0)
    else:
        confidence = torch.ones(exact_uv.shape[:-1], dtype=DTYPE)
    dropped = torch.rand(confidence.shape, generator=generator, dtype=DTYPE) < cfg.dropout
    confidence = torch.where(dropped, torch.zeros_like(confidence), confidence)
    uv = torch.where(dropped[..., None], torch.zeros_like(exact_uv), exact_uv + noise)
    return uv, confidence


def generate_scene(seed: int, cfg: SceneConfig | None = None, skeleton: HandSkeleton | None = None) -> SyntheticScene:
    """Deterministic in `seed`."""
    cfg = cfg or SceneConfig()
    skeleton = skeleton or HandSkeleton.default()
    generator = torch.Generator().manual_seed(seed)
    intrinsics = CameraIntrinsics(
        fx=cfg.fx, fy=cfg.fx, cx=cfg.width / 2.0, cy=cfg.height / 2.0, width=cfg.width, height=cfg.height
    )

    # Hand facing the first steady camera, fingers up, centered on the optical axis
    rotation = torch.diag(torch.tensor([1.0, -1.0, -1.0], dtype=DTYPE))
    angles = skeleton.random_angles(generator, fraction=cfg.articulation)
    local = forward_kinematics(skeleton, HandParams(RigidTransform.identity(), cfg.hand_scale, angles))
    center = torch.tensor([0.0, 0.0, cfg.depth], dtype=DTYPE)
    translation = center - local.mean(dim=0) @ rotation.transpose(0, 1)
    params = HandParams(RigidTransform(rotation, translation), cfg.hand_scale, angles)
    joints = forward_kinematics(skeleton, params)

    # Transient frames: identity camera, random articulation
    steady = cfg.num_frames - cfg.transient
    camera_poses: list[RigidTransform | None] = [None] * cfg.transient
    frame_joints = []
    for _ in range(cfg.transient):
        churn = params.with_angles(skeleton.random_angles(generator))
        frame_joints.append(forward_kinematics(skeleton, churn))
    for k in range(steady):
        phase = k / (steady - 1)
        camera_poses.append(orbit(center, cfg.orbit_yaw * phase, cfg.orbit_wobble * math.sin(2 * math.pi * phase)))
        frame_joints.append(joints)
    exact_uv = torch.stack(
        [
            project(points, pose or RigidTransform.identity(), intrinsics)
            for points, pose in zip(frame_joints, camera_poses)
        ]
    )
    uv, confidence = _detections(cfg, generator, exact_uv)
    timestamps = torch.arange(cfg.num_frames, dtype=DTYPE) / cfg.fps
    obs = ObservationSet(uv, confidence, intrinsics, timestamps=timestamps)

    # Object against the palm capsule, its z axis along the palm normal
    mesh = make_box() if cfg.object == "box" else make_sphere()
    normal = rotation[:, 2]
    first, second = skeleton.palm_capsule
    palm_center = (joints[first] + joints[second]) / 2.0
    half_depth = (mesh.vertices @ torch.tensor([0.0, 0.0, 1.0], dtype=DTYPE)).max()
    offset = skeleton.palm_radius * cfg.hand_scale + half_depth
    contact_pose = RigidTransform(rotation, palm_center + offset * normal, check=False)
    adjustment = random_rigid(generator, cfg.adjust_angle, cfg.adjust_translation)
    object_pose_world = adjustment.inverse() @ contact_pose
    grasped = adjustment @ object_pose_world
    object_init = random_rigid(generator, cfg.init_angle, cfg.init_translation) @ object_pose_world

    proxy = CapsuleProxy(skeleton)
    values = contact_values(
        mesh.transformed(grasped), proxy, joints, cfg.hand_scale, cfg.contact_distance, cfg.contact_falloff
    )

    # Depth clouds in the world frame
    sample_seed = int(torch.randint(0, 2**31 - 1, (1,), generator=generator))
    turntable = object_pose_world.apply(mesh.sample(cfg.cloud_size, seed=sample_seed))
    held = grasped.apply(mesh.sample(cfg.cloud_size, seed=sample_seed + 1))
    visible = proxy.distances(held, joints, cfg.hand_scale).min(dim=-1).values > cfg.occlusion
    held = held[visible]
    if cfg.cloud_noise > 0:
        turntable = turntable + cfg.cloud_noise * torch.randn(turntable.shape, generator=generator, dtype=DTYPE)
        held = held + cfg.cloud_noise * torch.randn(held.shape, generator=generator, dtype=DTYPE)

    logging.info(
        "Synthetic scene (seed %d): %d frames, %d transient, %s with %d contacted vertices.",
        seed,
        cfg.num_frames,
        cfg.transient,
        cfg.object,
        int((values >= 0.5).sum()),
    )
    return SyntheticScene(
        config=cfg,
        seed=seed,
        skeleton=skeleton,
        params=params,
        camera_poses=camera_poses,
        intrinsics=intrinsics,
        exact_uv=exact_uv,
        obs=obs,
        mesh=mesh,
        contact_map=ContactMap(values),
        object_pose_world=object_pose_world,
        adjustment=adjustment,
        object_init=object_init,
        turntable_cloud=PointCloud(turntable),
        grasp_cloud=PointCloud(held),
    )


def write_dataset(scene: SyntheticScene, root: Path | str):
    """Writes the scene in the pipeline's input formats plus `ground_truth.json`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_observations(scene.obs, root / "keypoints")
    scene.intrinsics.to_file(root / "intrinsics.yaml")
    scene.mesh.to_file(root / "mesh.obj")
    scene.contact_map.to_file(root / "contact_map.txt")
    scene.turntable_cloud.to_file(root / "turntable.xyz")
    scene.grasp_cloud.to_file(root / "grasp.xyz")
    write_pose(scene.object_init, root / "object_init.json")
    scene.as_result().to_file(root / "ground_truth.json")
    logging.info("Synthetic dataset written to %s", root)
