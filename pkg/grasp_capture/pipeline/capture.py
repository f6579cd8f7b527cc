"""
End-to-end grasp capture.

Stages, in order: object pose on the turntable cloud, reconstruction of the
steady hand, hand fit, optional joint hand/camera solve, grasp adjustment
of the object, contact refinement and propagation of the poses to every
frame. Each command runs the stages it depends on.
"""
from __future__ import annotations

import contextlib
import json
import logging
from pathlib import Path

import torch
from hydra.utils import instantiate
from omegaconf import DictConfig

import grasp_capture.utils.hydra  # noqa: F401  (registers resolvers)
from grasp_capture.contact.energy import CapsuleProxy, contacted_distance
from grasp_capture.contact.icp import estimate_adjustment, icp_register
from grasp_capture.contact.mesh import ContactMap, PointCloud, TriMesh
from grasp_capture.contact.refine import refine_grasp
from grasp_capture.eval.plots import plot_residuals, plot_trajectory
from grasp_capture.fit.ik import solve_ik
from grasp_capture.fit.joint import hand_reprojection_cost, joint_hand_sfm
from grasp_capture.fit.palm import fit_palm_pose
from grasp_capture.geom.camera import CameraIntrinsics, pinhole
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.kinematics import forward_kinematics
from grasp_capture.hand.skeleton import HandParams, HandSkeleton
from grasp_capture.pipeline.base import Solver
from grasp_capture.pipeline.io import EXCLUDED_TRANSIENT, CaptureResult, read_pose
from grasp_capture.pipeline.propagate import posed_landmarks, propagate_poses
from grasp_capture.pipeline.steady import select_steady_frames
from grasp_capture.sfm.bundle import EXCLUDED_LOW_CONFIDENCE, SfMSolution, reconstruct, rescale_to_metric
from grasp_capture.sfm.observations import ObservationSet, load_observations
from grasp_capture.sfm.two_view import MIN_SHARED
from grasp_capture.synth.scene import generate_scene, write_dataset
from grasp_capture.utils.common import report_dict
from grasp_capture.utils.errors import ConfigurationError, StageError
from grasp_capture.utils.wandb import upload_result

OBJECT_POSE = "object-pose"
SFM = "sfm"
FIT_HAND = "fit-hand"
JOINT = "joint"
ADJUST = "adjust"
REFINE = "refine"
PROPAGATE = "propagate"
RUN = "run"
SYNTH = "synth"

STAGES = (OBJECT_POSE, SFM, FIT_HAND, JOINT, ADJUST, REFINE, PROPAGATE)
DEPENDENCIES = {
    OBJECT_POSE: (),
    SFM: (),
    FIT_HAND: (SFM,),
    JOINT: (FIT_HAND,),
    ADJUST: (OBJECT_POSE,),
    REFINE: (FIT_HAND, ADJUST),
    PROPAGATE: (FIT_HAND, ADJUST, REFINE),
}
# Data entries each stage reads
INPUTS = {
    OBJECT_POSE: ("mesh", "turntable_cloud"),
    SFM: ("keypoints_dir", "intrinsics"),
    FIT_HAND: (),
    JOINT: (),
    ADJUST: ("mesh", "grasp_cloud"),
    REFINE: ("mesh", "contact_map"),
    PROPAGATE: (),
}
COMMANDS = (*STAGES[:3], *STAGES[4:], RUN, SYNTH)


def _stage_closure(stage: str, enabled: dict[str, bool]) -> list[str]:
    required = set()

    def visit(name: str):
        if name in required or not enabled.get(name, True):
            return
        required.add(name)
        for dep in DEPENDENCIES[name]:
            visit(dep)

    visit(stage)
    # Optional solves run whenever their inputs are being computed anyway
    if enabled.get(JOINT) and FIT_HAND in required and stage != FIT_HAND:
        required.add(JOINT)
    return [s for s in STAGES if s in required]


def stages_for(command: str, enabled: dict[str, bool]) -> list[str]:
    """Ordered stages executed by a command; disabled optional stages are skipped."""
    if command not in COMMANDS:
        raise ConfigurationError(f"Unknown command `{command}`; choose from {', '.join(COMMANDS)}.")
    if command == SYNTH:
        return []
    if command == RUN:
        return _stage_closure(PROPAGATE, enabled)
    return _stage_closure(command, {**enabled, command: True})


@contextlib.contextmanager
def stage_context(name: str):
    """Logs the stage and re-raises its failures as `StageError`."""
    logging.info("---------------------------------------------------------------")
    logging.info("Stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


class CaptureSolver(Solver):
    def __init__(self, cfg: DictConfig):
        super().__init__(cfg=cfg)
        self.command: str = self.cfg.get("command", RUN)
        self.enabled = {
            JOINT: bool(self.cfg.stages.get("joint", False)),
            REFINE: bool(self.cfg.stages.get("refine", True)),
        }
        self.stages = stages_for(self.command, self.enabled)

        # Solver configurations
        self.sfm_cfg = instantiate(self.cfg.sfm)
        self.ik_cfg = instantiate(self.cfg.ik)
        self.contact_cfg = instantiate(self.cfg.contact.energy)
        self.refine_cfg = instantiate(self.cfg.contact.refine)
        self.icp_cfg = instantiate(self.cfg.contact.icp)

        self.output_file = self.out_dir / self.cfg.get("output_file", "capture.json")
        self.export_skeleton: bool = self.cfg.get("export_skeleton", False)
        self.hand_scale: float = self.cfg.get("hand_scale", 1.0)
        if not self.hand_scale > 0:
            raise ConfigurationError(f"`hand_scale` must be positive, got {self.hand_scale}.")

        self.diagnostics: dict = {}
        self.flags: dict[str, bool] = {}
        self.result: CaptureResult | None = None
        # Steady frames skipped as anchor for lack of confident detections
        self.skipped_anchors: list[int] = []

    @property
    def converged(self) -> bool:
        """True when every executed stage converged."""
        return all(self.flags.values())

    def _path(self, key: str) -> Path:
        value = self.cfg.data.get(key)
        if value is None:
            raise ConfigurationError(f"`data.{key}` is required by command `{self.command}`.")
        path = Path(value)
        if not path.exists():
            raise ConfigurationError(f"Input `data.{key}` does not exist: {path}")
        return path

    def validate(self):
        """Checks every input the selected stages read before anything runs."""
        keys = sorted({key for stage in self.stages for key in INPUTS[stage]})
        for key in keys:
            self._path(key)
        for key in ["skeleton", "object_init"]:
            if self.cfg.data.get(key) is not None and not Path(self.cfg.data[key]).exists():
                raise ConfigurationError(f"Input `data.{key}` does not exist: {self.cfg.data[key]}")
        logging.info("Stages: %s", ", ".join(self.stages) or "none")

    def setup(self):
        """Validates paths and loads the inputs of the selected stages."""
        self.validate()
        needed = {key for stage in self.stages for key in INPUTS[stage]}
        skeleton_file = self.cfg.data.get("skeleton")
        self.skeleton = HandSkeleton.from_file(skeleton_file) if skeleton_file else HandSkeleton.default()
        if "mesh" in needed:
            self.mesh = TriMesh.from_file(self._path("mesh"))
        if "turntable_cloud" in needed:
            self.turntable_cloud = PointCloud.from_file(self._path("turntable_cloud"))
        if "grasp_cloud" in needed:
            self.grasp_cloud = PointCloud.from_file(self._path("grasp_cloud"))
        if "contact_map" in needed:
            self.contact_map = ContactMap.from_file(self._path("contact_map"), self.mesh.num_vertices)
        if "keypoints_dir" in needed:
            intrinsics = CameraIntrinsics.from_file(self._path("intrinsics"))
            self.obs = load_observations(self._path("keypoints_dir"), intrinsics)
            self.steady_range = self._explicit_range()
        self.initialized = True

    def _explicit_range(self) -> tuple[int, int] | None:
        steady = self.cfg.steady
        if steady.get("mode", "auto") == "auto":
            return None
        if steady.mode != "explicit":
            raise ConfigurationError(f"Unknown steady mode `{steady.mode}`.")
        first, last = steady.range
        if not 1 <= first < last <= self.obs.num_frames:
            raise ConfigurationError(
                f"Steady range [{first}, {last}] must lie within [1, {self.obs.num_frames}] with first < last."
            )
        return first - 1, last - 1

    # Stages

    def object_pose(self) -> RigidTransform:
        """Registers the mesh to the turntable cloud, ^wT_o."""
        init_file = self.cfg.data.get("object_init")
        if init_file is not None:
            init = read_pose(init_file)
        else:
            offset = self.turntable_cloud.points.mean(dim=0) - self.mesh.vertices.mean(dim=0)
            init = RigidTransform(torch.eye(3, dtype=offset.dtype), offset, check=False)
        result = icp_register(self.turntable_cloud, self.mesh, init, self.icp_cfg)
        self._record(OBJECT_POSE, result.converged, rms=result.rms, iterations=result.iterations, reason=result.reason)
        return result.pose

    def steady_frames(self) -> tuple[int, int]:
        if self.steady_range is not None:
            first, last = self.steady_range
        else:
            first, last = select_steady_frames(
                self.obs,
                motion_threshold=self.cfg.steady.get("motion_threshold", 4.0),
                min_frames=self.cfg.steady.get("min_frames", 5),
                threshold=self.sfm_cfg.confidence_threshold,
            )
        # The anchor must see enough landmarks for a two-view start
        mask = self.obs.mask(self.sfm_cfg.confidence_threshold)
        self.skipped_anchors = []
        while first < last - 1 and mask[first].sum() < MIN_SHARED:
            logging.info("Frame %d skipped as anchor: too few confident detections.", first)
            self.skipped_anchors.append(first)
            first += 1
        return first, last

    def sfm(self) -> tuple[SfMSolution, ObservationSet, int]:
        """Reconstructs the steady hand and fixes the scale gauge with the user's hand scale."""
        first, last = self.steady_frames()
        obs = self.obs.subset(range(first, last + 1))
        solution = reconstruct(obs, self.sfm_cfg)
        _, scale = fit_palm_pose(solution.joints, self.skeleton)
        solution = rescale_to_metric(solution, self.hand_scale / scale)
        self._record(
            SFM,
            solution.converged,
            **report_dict(solution.report, SFM),
            final_cost=solution.final_cost,
            inlier_cost=solution.inlier_cost,
            rms=solution.rms(),
            registered=int(solution.registered.sum()),
            first_frame=first,
            last_frame=last,
        )
        return solution, obs, first

    def fit_hand(self, solution: SfMSolution) -> HandParams:
        palm_pose, scale = fit_palm_pose(solution.joints, self.skeleton)
        ik = solve_ik(self.skeleton, palm_pose, scale, solution.joints, self.ik_cfg)
        self._record(FIT_HAND, ik.converged, rms=ik.rms, iterations=ik.iterations, reason=ik.reason)
        return HandParams(palm_pose, scale, ik.angles)

    def joint(self, params: HandParams, solution: SfMSolution, obs: ObservationSet):
        _, staged = hand_reprojection_cost(self.skeleton, obs, params, solution.camera_poses, self.sfm_cfg)
        result = joint_hand_sfm(self.skeleton, obs, params, solution.camera_poses, self.sfm_cfg)
        self._record(
            JOINT,
            result.converged,
            **report_dict(result.report, JOINT),
            final_cost=result.final_cost,
            staged_cost=staged,
        )
        return result.params, result.camera_poses

    def adjust(self, wTo: RigidTransform) -> RigidTransform:
        T_adj, result = estimate_adjustment(self.grasp_cloud, self.mesh, wTo, self.icp_cfg)
        self._record(ADJUST, result.converged, rms=result.rms, iterations=result.iterations, reason=result.reason)
        return T_adj

    def refine(self, params: HandParams, wTo_grasped: RigidTransform) -> HandParams:
        proxy = CapsuleProxy(self.skeleton)
        mesh = self.mesh.transformed(wTo_grasped)
        before = contacted_distance(params, proxy, mesh, self.contact_map, self.contact_cfg)
        result = refine_grasp(params, proxy, mesh, self.contact_map, self.refine_cfg, self.contact_cfg)
        after = contacted_distance(result.params, proxy, mesh, self.contact_map, self.contact_cfg)
        self._record(
            REFINE,
            result.converged,
            energy=result.energy,
            initial_energy=result.initial_energy,
            iterations=result.iterations,
            reason=result.reason,
            contact_distance_before=before,
            contact_distance_after=after,
        )
        return result.params

    def _record(self, stage: str, converged: bool, **values):
        self.flags[stage] = bool(converged)
        values = {k.split("/")[-1]: v for k, v in values.items()}
        values["converged"] = bool(converged)
        self.diagnostics[stage] = values
        log = logging.info if converged else logging.warning
        log("Stage %s %s.", stage, "converged" if converged else "did NOT converge")

    # Orchestration

    def run(self) -> CaptureResult | dict:
        if self.command == SYNTH:
            return self.synth()

        outputs: dict = {}
        for stage in self.stages:
            with stage_context(stage):
                if stage == OBJECT_POSE:
                    outputs["object_pose_world"] = self.object_pose()
                elif stage == SFM:
                    outputs["sfm"] = self.sfm()
                elif stage == FIT_HAND:
                    outputs["hand"] = self.fit_hand(outputs["sfm"][0])
                    outputs["camera_poses"] = outputs["sfm"][0].camera_poses
                elif stage == JOINT:
                    outputs["hand"], outputs["camera_poses"] = self.joint(
                        outputs["hand"], outputs["sfm"][0], outputs["sfm"][1]
                    )
                elif stage == ADJUST:
                    outputs["adjustment"] = self.adjust(outputs["object_pose_world"])
                elif stage == REFINE:
                    grasped = outputs["adjustment"] @ outputs["object_pose_world"]
                    outputs["hand"] = self.refine(outputs["hand"], grasped)
                elif stage == PROPAGATE:
                    self.result = self.propagate(outputs)

        metrics = {f"{stage}/{k}": v for stage, values in self.diagnostics.items() for k, v in values.items()}
        metrics["converged"] = self.converged
        if self.result is not None:
            self.result.to_file(self.output_file)
            upload_result(self.output_file)
            plots = self.plots() if self.plot_results else None
            if self.export_skeleton:
                self.export()
            self.log(metrics, plots)
            return self.result
        document = self.partial_document(outputs)
        self.output_file.parent.mkdir(parents=True, exist_ok=True)
        self.output_file.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n")
        logging.info("Stage outputs written to %s", self.output_file)
        self.log(metrics)
        return document

    def propagate(self, outputs: dict) -> CaptureResult:
        solution, _, first = outputs["sfm"]
        hand: HandParams = outputs["hand"]
        # Steady-segment cameras mapped back onto all input frames
        count = self.obs.num_frames
        camera_poses: list[RigidTransform | None] = [None] * count
        status = [EXCLUDED_TRANSIENT] * count
        for i, (pose, frame_status) in enumerate(zip(outputs["camera_poses"], solution.status)):
            camera_poses[first + i] = pose
            status[first + i] = frame_status
        for frame in self.skipped_anchors:
            status[frame] = EXCLUDED_LOW_CONFIDENCE
        propagated = propagate_poses(
            camera_poses, outputs["adjustment"], outputs["object_pose_world"], hand.palm_pose
        )
        self._record(PROPAGATE, True, frames=sum(p is not None for p in propagated))
        return CaptureResult(
            hand=hand,
            object_pose_world=outputs["object_pose_world"],
            adjustment=outputs["adjustment"],
            camera_poses=camera_poses,
            object_poses=[None if p is None else p[0] for p in propagated],
            palm_poses=[None if p is None else p[1] for p in propagated],
            frame_status=status,
            joints=forward_kinematics(self.skeleton, hand),
            diagnostics=self.diagnostics,
            frame_ids=list(self.obs.frame_ids),
        )

    def partial_document(self, outputs: dict) -> dict:
        """Outputs of a command that stops before propagation."""
        document: dict = {"command": self.command, "diagnostics": self.diagnostics}
        for key in ["object_pose_world", "adjustment"]:
            if key in outputs:
                document[key] = outputs[key].matrix().tolist()
        if "sfm" in outputs:
            solution, _, first = outputs["sfm"]
            document["sfm"] = {
                "first_frame": first,
                "joints": solution.joints.tolist(),
                "camera_poses": [None if p is None else p.matrix().tolist() for p in solution.camera_poses],
                "status": solution.status,
            }
        if "hand" in outputs:
            hand: HandParams = outputs["hand"]
            document["hand"] = {
                "palm_pose": hand.palm_pose.matrix().tolist(),
                "palm_scale": float(hand.palm_scale),
                "angles": hand.angles.tolist(),
            }
        return document

    def plots(self) -> dict:
        cameras = self.result.camera_poses
        return {
            "trajectory": plot_trajectory(cameras, self.result.joints),
            "residuals": plot_residuals(self._residuals()),
        }

    def _residuals(self) -> torch.Tensor:
        residuals = []
        mask = self.obs.mask(self.sfm_cfg.confidence_threshold)
        for frame, points in enumerate(posed_landmarks(self.result.camera_poses, self.result.joints)):
            if points is None:
                continue
            uv = pinhole(points, self.obs.intrinsics)
            residuals.append((uv - self.obs.uv[frame])[mask[frame]])
        return torch.cat(residuals) if residuals else torch.zeros(0, 2)

    def export(self):
        proxy = CapsuleProxy(self.skeleton)
        path = self.output_file.with_name(self.output_file.stem + "_hand.obj")
        proxy.export(self.result.joints, path, self.result.hand.palm_scale)
        logging.info("Hand capsules written to %s", path)

    def synth(self) -> dict:
        scene_cfg = instantiate(self.cfg.synth)
        root = Path(self.cfg.data.root)
        scene = generate_scene(self.seed if self.seed is not None else 0, scene_cfg)
        write_dataset(scene, root)
        self.flags[SYNTH] = True
        metrics = {"synth/frames": scene.obs.num_frames, "synth/vertices": scene.mesh.num_vertices}
        self.log(metrics)
        return metrics


def run_pipeline(cfg: DictConfig) -> CaptureResult | dict:
    """Runs the configured command and returns its result."""
    solver = CaptureSolver(cfg)
    solver.setup()
    return solver()
