import json
import math
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from hydra import compose, initialize_config_dir

from grasp_capture.geom.so3 import random_rotation
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.pipeline.capture import (
    ADJUST,
    FIT_HAND,
    JOINT,
    OBJECT_POSE,
    PROPAGATE,
    REFINE,
    SFM,
    CaptureSolver,
    run_pipeline,
    stages_for,
)
from grasp_capture.pipeline.io import EXCLUDED_TRANSIENT, CaptureResult, read_pose, write_pose
from grasp_capture.pipeline.propagate import posed_landmarks, propagate_poses
from grasp_capture.pipeline.steady import frame_motion, select_steady_frames
from grasp_capture.sfm.bundle import EXCLUDED_LOW_CONFIDENCE, REGISTERED
from grasp_capture.sfm.observations import ObservationSet
from grasp_capture.synth.evaluate import evaluate
from grasp_capture.synth.scene import SceneConfig, generate_scene, write_dataset
from grasp_capture.utils.common import DTYPE
from grasp_capture.utils.errors import ConfigurationError, NoSteadySegment

torch.manual_seed(42)
np.random.seed(42)

CONF_DIR = Path(__file__).parents[1] / "conf"


def load_cfg(overrides: list[str]):
    with initialize_config_dir(version_base=None, config_dir=str(CONF_DIR.absolute())):
        return compose(config_name="base", overrides=overrides)


def random_pose(generator: torch.Generator) -> RigidTransform:
    return RigidTransform(random_rotation(generator), torch.randn(3, generator=generator, dtype=DTYPE))


class TestSteady(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scene = generate_scene(0, SceneConfig(num_frames=10))

    def observations(self, transient: int, steady: int) -> ObservationSet:
        """Jittery leading frames followed by similarity-related copies of one frame."""
        generator = torch.Generator().manual_seed(transient + 100 * steady)
        base = self.scene.exact_uv[0]
        frames = [base + 30.0 * torch.randn(base.shape, generator=generator, dtype=DTYPE) for _ in range(transient)]
        for k in range(steady):
            angle = 0.01 * k
            rotation = torch.tensor(
                [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]], dtype=DTYPE
            )
            center = base.mean(dim=0)
            frames.append((1.0 + 0.005 * k) * (base - center) @ rotation.T + center + 0.5 * k)
        uv = torch.stack(frames)
        return ObservationSet(uv, torch.ones(uv.shape[:2], dtype=DTYPE), self.scene.intrinsics)

    def test_constant(self):
        obs = self.observations(0, 12)
        torch.testing.assert_close(frame_motion(obs), torch.zeros(12, dtype=DTYPE), rtol=0, atol=1e-9)
        self.assertEqual(select_steady_frames(obs), (0, 11))

    def test_transient_prefix(self):
        obs = self.observations(6, 10)
        self.assertEqual(select_steady_frames(obs), (6, 15))

    def test_unbounded_threshold(self):
        obs = self.observations(6, 10)
        self.assertEqual(select_steady_frames(obs, motion_threshold=math.inf), (0, 15))

    def test_too_short(self):
        obs = self.observations(8, 3)
        with self.assertRaises(NoSteadySegment):
            select_steady_frames(obs, min_frames=5)

    def test_missing_detections(self):
        obs = self.observations(0, 8)
        confidence = obs.confidence.clone()
        confidence[4, 2:] = 0.0
        motion = frame_motion(ObservationSet(obs.uv, confidence, obs.intrinsics))
        self.assertTrue(math.isinf(motion[4].item()))
        self.assertTrue(math.isinf(motion[5].item()))

    def test_synthetic_transient(self):
        scene = generate_scene(3, SceneConfig(num_frames=30, transient=5))
        self.assertEqual(select_steady_frames(scene.obs), (5, 29))


class TestPropagate(unittest.TestCase):
    def test_algebra(self):
        generator = torch.Generator().manual_seed(0)
        cameras = [RigidTransform.identity(), None] + [random_pose(generator) for _ in range(5)]
        T_adj, wTo, wTp = random_pose(generator), random_pose(generator), random_pose(generator)
        poses = propagate_poses(cameras, T_adj, wTo, wTp)
        self.assertIsNone(poses[1])
        # The anchor sees the grasped object and palm in world coordinates
        torch.testing.assert_close(poses[0][0].matrix(), (T_adj @ wTo).matrix(), rtol=0, atol=1e-12)
        torch.testing.assert_close(poses[0][1].matrix(), wTp.matrix(), rtol=0, atol=1e-12)
        for camera, pose in zip(cameras[2:], poses[2:]):
            cTo, cTp = pose
            expected = torch.linalg.inv(camera.matrix()) @ T_adj.matrix() @ wTo.matrix()
            torch.testing.assert_close(cTo.matrix(), expected, rtol=0, atol=1e-9)
            torch.testing.assert_close((camera @ cTp).matrix(), wTp.matrix(), rtol=0, atol=1e-9)

    def test_landmarks(self):
        generator = torch.Generator().manual_seed(1)
        camera = random_pose(generator)
        joints = torch.randn(21, 3, generator=generator, dtype=DTYPE)
        posed = posed_landmarks([camera, None], joints)
        self.assertIsNone(posed[1])
        torch.testing.assert_close(camera.apply(posed[0]), joints)


class TestCaptureResult(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scene = generate_scene(5, SceneConfig(num_frames=12, transient=2))

    def test_roundtrip(self):
        result = self.scene.as_result()
        loaded = CaptureResult.from_dict(json.loads(result.dumps()))
        self.assertEqual(loaded.dumps(), result.dumps())
        self.assertEqual(loaded.frame_status[:2], [EXCLUDED_TRANSIENT] * 2)
        self.assertIsNone(loaded.object_poses[0])
        self.assertEqual(loaded.anchor, 2)
        torch.testing.assert_close(loaded.camera_poses[2].matrix(), torch.eye(4, dtype=DTYPE))

    def test_file(self):
        result = self.scene.as_result()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "out" / "capture.json"
            result.to_file(path)
            self.assertEqual(CaptureResult.from_file(path).dumps(), result.dumps())

    def test_schema_version(self):
        doc = self.scene.as_result().to_dict()
        doc["schema_version"] = "0.1"
        with self.assertRaises(ValueError):
            CaptureResult.from_dict(doc)

    def test_lengths(self):
        result = self.scene.as_result()
        with self.assertRaises(ValueError):
            CaptureResult(
                hand=result.hand,
                object_pose_world=result.object_pose_world,
                adjustment=result.adjustment,
                camera_poses=result.camera_poses,
                object_poses=result.object_poses[1:],
                palm_poses=result.palm_poses,
                frame_status=result.frame_status,
                joints=result.joints,
            )

    def test_pose_file(self):
        pose = random_pose(torch.Generator().manual_seed(2))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "pose.json"
            write_pose(pose, path)
            torch.testing.assert_close(read_pose(path).matrix(), pose.matrix())
            path.write_text(json.dumps(pose.matrix().tolist()))
            torch.testing.assert_close(read_pose(path).matrix(), pose.matrix())


class TestStages(unittest.TestCase):
    def test_run(self):
        self.assertEqual(
            stages_for("run", {JOINT: False, REFINE: True}),
            [OBJECT_POSE, SFM, FIT_HAND, ADJUST, REFINE, PROPAGATE],
        )
        self.assertEqual(
            stages_for("run", {JOINT: True, REFINE: False}),
            [OBJECT_POSE, SFM, FIT_HAND, JOINT, ADJUST, PROPAGATE],
        )

    def test_single_commands(self):
        enabled = {JOINT: True, REFINE: True}
        self.assertEqual(stages_for("object-pose", enabled), [OBJECT_POSE])
        self.assertEqual(stages_for("fit-hand", enabled), [SFM, FIT_HAND])
        self.assertEqual(stages_for("adjust", enabled), [OBJECT_POSE, ADJUST])
        self.assertEqual(stages_for("refine", enabled), [OBJECT_POSE, SFM, FIT_HAND, JOINT, ADJUST, REFINE])
        self.assertEqual(stages_for("synth", enabled), [])

    def test_unknown(self):
        with self.assertRaises(ConfigurationError):
            stages_for("joint", {})
        with self.assertRaises(ConfigurationError):
            stages_for("calibrate", {})


class TestCapture(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name) / "data"
        cls.scene = generate_scene(7, SceneConfig(num_frames=30, transient=5))
        write_dataset(cls.scene, cls.root)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def overrides(self, out: str, *extra: str) -> list[str]:
        return [f"data.root={self.root}", f"out_dir={Path(self.tmp.name) / out}", *extra]

    def test_end_to_end(self):
        outputs = []
        for out in ["first", "second"]:
            cfg = load_cfg(self.overrides(out, "stages.refine=False"))
            result = run_pipeline(cfg)
            outputs.append((Path(cfg.out_dir) / "capture.json").read_text())

        self.assertEqual(outputs[0], outputs[1])
        self.assertTrue(all(values["converged"] for values in result.diagnostics.values()))
        self.assertEqual(result.frame_status[:5], [EXCLUDED_TRANSIENT] * 5)
        self.assertEqual(result.frame_status[5:], [REGISTERED] * 25)
        self.assertEqual(result.anchor, 5)
        metrics = evaluate(result, self.scene)
        self.assertLess(metrics["eval/joint_rmse"], 1e-5)
        self.assertLess(metrics["eval/camera_rot_max"], 1e-5)
        self.assertLess(metrics["eval/camera_trans_max"], 1e-5)
        self.assertLess(metrics["eval/object_rot"], math.radians(0.5))
        self.assertLess(metrics["eval/object_trans"], 1e-3)
        self.assertLess(metrics["eval/adjustment_rot"], math.radians(0.5))
        self.assertLess(metrics["eval/adjustment_trans"], 1e-3)

        # The hand fit alone matches the full run without refinement
        cfg = load_cfg(self.overrides("fit", "command=fit-hand"))
        document = run_pipeline(cfg)
        self.assertEqual(document["hand"]["angles"], result.hand.angles.tolist())
        self.assertEqual(document["hand"]["palm_pose"], result.hand.palm_pose.matrix().tolist())

    def test_skipped_anchor_status(self):
        cfg = load_cfg(self.overrides("skipped", "stages.refine=False", "steady.mode=explicit", "steady.range=[6,30]"))
        solver = CaptureSolver(cfg)
        solver.setup()
        confidence = solver.obs.confidence.clone()
        confidence[5, 5:] = 0.0
        solver.obs = replace(solver.obs, confidence=confidence)
        result = solver()
        self.assertEqual(solver.skipped_anchors, [5])
        self.assertEqual(result.anchor, 6)
        self.assertEqual(result.frame_status[:5], [EXCLUDED_TRANSIENT] * 5)
        self.assertEqual(result.frame_status[5], EXCLUDED_LOW_CONFIDENCE)
        self.assertEqual(result.frame_status[6:], [REGISTERED] * 24)

    def test_partial_command(self):
        cfg = load_cfg(self.overrides("partial", "command=object-pose"))
        document = run_pipeline(cfg)
        written = json.loads((Path(cfg.out_dir) / "capture.json").read_text())
        self.assertEqual(written["command"], "object-pose")
        self.assertEqual(written["object_pose_world"], document["object_pose_world"])
        self.assertNotIn("hand", written)
        self.assertTrue(written["diagnostics"][OBJECT_POSE]["converged"])

    def test_missing_contact_map(self):
        cfg = load_cfg(self.overrides("missing", f"data.contact_map={self.root / 'absent.txt'}"))
        solver = CaptureSolver(cfg)
        with self.assertRaises(ConfigurationError):
            solver.setup()
        self.assertFalse((Path(cfg.out_dir) / "capture.json").exists())

    def test_invalid_range(self):
        cfg = load_cfg(self.overrides("range", "command=sfm", "steady.mode=explicit", "steady.range=[3,99]"))
        solver = CaptureSolver(cfg)
        with self.assertRaises(ConfigurationError):
            solver.setup()

    def test_synth_command(self):
        root = Path(self.tmp.name) / "generated"
        cfg = load_cfg(
            [f"data.root={root}", f"out_dir={Path(self.tmp.name) / 'synth'}", "command=synth", "synth.num_frames=12"]
        )
        run_pipeline(cfg)
        self.assertEqual(len(list((root / "keypoints").glob("*.json"))), 12)
        truth = CaptureResult.from_file(root / "ground_truth.json")
        self.assertEqual(truth.num_frames, 12)


if __name__ == "__main__":
    unittest.main()
