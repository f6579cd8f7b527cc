import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
import trimesh

from grasp_capture.contact.energy import (
    CapsuleProxy,
    ContactConfig,
    contact_energy,
    contacted_distance,
    energy_terms,
)
from grasp_capture.contact.icp import IcpConfig, estimate_adjustment, icp_register
from grasp_capture.contact.mesh import ContactMap, PointCloud, TriMesh, make_box, make_sphere
from grasp_capture.contact.refine import RefineConfig, refine_grasp
from grasp_capture.geom.transforms import RigidTransform
from grasp_capture.hand.skeleton import NUM_PARAMS, HandParams
from grasp_capture.synth.scene import SceneConfig, generate_scene, random_rigid
from grasp_capture.utils.common import DTYPE
from grasp_capture.utils.errors import IllConditioned

torch.manual_seed(42)
np.random.seed(42)


def shifted(params: HandParams, offset) -> HandParams:
    pose = RigidTransform(params.palm_pose.rotation, params.palm_pose.translation + torch.tensor(offset, dtype=DTYPE))
    return HandParams(pose, params.palm_scale, params.angles)


class TestMesh(unittest.TestCase):
    def test_closest_points_brute_force(self, num=50):
        mesh = make_box()
        points = 0.08 * torch.randn(num, 3, dtype=DTYPE)
        closest = mesh.closest_points(points)
        corners = mesh.mesh.triangles
        for i in range(num):
            query = np.repeat(points[i].numpy()[None], len(corners), axis=0)
            candidates = trimesh.triangles.closest_point(corners, query)
            brute = np.linalg.norm(candidates - query, axis=-1).min()
            with self.subTest(i=i):
                self.assertAlmostEqual(closest.distances[i].item(), brute, places=12)
        torch.testing.assert_close(
            torch.linalg.vector_norm(closest.points - points, dim=-1), closest.distances, rtol=0, atol=1e-12
        )

    def test_sphere_signed_distance(self):
        radius = 0.06
        mesh = make_sphere(radius=radius)
        directions = torch.randn(200, 3, dtype=DTYPE)
        directions = directions / torch.linalg.vector_norm(directions, dim=-1, keepdim=True)
        norms = torch.linspace(0.03, 0.09, 200, dtype=DTYPE)
        signed = mesh.signed_distance(norms[:, None] * directions)
        torch.testing.assert_close(signed, norms - radius, rtol=0, atol=1e-4)

    def test_degenerate_triangles_dropped(self):
        vertices = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0]]
        mesh = TriMesh(vertices, [[0, 1, 2], [0, 1, 3]])
        self.assertEqual(len(mesh.triangles), 1)
        self.assertEqual(mesh.num_vertices, 4)
        with self.assertRaises(ValueError):
            TriMesh(vertices, [[0, 1, 3]])
        with self.assertRaises(ValueError):
            TriMesh(vertices, [[0, 1, 7]])

    def test_obj_keeps_vertex_order(self):
        mesh = make_box()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "mesh.obj"
            mesh.to_file(path)
            loaded = TriMesh.from_file(path)
        torch.testing.assert_close(loaded.vertices, mesh.vertices)

    def test_contact_map_file(self):
        values = torch.rand(12, dtype=DTYPE)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "contact.txt"
            ContactMap(values).to_file(path)
            torch.testing.assert_close(ContactMap.from_file(path, 12).values, values)
            with self.assertRaises(ValueError):
                ContactMap.from_file(path, 13)

    def test_point_cloud_file(self):
        cloud = PointCloud(torch.randn(20, 3, dtype=DTYPE))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "cloud.xyz"
            cloud.to_file(path)
            torch.testing.assert_close(PointCloud.from_file(path).points, cloud.points)
        with self.assertRaises(ValueError):
            cloud.check_size()


class TestIcp(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scene = generate_scene(21, SceneConfig(num_frames=10))

    def test_box_recovery(self, num_seeds=20):
        for seed in range(num_seeds):
            scene = self.scene if seed == 0 else generate_scene(100 + seed, SceneConfig(num_frames=10))
            result = icp_register(scene.turntable_cloud, scene.mesh, scene.object_init)
            rotation, translation = result.pose.distance(scene.object_pose_world)
            with self.subTest(seed=seed):
                self.assertTrue(result.converged)
                self.assertLess(rotation, math.radians(0.5))
                self.assertLess(translation, 1e-3)
                self.assertLess(result.rms, 1e-4)

    def test_pose_equivariance(self):
        generator = torch.Generator().manual_seed(5)
        transform = random_rigid(generator, math.radians(40.0), 0.3)
        result = icp_register(self.scene.turntable_cloud, self.scene.mesh, self.scene.object_init)
        moved = icp_register(
            PointCloud(transform.apply(self.scene.turntable_cloud.points)),
            self.scene.mesh,
            transform @ self.scene.object_init,
        )
        rotation, translation = moved.pose.distance(transform @ result.pose)
        self.assertLess(rotation, 1e-7)
        self.assertLess(translation, 1e-7)
        self.assertAlmostEqual(moved.rms, result.rms, delta=1e-7)

    def test_sphere_ill_conditioned(self):
        # Rotations about the center leave a sphere unchanged, so its pose is never observable
        mesh = make_sphere()
        cloud = PointCloud(mesh.sample(500, seed=0))
        with self.assertRaises(IllConditioned):
            icp_register(cloud, mesh, RigidTransform.identity())

    def test_small_cloud(self):
        cloud = PointCloud(self.scene.turntable_cloud.points[:50])
        with self.assertRaises(ValueError):
            icp_register(cloud, self.scene.mesh, self.scene.object_init)

    def test_adjustment(self):
        adjustment, result = estimate_adjustment(self.scene.grasp_cloud, self.scene.mesh, self.scene.object_pose_world)
        self.assertTrue(result.converged)
        rotation, translation = adjustment.distance(self.scene.adjustment)
        self.assertLess(rotation, math.radians(0.5))
        self.assertLess(translation, 1e-3)
        torch.testing.assert_close((adjustment @ self.scene.object_pose_world).matrix(), result.pose.matrix())

    def test_noisy_adjustment(self):
        scene = generate_scene(22, SceneConfig(num_frames=10, cloud_noise=5e-4))
        adjustment, result = estimate_adjustment(scene.grasp_cloud, scene.mesh, scene.object_pose_world)
        self.assertTrue(result.converged)
        rotation, translation = adjustment.distance(scene.adjustment)
        self.assertLess(rotation, math.radians(0.5))
        self.assertLess(translation, 1e-3)

    def test_identity_adjustment(self):
        cloud = PointCloud(self.scene.object_pose_world.apply(self.scene.mesh.sample(1000, seed=3)))
        adjustment, _ = estimate_adjustment(cloud, self.scene.mesh, self.scene.object_pose_world, IcpConfig())
        rotation, translation = adjustment.distance(RigidTransform.identity())
        self.assertLess(rotation, 1e-6)
        self.assertLess(translation, 1e-6)


class TestEnergy(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scene = generate_scene(31, SceneConfig(num_frames=10))
        cls.proxy = CapsuleProxy(cls.scene.skeleton)
        cls.mesh = cls.scene.mesh.transformed(cls.scene.grasped_pose)

    def test_capsule_distance(self):
        joints = self.scene.joints
        a, b, radii = self.proxy.segments(joints, self.scene.params.palm_scale)
        for k in range(len(self.proxy)):
            axis = (b[k] - a[k]) / torch.linalg.vector_norm(b[k] - a[k])
            normal = torch.linalg.cross(axis, torch.tensor([0.3, 0.5, 0.8], dtype=DTYPE))
            normal = normal / torch.linalg.vector_norm(normal)
            point = (a[k] + b[k]) / 2 + 0.02 * normal
            distance = self.proxy.distances(point[None], joints, self.scene.params.palm_scale)[0, k]
            with self.subTest(capsule=k):
                self.assertAlmostEqual(distance.item(), 0.02 - radii[k].item(), places=12)

    def test_gradient(self, num_configs=50, eps=1e-7):
        cfg = ContactConfig()
        generator = torch.Generator().manual_seed(8)
        for k in range(num_configs):
            noise = 0.004 * torch.randn(3, generator=generator, dtype=DTYPE)
            offset = torch.tensor([0.0, 0.0, 0.006], dtype=DTYPE) + noise
            params = shifted(self.scene.params, offset.tolist())
            _, grad = contact_energy(params, self.proxy, self.mesh, self.scene.contact_map, cfg)
            fd = torch.zeros(NUM_PARAMS, dtype=DTYPE)
            for i in range(NUM_PARAMS):
                step = torch.zeros(NUM_PARAMS, dtype=DTYPE)
                step[i] = eps
                plus = sum(energy_terms(params, self.proxy, self.mesh, self.scene.contact_map, cfg, delta=step))
                minus = sum(energy_terms(params, self.proxy, self.mesh, self.scene.contact_map, cfg, delta=-step))
                fd[i] = (plus - minus).item() / (2 * eps)
            with self.subTest(config=k):
                error = torch.linalg.vector_norm(grad - fd) / torch.linalg.vector_norm(fd)
                self.assertLess(error.item(), 1e-4)

    def test_mismatched_map(self):
        with self.assertRaises(ValueError):
            contact_energy(self.scene.params, self.proxy, self.mesh, ContactMap(torch.ones(5, dtype=DTYPE)))

    def test_config(self):
        with self.assertRaises(ValueError):
            ContactConfig(contact_threshold=0.0)
        with self.assertRaises(ValueError):
            ContactConfig(w_penetrate=-1.0)

    def test_refine_attracts(self):
        init = shifted(self.scene.params, (0.0, 0.0, 0.01))
        result = refine_grasp(init, self.proxy, self.mesh, self.scene.contact_map, RefineConfig(max_iterations=200))
        self.assertLessEqual(result.energy, 0.5 * result.initial_energy)
        history = result.history
        self.assertTrue(all(b <= a for a, b in zip(history, history[1:])))
        self.assertTrue(self.scene.skeleton.within_limits(result.params.angles))
        self.assertLess(
            contacted_distance(result.params, self.proxy, self.mesh, self.scene.contact_map),
            contacted_distance(init, self.proxy, self.mesh, self.scene.contact_map),
        )

    def test_refine_resolves_penetration(self):
        cmap = ContactMap(torch.zeros(self.mesh.num_vertices, dtype=DTYPE))
        init = shifted(self.scene.params, (0.0, 0.0, -0.01))
        before = energy_terms(init, self.proxy, self.mesh, cmap).penetration.item()
        self.assertGreater(before, 0.0)
        result = refine_grasp(init, self.proxy, self.mesh, cmap, RefineConfig(max_iterations=100))
        after = energy_terms(result.params, self.proxy, self.mesh, cmap).penetration.item()
        self.assertLess(after, before)

    def test_export(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "hand.obj"
            self.proxy.export(self.scene.joints, path, self.scene.params.palm_scale)
            exported = trimesh.load(str(path), force="mesh")
        self.assertGreater(len(exported.faces), 0)
        bounds = torch.as_tensor(exported.bounds, dtype=DTYPE)
        self.assertTrue((bounds[0] <= self.scene.joints.min(dim=0).values + 1e-9).all())


if __name__ == "__main__":
    unittest.main()
