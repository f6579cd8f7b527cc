from grasp_capture.geom.align import umeyama, umeyama_align
from grasp_capture.geom.camera import CameraIntrinsics, pinhole, project, to_camera
from grasp_capture.geom.so3 import hat, rotation_exp, rotation_log
from grasp_capture.geom.transforms import RigidTransform, SimilarityTransform
