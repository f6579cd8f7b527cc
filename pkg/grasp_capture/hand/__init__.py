from grasp_capture.hand.kinematics import fk_jacobian, forward_kinematics, pose_landmarks
from grasp_capture.hand.skeleton import (
    NON_RIGID_INDICES,
    RIGID_INDICES,
    HandParams,
    HandSkeleton,
    rigid_points,
)
