from grasp_capture.fit.ik import IkConfig, IkResult, solve_ik
from grasp_capture.fit.joint import JointResult, hand_reprojection_cost, joint_hand_sfm
from grasp_capture.fit.palm import fit_palm_pose
