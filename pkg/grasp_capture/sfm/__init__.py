from grasp_capture.sfm.bundle import SfMSolution, bundle_adjust, initialize, reconstruct, rescale_to_metric
from grasp_capture.sfm.least_squares import SolverConfig, levenberg_marquardt
from grasp_capture.sfm.observations import ObservationSet, load_observations, write_observations
from grasp_capture.sfm.register import register_frame
from grasp_capture.sfm.two_view import init_two_view
