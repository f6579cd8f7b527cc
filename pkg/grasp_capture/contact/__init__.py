from grasp_capture.contact.energy import CapsuleProxy, ContactConfig, contact_energy, energy_terms
from grasp_capture.contact.icp import IcpConfig, IcpResult, estimate_adjustment, icp_register
from grasp_capture.contact.mesh import ContactMap, PointCloud, TriMesh, make_box, make_sphere
from grasp_capture.contact.refine import RefineConfig, RefineResult, refine_grasp
