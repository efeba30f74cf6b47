//! Point-cloud kernels: chamfer distance, rigid yaw poses, reflection and symmetry search,
//! mesh interior sampling, ε-graph components and yaw-aligned bounding boxes.

mod chamfer;
mod cloud;
mod components;
pub(crate) mod kernels;
mod mesh;
mod obb;
mod pose;
mod resample;
mod symmetry;

pub use chamfer::{chamfer, directed_chamfer, pairwise_distances, DistanceMatrix};
pub use cloud::{distance, Point, PointCloud};
pub use components::{component_members, connected_components};
pub use mesh::{sample_mesh_interior, sample_mesh_surface, TriMesh};
pub use obb::{box_at_yaw, yaw_obb, YawBox};
pub use pose::{apply_inverse_pose, apply_pose, rotate_yaw, RigidPose};
pub use resample::{bootstrap_pad, farthest_point_subsample, resample_to};
pub use symmetry::{detect_symmetry_plane, mirror_overlap, reflect_points, SymmetryDetection, SymmetryPlane};
