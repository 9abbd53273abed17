//! Nominal meshes, measured clouds, normal deviations and key-point selection.

mod cloud;
mod decimate;
mod deviation;
mod keypoints;
mod mesh;

pub use cloud::PointCloud;
pub use decimate::{decimate, PreviewMesh};
pub use deviation::{
    deviation_from_cop, deviation_from_displacement, DeviationField, DeviationRole, FieldStats,
};
pub use keypoints::{select_key_points, voxel_index, KeyPointSet, ManipulatedKeySet};
pub use mesh::{Mesh, MeshId, MeshWarnings, Vec3, MIN_TRIANGLE_AREA};
pub(crate) use mesh::{cross, dot, norm, sub};
