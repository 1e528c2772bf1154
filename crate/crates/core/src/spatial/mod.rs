//! Spatial indexes: a kd-tree over points and a BVH over mesh triangles.

mod bvh;
mod kdtree;

pub use bvh::{build_mesh_index, closest_point_on_mesh, ClosestPoint, MeshIndex};
pub use kdtree::{KdTree, Neighbor};
