//! Spatial search and mesh machinery.

mod interaction;
mod kdtree;
mod knn;
mod mesh;
mod types;
mod voxel;

pub use interaction::{
    close_sample_pairs, find_interaction_points, link_samples, offset_face_pair, receiver_neighborhood,
    sender_vertex_neighborhood, vertex_surface_neighborhood, InteractionPointSet,
};
pub use kdtree::KdTree;
pub use knn::{knn_cross_object, knn_same_object, nearest_same_object, ObjectIndex};
pub use mesh::{
    barycentric, faces_incident_to_vertex, mesh_vertex_neighborhood, sample_face_points,
    simplify_vertex_clustering, FaceSampling, FaceSamples,
};
pub use types::{Neighborhood, PointCloudFrame, TriMesh, VoxelSchedule};
pub use voxel::{cluster_by_object, grid_downsample, grid_downsample_by_object, voxel_key, Clustering};

use std::collections::BTreeMap;

use crate::Vec3;

/// Default neighborhood size for object and relational search.
pub const DEFAULT_K: usize = 16;

/// Default number of samples per face for interaction detection.
pub const DEFAULT_SAMPLES_PER_FACE: usize = 8;

/// Smallest distance between points of different objects, or `None` when
/// fewer than two objects are present.
pub fn min_inter_object_distance(positions: &[Vec3], object_ids: &[u32]) -> Option<f64> {
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &o) in object_ids.iter().enumerate() {
        members.entry(o).or_default().push(i);
    }
    if members.len() < 2 {
        return None;
    }
    let groups: Vec<(&Vec<usize>, KdTree)> = members
        .values()
        .map(|idx| (idx, KdTree::new(positions, idx.clone())))
        .collect();
    let mut best = f64::INFINITY;
    for (a, (ma, ta)) in groups.iter().enumerate() {
        for (mb, tb) in &groups[a + 1..] {
            let (scan, tree) = if ma.len() <= mb.len() { (ma, tb) } else { (mb, ta) };
            for &i in scan.iter() {
                if let Some(c) = tree.knn_filtered(&positions[i], 1, best * best, |_| true).first() {
                    best = best.min(c.dist2.sqrt());
                }
            }
        }
    }
    Some(best)
}
