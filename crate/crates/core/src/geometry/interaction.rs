//! Interaction points between faces of different objects.
//!
//! Faces are sampled, and every cross-object pair of samples closer than
//! the threshold becomes a directed sender/receiver link in both
//! directions. The sample search uses a voxel hash with cell size equal to
//! the threshold.

use std::collections::{BTreeSet, HashMap};

use super::kdtree::KdTree;
use super::mesh::{faces_incident_to_vertex, sample_face_points, FaceSampling};
use super::types::{Neighborhood, TriMesh};
use super::voxel::{voxel_key, VoxelKey};
use crate::{Error, Result, Vec3};

/// Interaction points on faces and the sender→receiver links between them.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InteractionPointSet {
    pub sender_points: Vec<Vec3>,
    pub sender_face: Vec<usize>,
    pub sender_object: Vec<u32>,
    pub receiver_points: Vec<Vec3>,
    pub receiver_face: Vec<usize>,
    pub receiver_object: Vec<u32>,
    /// `(sender index, receiver index)`, sorted.
    pub pairs: Vec<(usize, usize)>,
}

impl InteractionPointSet {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Face pairs `(sender face, receiver face)` with at least one link.
    pub fn face_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.pairs
            .iter()
            .map(|&(s, r)| (self.sender_face[s], self.receiver_face[r]))
            .collect()
    }
}

/// Unordered cross-object sample pairs `(a, b)`, `a < b`, with distance
/// at most `threshold`.
pub fn close_sample_pairs(points: &[Vec3], objects: &[u32], threshold: f64) -> Vec<(usize, usize)> {
    let mut grid: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(voxel_key(p, threshold)).or_default().push(i);
    }
    let t2 = threshold * threshold;
    let mut pairs = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let [x, y, z] = voxel_key(p, threshold);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = grid.get(&[x + dx, y + dy, z + dz]) else {
                        continue;
                    };
                    for &j in cell {
                        if j > i && objects[j] != objects[i] && (points[j] - p).norm_squared() <= t2 {
                            pairs.push((i, j));
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Samples every face and links cross-object samples within `threshold`.
pub fn find_interaction_points(
    mesh: &TriMesh,
    samples_per_face: usize,
    threshold: f64,
    sampling: FaceSampling,
) -> Result<InteractionPointSet> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("interaction threshold must be positive"));
    }
    let samples = sample_face_points(mesh, samples_per_face, sampling)?;
    let objects: Vec<u32> = samples.faces.iter().map(|&f| mesh.face_object(f)).collect();
    let close = close_sample_pairs(&samples.points, &objects, threshold);
    Ok(link_samples(&samples.points, &samples.faces, &objects, &close))
}

/// Builds the symmetric sender/receiver structure from unordered pairs
/// over a sample list. Every linked sample is both a sender and a receiver.
pub fn link_samples(
    points: &[Vec3],
    faces: &[usize],
    objects: &[u32],
    close: &[(usize, usize)],
) -> InteractionPointSet {
    let involved: BTreeSet<usize> = close.iter().flat_map(|&(a, b)| [a, b]).collect();
    let slot: HashMap<usize, usize> = involved.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let pts: Vec<Vec3> = involved.iter().map(|&s| points[s]).collect();
    let fcs: Vec<usize> = involved.iter().map(|&s| faces[s]).collect();
    let obj: Vec<u32> = involved.iter().map(|&s| objects[s]).collect();
    let mut pairs: Vec<(usize, usize)> = close
        .iter()
        .flat_map(|&(a, b)| [(slot[&a], slot[&b]), (slot[&b], slot[&a])])
        .collect();
    pairs.sort_unstable();
    InteractionPointSet {
        sender_points: pts.clone(),
        sender_face: fcs.clone(),
        sender_object: obj.clone(),
        receiver_points: pts,
        receiver_face: fcs,
        receiver_object: obj,
        pairs,
    }
}

/// For each sender point, the three vertices of its face.
pub fn sender_vertex_neighborhood(mesh: &TriMesh, ips: &InteractionPointSet) -> Neighborhood {
    Neighborhood::from_lists(ips.sender_face.iter().map(|&f| mesh.triangles[f]))
}

/// For each receiver point, up to `k` nearest sender points of other
/// objects within `threshold`.
pub fn receiver_neighborhood(ips: &InteractionPointSet, k: usize, threshold: f64) -> Neighborhood {
    if ips.sender_points.is_empty() {
        return Neighborhood::empty(ips.receiver_points.len());
    }
    let tree = KdTree::over_all(&ips.sender_points);
    let t2 = threshold * threshold;
    Neighborhood::from_lists(ips.receiver_points.iter().zip(&ips.receiver_object).map(|(p, &o)| {
        tree.knn_filtered(p, k, t2, |s| ips.sender_object[s] != o)
            .into_iter()
            .map(|c| c.index)
    }))
}

/// For each mesh vertex, the receiver points lying on faces incident to it.
pub fn vertex_surface_neighborhood(mesh: &TriMesh, ips: &InteractionPointSet) -> Neighborhood {
    let mut on_face: HashMap<usize, Vec<usize>> = HashMap::new();
    for (r, &f) in ips.receiver_face.iter().enumerate() {
        on_face.entry(f).or_default().push(r);
    }
    let incident = faces_incident_to_vertex(mesh);
    Neighborhood::from_lists(incident.iter().map(|faces| {
        faces
            .iter()
            .flat_map(|f| on_face.get(f).into_iter().flatten().copied())
            .collect::<Vec<_>>()
    }))
}

/// Two parallel triangles whose interiors overlap while all corners are
/// far apart.
pub fn offset_face_pair(gap: f64) -> TriMesh {
    TriMesh::new(
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.6, 0.6, gap),
            Vec3::new(-0.4, 0.6, gap),
            Vec3::new(0.6, -0.4, gap),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
        vec![0, 0, 0, 1, 1, 1],
    )
    .expect("fixture mesh is valid")
}
