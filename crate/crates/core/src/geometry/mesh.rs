//! Mesh adjacency, face sampling and simplification.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::types::{Neighborhood, TriMesh};
use super::voxel::cluster_by_object;
use crate::{Error, Result, Vec3};

/// Neighbors of every vertex through shared edges, ascending, self excluded.
pub fn mesh_vertex_neighborhood(mesh: &TriMesh) -> Neighborhood {
    let mut adj = vec![BTreeSet::new(); mesh.vertices.len()];
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    Neighborhood::from_lists(adj)
}

/// Faces that use each vertex as a corner, ascending.
pub fn faces_incident_to_vertex(mesh: &TriMesh) -> Neighborhood {
    let mut inc: Vec<Vec<usize>> = vec![Vec::new(); mesh.vertices.len()];
    for (f, t) in mesh.triangles.iter().enumerate() {
        for v in t.iter().copied().collect::<BTreeSet<_>>() {
            inc[v].push(f);
        }
    }
    Neighborhood::from_lists(inc)
}

/// How to place points on faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceSampling {
    /// Uniform in area, reproducible for a seed.
    Uniform { seed: u64 },
    /// One point at each face centroid.
    Centroid,
}

/// Sample points on faces together with the face each came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSamples {
    pub points: Vec<Vec3>,
    pub faces: Vec<usize>,
}

/// Uniform barycentric samples on every triangle (`samples_per_face` each,
/// grouped by face) or one centroid per face.
pub fn sample_face_points(mesh: &TriMesh, samples_per_face: usize, mode: FaceSampling) -> Result<FaceSamples> {
    if samples_per_face == 0 {
        return Err(Error::invalid("samples_per_face must be at least 1"));
    }
    if let Some(f) = (0..mesh.triangles.len()).find(|&f| mesh.face_area(f) <= 0.0) {
        return Err(Error::ZeroAreaFace(f));
    }
    let mut out = FaceSamples {
        points: Vec::new(),
        faces: Vec::new(),
    };
    match mode {
        FaceSampling::Centroid => {
            for f in 0..mesh.triangles.len() {
                let [a, b, c] = mesh.face_vertices(f);
                out.points.push((a + b + c) / 3.0);
                out.faces.push(f);
            }
        }
        FaceSampling::Uniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for f in 0..mesh.triangles.len() {
                let [a, b, c] = mesh.face_vertices(f);
                for _ in 0..samples_per_face {
                    let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
                    if u + v > 1.0 {
                        u = 1.0 - u;
                        v = 1.0 - v;
                    }
                    out.points.push(a + (b - a) * u + (c - a) * v);
                    out.faces.push(f);
                }
            }
        }
    }
    Ok(out)
}

/// Barycentric coordinates of `p` with respect to triangle `abc`.
pub fn barycentric(p: &Vec3, [a, b, c]: [Vec3; 3]) -> [f64; 3] {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    [1.0 - v - w, v, w]
}

/// Merges vertices sharing an (object, voxel) cell into their centroid and
/// drops triangles that lose a corner. Fails when an object that had faces
/// is left with none.
pub fn simplify_vertex_clustering(mesh: &TriMesh, voxel: f64) -> Result<TriMesh> {
    let clusters = cluster_by_object(&mesh.vertices, &mesh.object_ids, voxel)?;
    let mut seen = HashSet::new();
    let mut triangles = Vec::new();
    for t in &mesh.triangles {
        let m = t.map(|v| clusters.assignment[v]);
        if m[0] == m[1] || m[1] == m[2] || m[0] == m[2] {
            continue;
        }
        let area = 0.5
            * (clusters.centroids[m[1]] - clusters.centroids[m[0]])
                .cross(&(clusters.centroids[m[2]] - clusters.centroids[m[0]]))
                .norm();
        if area <= 0.0 {
            continue;
        }
        let mut key = m;
        key.sort_unstable();
        if seen.insert(key) {
            triangles.push(m);
        }
    }
    let before: BTreeSet<u32> = (0..mesh.triangles.len()).map(|f| mesh.face_object(f)).collect();
    let after: BTreeSet<u32> = triangles.iter().map(|t| clusters.object_ids[t[0]]).collect();
    if let Some(&o) = before.difference(&after).next() {
        return Err(Error::ObjectCollapsed(o));
    }
    TriMesh::new(clusters.centroids, triangles, clusters.object_ids)
}
