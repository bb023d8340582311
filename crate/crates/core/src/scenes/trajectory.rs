use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::body::{body_to_mesh, sample_surface, samples_for_density, RigidBody};
use super::physics::{simulate_states, PhysicsConfig};
use crate::geometry::{grid_downsample, min_inter_object_distance, PointCloudFrame, TriMesh};
use crate::{Error, Result, Vec3};

/// Positions of a fixed set of points over time, optionally with mesh
/// connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    /// `positions[frame][point]`
    pub positions: Vec<Vec<Vec3>>,
    pub object_ids: Vec<u32>,
    pub triangles: Option<Vec<[usize; 3]>>,
}

impl Sequence {
    pub fn new(positions: Vec<Vec<Vec3>>, object_ids: Vec<u32>, triangles: Option<Vec<[usize; 3]>>) -> Result<Self> {
        let n = object_ids.len();
        if positions.iter().any(|f| f.len() != n) {
            return Err(Error::invalid("every frame must have one position per object id"));
        }
        if let Some(t) = &triangles {
            if t.iter().flatten().any(|&v| v >= n) {
                return Err(Error::invalid("triangle index out of range"));
            }
        }
        Ok(Self {
            positions,
            object_ids,
            triangles,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.positions.len()
    }

    pub fn num_points(&self) -> usize {
        self.object_ids.len()
    }

    pub fn num_objects(&self) -> usize {
        self.object_ids.iter().map(|&o| o as usize + 1).max().unwrap_or(0)
    }

    /// Frame `t` with `history` per-frame displacements, newest first:
    /// `v(t - l) = p(t - l) - p(t - l - 1)`.
    pub fn frame(&self, t: usize, history: usize) -> Result<PointCloudFrame> {
        if t >= self.num_frames() {
            return Err(Error::invalid(format!("frame {t} of {}", self.num_frames())));
        }
        if t < history {
            return Err(Error::MissingHistory {
                needed: history + 1,
                available: t + 1,
            });
        }
        let n = self.num_points();
        let mut vel = Vec::with_capacity(n * history);
        for i in 0..n {
            for l in 0..history {
                vel.push(self.positions[t - l][i] - self.positions[t - l - 1][i]);
            }
        }
        PointCloudFrame::new(self.positions[t].clone(), vel, self.object_ids.clone(), history, t)
    }

    /// Mesh at frame `t`, if connectivity is present.
    pub fn mesh(&self, t: usize) -> Option<Result<TriMesh>> {
        let tris = self.triangles.as_ref()?;
        Some(TriMesh::new(self.positions[t].clone(), tris.clone(), self.object_ids.clone()))
    }

    /// Minimum distance between points of different objects at each frame.
    pub fn min_distances(&self) -> Vec<f64> {
        self.positions
            .iter()
            .map(|p| min_inter_object_distance(p, &self.object_ids).unwrap_or(f64::INFINITY))
            .collect()
    }

    /// First `frames` frames.
    pub fn truncated(&self, frames: usize) -> Self {
        Self {
            positions: self.positions[..frames.min(self.num_frames())].to_vec(),
            object_ids: self.object_ids.clone(),
            triangles: self.triangles.clone(),
        }
    }
}

/// How body surfaces become points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceOptions {
    /// Raw samples per unit area before voxel thinning.
    pub density: f64,
    /// Keeps one sample per voxel of this size in the body frame.
    pub voxel: Option<f64>,
    /// Icosphere subdivision of mesh tracks; `None` skips meshes.
    pub mesh_level: Option<usize>,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            density: 1600.0,
            voxel: Some(0.05),
            mesh_level: Some(1),
        }
    }
}

/// Simulated scene: physics states, poses and surface tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub bodies: Vec<RigidBody>,
    pub physics: PhysicsConfig,
    /// `poses[frame][object]`
    pub poses: Vec<Vec<Isometry3<f64>>>,
    pub cloud: Sequence,
    pub mesh: Option<Sequence>,
    pub rigid: Vec<bool>,
}

impl Trajectory {
    pub fn num_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn dt(&self) -> f64 {
        self.physics.dt
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.physics.gravity)
    }

    /// Whether any two objects come within `threshold` at any frame.
    pub fn contact_label(&self, threshold: f64) -> bool {
        self.cloud.min_distances().iter().any(|&d| d < threshold)
    }
}

fn pose(p: &Vec3) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(*p), UnitQuaternion::identity())
}

fn track(local: &[Vec<Vec3>], states: &[Vec<RigidBody>], triangles: Option<Vec<[usize; 3]>>) -> Result<Sequence> {
    let object_ids: Vec<u32> = local
        .iter()
        .enumerate()
        .flat_map(|(o, pts)| std::iter::repeat(o as u32).take(pts.len()))
        .collect();
    let positions = states
        .iter()
        .map(|frame| {
            local
                .iter()
                .zip(frame)
                .flat_map(|(pts, b)| pts.iter().map(move |p| p + b.position))
                .collect()
        })
        .collect();
    Sequence::new(positions, object_ids, triangles)
}

/// Simulates `steps` steps and attaches surface point and mesh tracks.
/// Surface samples of body `i` use seed `seed + i`.
pub fn simulate(
    bodies: &[RigidBody],
    physics: PhysicsConfig,
    steps: usize,
    seed: u64,
    surface: SurfaceOptions,
) -> Result<Trajectory> {
    let states = simulate_states(bodies, physics, steps)?;
    let mut local = Vec::with_capacity(bodies.len());
    for (i, b) in bodies.iter().enumerate() {
        let raw = sample_surface(&b.shape, samples_for_density(&b.shape, surface.density)?, seed + i as u64)?;
        let kept = match surface.voxel {
            Some(v) => grid_downsample(&raw, v)?.into_iter().map(|k| raw[k]).collect(),
            None => raw,
        };
        local.push(kept);
    }
    let cloud = track(&local, &states, None)?;
    let mesh = match surface.mesh_level {
        Some(level) => {
            let meshes: Vec<TriMesh> = bodies.iter().map(|b| body_to_mesh(&b.shape, level)).collect();
            let verts: Vec<Vec<Vec3>> = meshes.iter().map(|m| m.vertices.clone()).collect();
            let mut tris = Vec::new();
            let mut base = 0;
            for m in &meshes {
                tris.extend(m.triangles.iter().map(|t| t.map(|v| v + base)));
                base += m.vertices.len();
            }
            Some(track(&verts, &states, Some(tris))?)
        }
        None => None,
    };
    Ok(Trajectory {
        bodies: bodies.to_vec(),
        physics,
        poses: states.iter().map(|f| f.iter().map(|b| pose(&b.position)).collect()).collect(),
        cloud,
        mesh,
        rigid: vec![true; bodies.len()],
    })
}
