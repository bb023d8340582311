//! Scene files: `PFD1` magic, a little-endian `u32` manifest length, a TOML
//! manifest, then the binary payload.
//!
//! Payload, per frame: positions as `f32 [n x 3]` followed by object ids as
//! `u32 [n]`. When a mesh track is present it follows: per frame vertex
//! positions `f32 [m x 3]`, then vertex object ids `u32 [m]` and triangle
//! indices `u32 [t x 3]` once.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::body::{RigidBody, Shape};
use super::dataset::{Scenario, Scene};
use super::physics::PhysicsConfig;
use super::trajectory::{Sequence, Trajectory};
use crate::{Error, Result, Vec3};

pub const MAGIC: &[u8; 4] = b"PFD1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub shape: Shape,
    pub mass: f64,
    pub restitution: f64,
    pub rigid: bool,
    pub initial_position: [f64; 3],
    pub initial_velocity: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub dt: f64,
    pub gravity: [f64; 3],
    pub contact_label: bool,
    pub contact_threshold: f64,
    pub frames: usize,
    pub points: usize,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub objects: Vec<ObjectEntry>,
    /// Per frame and object: translation then rotation quaternion
    /// `(tx, ty, tz, qw, qx, qy, qz)`.
    pub poses: Vec<Vec<[f64; 7]>>,
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn push_points(out: &mut Vec<u8>, pts: &[Vec3]) {
    for p in pts {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
}

fn push_u32s(out: &mut Vec<u8>, vals: impl Iterator<Item = u32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn pose_row(p: &Isometry3<f64>) -> [f64; 7] {
    let t = p.translation.vector;
    let q = p.rotation.quaternion();
    [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
}

/// Serializes a scene to bytes.
pub fn encode_scene(scene: &Scene) -> Result<Vec<u8>> {
    let tr = &scene.trajectory;
    let mesh = tr.mesh.as_ref();
    let manifest = Manifest {
        version: 1,
        scenario: scene.scenario,
        seed: scene.seed,
        dt: tr.physics.dt,
        gravity: tr.physics.gravity,
        contact_label: scene.contact,
        contact_threshold: scene.contact_threshold,
        frames: tr.num_frames(),
        points: tr.cloud.num_points(),
        mesh_vertices: mesh.map_or(0, |m| m.num_points()),
        mesh_triangles: mesh.and_then(|m| m.triangles.as_ref()).map_or(0, |t| t.len()),
        objects: tr
            .bodies
            .iter()
            .zip(&tr.rigid)
            .map(|(b, &rigid)| ObjectEntry {
                shape: b.shape,
                mass: b.mass,
                restitution: b.restitution,
                rigid,
                initial_position: b.position.into(),
                initial_velocity: b.velocity.into(),
            })
            .collect(),
        poses: tr.poses.iter().map(|f| f.iter().map(pose_row).collect()).collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::invalid(format!("manifest: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for f in &tr.cloud.positions {
        push_points(&mut out, f);
        push_u32s(&mut out, tr.cloud.object_ids.iter().copied());
    }
    if let Some(m) = mesh {
        for f in &m.positions {
            push_points(&mut out, f);
        }
        push_u32s(&mut out, m.object_ids.iter().copied());
        let tris = m.triangles.as_deref().unwrap_or(&[]);
        push_u32s(&mut out, tris.iter().flatten().map(|&v| v as u32));
    }
    Ok(out)
}

/// Writes a scene atomically through a temporary file in the same folder.
pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    let bytes = encode_scene(scene)?;
    let tmp = path.with_extension("pfd.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| fmt_err(self.path, "truncated payload"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn points(&mut self, n: usize) -> Result<Vec<Vec3>> {
        let raw = self.take(n * 12)?;
        Ok(raw
            .chunks_exact(12)
            .map(|c| {
                let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
                Vec3::new(f(0), f(1), f(2))
            })
            .collect())
    }
}

/// Parses a scene from bytes; `path` is only used in error messages.
pub fn decode_scene(bytes: &[u8], path: &Path) -> Result<Scene> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(4)? != MAGIC {
        return Err(fmt_err(path, "bad magic"));
    }
    let len = r.u32s(1)?[0] as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| fmt_err(path, "manifest is not UTF-8"))?;
    let m: Manifest = toml::from_str(text).map_err(|e| fmt_err(path, format!("manifest: {e}")))?;
    if m.version != 1 {
        return Err(fmt_err(path, format!("unsupported version {}", m.version)));
    }
    if m.poses.len() != m.frames || m.poses.iter().any(|p| p.len() != m.objects.len()) {
        return Err(fmt_err(path, "pose table does not match frame and object counts"));
    }
    let mut positions = Vec::with_capacity(m.frames);
    let mut ids = Vec::new();
    for f in 0..m.frames {
        positions.push(r.points(m.points)?);
        let frame_ids = r.u32s(m.points)?;
        if f == 0 {
            ids = frame_ids;
        } else if frame_ids != ids {
            return Err(fmt_err(path, format!("object ids change at frame {f}")));
        }
    }
    let cloud = Sequence::new(positions, ids, None).map_err(|e| fmt_err(path, e.to_string()))?;
    let mesh = if m.mesh_vertices > 0 {
        let mut verts = Vec::with_capacity(m.frames);
        for _ in 0..m.frames {
            verts.push(r.points(m.mesh_vertices)?);
        }
        let vids = r.u32s(m.mesh_vertices)?;
        let flat = r.u32s(m.mesh_triangles * 3)?;
        let tris = flat.chunks_exact(3).map(|c| [c[0] as usize, c[1] as usize, c[2] as usize]).collect();
        Some(Sequence::new(verts, vids, Some(tris)).map_err(|e| fmt_err(path, e.to_string()))?)
    } else {
        None
    };
    if r.at != bytes.len() {
        return Err(fmt_err(path, "trailing bytes after payload"));
    }
    let bodies = m
        .objects
        .iter()
        .map(|o| RigidBody {
            shape: o.shape,
            position: Vec3::from(o.initial_position),
            velocity: Vec3::from(o.initial_velocity),
            mass: o.mass,
            restitution: o.restitution,
        })
        .collect();
    let poses = m
        .poses
        .iter()
        .map(|f| {
            f.iter()
                .map(|p| {
                    Isometry3::from_parts(
                        Translation3::new(p[0], p[1], p[2]),
                        UnitQuaternion::from_quaternion(Quaternion::new(p[3], p[4], p[5], p[6])),
                    )
                })
                .collect()
        })
        .collect();
    Ok(Scene {
        scenario: m.scenario,
        seed: m.seed,
        contact: m.contact_label,
        contact_threshold: m.contact_threshold,
        trajectory: Trajectory {
            bodies,
            physics: PhysicsConfig {
                dt: m.dt,
                gravity: m.gravity,
                ..Default::default()
            },
            poses,
            cloud,
            mesh,
            rigid: m.objects.iter().map(|o| o.rigid).collect(),
        },
    })
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let bytes = fs::read(path)?;
    decode_scene(&bytes, path)
}

/// Scene files (`*.pfd`) in a folder, sorted by name.
pub fn list_scenes(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pfd"))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::dataset::{generate_scene, make_dataset, DatasetConfig};

    fn cfg() -> DatasetConfig {
        DatasetConfig {
            frames: 40,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip() {
        let scene = generate_scene(Scenario::Collide, 5, &cfg()).unwrap();
        let bytes = encode_scene(&scene).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let back = decode_scene(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.contact, scene.contact);
        assert_eq!(back.trajectory.cloud.object_ids, scene.trajectory.cloud.object_ids);
        assert_eq!(back.trajectory.bodies, scene.trajectory.bodies);
        assert_eq!(back.trajectory.poses, scene.trajectory.poses);
        for (a, b) in back
            .trajectory
            .cloud
            .positions
            .iter()
            .flatten()
            .zip(scene.trajectory.cloud.positions.iter().flatten())
        {
            assert!((a - b).norm() < 1e-5);
        }
        let (ma, mb) = (back.trajectory.mesh.as_ref().unwrap(), scene.trajectory.mesh.as_ref().unwrap());
        assert_eq!(ma.triangles, mb.triangles);
        assert_eq!(encode_scene(&back).unwrap().len(), bytes.len());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let scene = generate_scene(Scenario::Freefall, 1, &cfg()).unwrap();
        let bytes = encode_scene(&scene).unwrap();
        let p = Path::new("x.pfd");
        assert!(matches!(decode_scene(&bytes[..bytes.len() - 3], p), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(decode_scene(&bad, p).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_scene(&extra, p).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (_, a) = make_dataset(Scenario::Miss, 2, 9, &cfg(), Some(&dir.path().join("a"))).unwrap();
        let (_, b) = make_dataset(Scenario::Miss, 2, 9, &cfg(), Some(&dir.path().join("b"))).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        assert_eq!(list_scenes(&dir.path().join("a")).unwrap(), a);
    }
}
