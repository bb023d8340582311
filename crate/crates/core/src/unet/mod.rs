//! The encoder/bottleneck/decoder network over a per-frame resolution
//! hierarchy.
//!
//! A full-resolution stem block is followed by one downsampling block per
//! level, bottleneck blocks at the coarsest level, and one upsampling block
//! per level whose output is merged with the encoder features stored at
//! the same resolution. The mesh variant keeps cross-object layers at full
//! resolution only.

mod config;
mod levels;
mod model;

pub use config::{InputMode, ModelConfig, PredictionMode};
pub use levels::{build_geometry, Level, RelationalGeometry, SceneGeometry, FACE_SAMPLING_SEED};
pub use model::{encode_input_features, DecoderBlock, Model, Normalizer, Prepared, UNet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradient_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor};
use crate::geometry::{PointCloudFrame, TriMesh};
use crate::scenes::icosphere;
use crate::{Result, Vec3};

/// Small network for end-to-end gradient checks.
pub fn tiny_config(input: InputMode, faces: bool) -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        head_hidden: 8,
        k: 6,
        input,
        faces,
        ..ModelConfig::desk().with_levels(1)
    }
}

/// Two touching bodies with random velocity history: surface samples of
/// two spheres for point clouds, two level-0 icospheres for meshes.
pub fn tiny_scene(input: InputMode, seed: u64) -> (PointCloudFrame, Option<Vec<[usize; 3]>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (positions, ids, tris) = match input {
        InputMode::PointCloud => {
            let mut p = Vec::new();
            let mut ids = Vec::new();
            for (o, cx) in [(0u32, -0.16), (1, 0.16)] {
                for _ in 0..25 {
                    let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    p.push(Vec3::new(cx, 0.0, 0.3) + d.normalize() * 0.15);
                    ids.push(o);
                }
            }
            (p, ids, None)
        }
        InputMode::Mesh => {
            let a = icosphere(0.15, 0);
            let mut b = icosphere(0.15, 0);
            b.vertices.iter_mut().for_each(|v| v.x += 0.33);
            b.object_ids.iter_mut().for_each(|o| *o = 1);
            let mut m = TriMesh::merge(&[a, b]);
            m.vertices.iter_mut().for_each(|v| v.z += 0.3);
            (m.vertices, m.object_ids, Some(m.triangles))
        }
    };
    let vel = (0..positions.len() * 2)
        .map(|_| Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)))
        .collect();
    let frame = PointCloudFrame::new(positions, vel, ids, 2, 2).expect("finite scene");
    (frame, tris)
}

/// Finite-difference check of the whole network on a tiny scene, with a
/// random output head so every parameter receives gradient.
pub fn unet_gradient_check(input: InputMode, faces: bool, seed: u64) -> Result<GradCheckReport> {
    let mut model = Model::new(tiny_config(input, faces), seed)?;
    model.randomize_head(seed + 1);
    let (frame, tris) = tiny_scene(input, seed);
    let prepared = model.prepare(&frame, tris.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let target = Tensor::new(
        vec![frame.len(), 3],
        (0..frame.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let mut store = model.params.clone();
    let m = &model;
    gradient_check(
        &mut store,
        |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let y = m.forward_prepared(g, s, &prepared)?;
            let t = g.constant(target.clone())?;
            g.huber_loss(y, t, 1.0)
        },
        GradCheckOptions {
            max_coords: Some(6),
            seed,
            ..Default::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn desk_scene(seed: u64) -> PointCloudFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::new();
        let mut ids = Vec::new();
        for (o, cx) in [(0u32, -0.21), (1, 0.21)] {
            for _ in 0..150 {
                let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                p.push(Vec3::new(cx, 0.1, 1.0) + d.normalize() * 0.2);
                ids.push(o);
            }
        }
        let v = (0..600)
            .map(|_| Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)))
            .collect();
        PointCloudFrame::new(p, v, ids, 2, 2).unwrap()
    }

    fn randomized(config: ModelConfig, seed: u64) -> Model {
        let mut m = Model::new(config, seed).unwrap();
        m.randomize_head(seed);
        m
    }

    #[test]
    fn output_has_one_row_per_point() {
        let m = randomized(ModelConfig::desk(), 1);
        let f = desk_scene(2);
        let out = m.predict_raw(&f, None).unwrap();
        assert_eq!(out.len(), f.len());
        assert!(out.iter().any(|v| v.norm() > 0.0));
    }

    #[test]
    fn full_size_network_runs() {
        let m = randomized(ModelConfig::default(), 3);
        let f = desk_scene(4);
        assert_eq!(m.predict_raw(&f, None).unwrap().len(), f.len());
        assert_eq!(m.net.block_count(), 9);
        assert_eq!(m.net.encoder.len(), 3);
    }

    #[test]
    fn zero_head_extrapolates() {
        let f = desk_scene(5);
        let acc = Model::new(ModelConfig::desk(), 6).unwrap();
        let next = acc.predict_next(&f, None).unwrap();
        for (i, p) in next.iter().enumerate() {
            assert_eq!(*p, f.positions[i] + f.velocity(i, 0));
        }
        let vel = Model::new(
            ModelConfig {
                prediction: PredictionMode::Velocity,
                ..ModelConfig::desk()
            },
            6,
        )
        .unwrap();
        assert_eq!(vel.predict_next(&f, None).unwrap(), f.positions);
    }

    #[test]
    fn builds_are_deterministic() {
        let a = randomized(ModelConfig::desk(), 7);
        let b = randomized(ModelConfig::desk(), 7);
        assert_eq!(a.num_parameters(), b.num_parameters());
        assert_eq!(a.params, b.params);
        let f = desk_scene(8);
        let (ya, yb) = (a.predict_raw(&f, None).unwrap(), b.predict_raw(&f, None).unwrap());
        assert!(ya.iter().zip(&yb).all(|(u, v)| u.iter().zip(v.iter()).all(|(x, y)| x.to_bits() == y.to_bits())));
        let c = randomized(ModelConfig::desk(), 9);
        assert_ne!(a.params, c.params);
    }

    fn shifted(f: &PointCloudFrame, t: Vec3) -> PointCloudFrame {
        PointCloudFrame::new(
            f.positions.iter().map(|p| p + t).collect(),
            f.velocities.clone(),
            f.object_ids.clone(),
            f.history,
            f.frame_index,
        )
        .unwrap()
    }

    fn max_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter().zip(b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn lattice_translation_invariance() {
        // 0.675 is a whole number of voxels at every level
        let m = randomized(ModelConfig::desk(), 10);
        let f = desk_scene(11);
        let base = m.predict_raw(&f, None).unwrap();
        let xy = m.predict_raw(&shifted(&f, Vec3::new(0.675 * 3.0, -0.675 * 2.0, 0.0)), None).unwrap();
        assert!(max_diff(&base, &xy) < 1e-9, "{}", max_diff(&base, &xy));
        let z_shift = shifted(&f, Vec3::new(0.675, 0.675, 0.675 * 2.0));
        assert!(max_diff(&base, &m.predict_raw(&z_shift, None).unwrap()) > 1e-6);
        let blind = randomized(
            ModelConfig {
                z_feature: false,
                ..ModelConfig::desk()
            },
            10,
        );
        let b0 = blind.predict_raw(&f, None).unwrap();
        assert!(max_diff(&b0, &blind.predict_raw(&z_shift, None).unwrap()) < 1e-9);
    }

    #[test]
    fn input_features() {
        let f = PointCloudFrame::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 3.0)],
            vec![Vec3::zeros(), Vec3::zeros(), Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.4, 0.5, 0.6)],
            vec![0, 1],
            2,
            5,
        )
        .unwrap();
        let raw = encode_input_features(&f, 2).unwrap();
        assert_eq!(raw.shape(), &[2, 7]);
        assert!(raw.row(0).iter().all(|v| *v == 0.0));
        assert_eq!(raw.row(1), &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 3.0]);
        assert!(matches!(
            encode_input_features(&f, 3),
            Err(Error::MissingHistory { needed: 4, available: 3 })
        ));
    }

    #[test]
    fn mesh_model_runs_and_stays_local_below_full_resolution() {
        for faces in [true, false] {
            let cfg = ModelConfig {
                input: InputMode::Mesh,
                faces,
                ..ModelConfig::desk()
            };
            let m = randomized(cfg, 12);
            let (f, tris) = tiny_scene(InputMode::Mesh, 13);
            let p = m.prepare(&f, tris.as_deref()).unwrap();
            assert_eq!(p.geometry.cross_object_levels, vec![0]);
            assert!(m.net.encoder.iter().all(|b| b.relational.is_none()));
            assert_eq!(m.predict_raw(&f, tris.as_deref()).unwrap().len(), f.len());
        }
    }

    #[test]
    fn end_to_end_gradients() {
        for (input, faces) in [
            (InputMode::PointCloud, false),
            (InputMode::Mesh, true),
            (InputMode::Mesh, false),
        ] {
            let rep = unet_gradient_check(input, faces, 21).unwrap();
            assert!(rep.passed(1e-4), "{input} faces={faces}: {rep:?}");
            assert!(rep.checked > 100);
        }
    }
}
