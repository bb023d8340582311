//! Autoregressive rollouts with per-object rigid pose fitting.

use std::collections::BTreeMap;

use nalgebra::Isometry3;

use super::data::track;
use super::kabsch::kabsch_fit;
use crate::geometry::{min_inter_object_distance, PointCloudFrame};
use crate::scenes::{Scene, Sequence, Trajectory};
use crate::unet::Model;
use crate::{Error, Result, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    /// Last observed ground-truth frame; predictions start after it.
    pub start: usize,
    /// `positions[s]` is the prediction for frame `start + 1 + s`.
    pub positions: Vec<Vec<Vec3>>,
    /// Per predicted frame and object: the fitted motion from the frame
    /// `start` configuration, `None` for deformable objects.
    pub poses: Vec<Vec<Option<Isometry3<f64>>>>,
    /// Per predicted frame: smallest distance between points of different
    /// objects.
    pub min_distances: Vec<f64>,
    /// Mean per-point distance to ground truth at the last predicted frame,
    /// when ground truth reaches that far.
    pub final_error: Option<f64>,
}

impl RolloutResult {
    pub fn steps(&self) -> usize {
        self.positions.len()
    }
}

fn frame_from(buf: &[Vec<Vec3>], ids: &[u32], history: usize) -> Result<PointCloudFrame> {
    let t = buf.len() - 1;
    let n = ids.len();
    let mut vel = Vec::with_capacity(n * history);
    for i in 0..n {
        for l in 0..history {
            vel.push(buf[t - l][i] - buf[t - l - 1][i]);
        }
    }
    PointCloudFrame::new(buf[t].clone(), vel, ids.to_vec(), history, t)
}

fn members(ids: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &o) in ids.iter().enumerate() {
        m.entry(o).or_default().push(i);
    }
    m
}

/// Rolls `model` forward `steps` frames from the first `history + 1`
/// frames of `seq`.
///
/// Each rigid object (per `rigid[object]`, rigid when absent) is replaced
/// by the least-squares rigid motion of its frame-`start` points onto the
/// pointwise prediction, so its shape never drifts. Deformable objects keep
/// the pointwise prediction. Every output frame is fed back as history.
pub fn rollout_sequence(model: &Model, seq: &Sequence, rigid: &[bool], steps: usize) -> Result<RolloutResult> {
    let h = model.config.history;
    if seq.num_frames() < h + 1 {
        return Err(Error::MissingHistory {
            needed: h + 1,
            available: seq.num_frames(),
        });
    }
    let start = h;
    let ids = &seq.object_ids;
    let groups = members(ids);
    let reference = seq.positions[start].clone();
    let mut buf: Vec<Vec<Vec3>> = seq.positions[..=start].to_vec();
    let n_objects = groups.keys().next_back().map_or(0, |&o| o as usize + 1);
    let mut out = RolloutResult {
        start,
        positions: Vec::with_capacity(steps),
        poses: Vec::with_capacity(steps),
        min_distances: Vec::with_capacity(steps),
        final_error: None,
    };
    for _ in 0..steps {
        let frame = frame_from(&buf[buf.len() - h - 1..], ids, h)?;
        let pred = model.predict_next(&frame, seq.triangles.as_deref())?;
        let mut next = pred.clone();
        let mut poses = vec![None; n_objects];
        for (&o, idx) in &groups {
            if !rigid.get(o as usize).copied().unwrap_or(true) {
                continue;
            }
            let src: Vec<Vec3> = idx.iter().map(|&i| reference[i]).collect();
            let dst: Vec<Vec3> = idx.iter().map(|&i| pred[i]).collect();
            let iso = kabsch_fit(&src, &dst)?;
            for &i in idx {
                next[i] = iso.transform_point(&reference[i].into()).coords;
            }
            poses[o as usize] = Some(iso);
        }
        if next.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("rollout"));
        }
        out.min_distances.push(min_inter_object_distance(&next, ids).unwrap_or(f64::INFINITY));
        out.poses.push(poses);
        buf.push(next.clone());
        out.positions.push(next);
    }
    let last = start + steps;
    if steps > 0 && last < seq.num_frames() {
        let gt = &seq.positions[last];
        let pred = out.positions.last().expect("steps > 0");
        out.final_error = Some(pred.iter().zip(gt).map(|(a, b)| (a - b).norm()).sum::<f64>() / gt.len().max(1) as f64);
    }
    Ok(out)
}

/// Rollout over the track `model` reads from `scene`.
pub fn rollout(model: &Model, scene: &Scene, steps: usize) -> Result<RolloutResult> {
    rollout_sequence(model, track(scene, model.config.input)?, &scene.trajectory.rigid, steps)
}

/// Steps that reach the last ground-truth frame.
pub fn full_length(model: &Model, scene: &Scene) -> Result<usize> {
    let frames = track(scene, model.config.input)?.num_frames();
    Ok(frames.saturating_sub(model.config.history + 1))
}

/// Full-length rollouts of every scene, spread over worker threads that
/// share the model read-only. Results keep the scene order.
pub fn rollout_all(model: &Model, scenes: &[Scene], steps: Option<usize>) -> Result<Vec<RolloutResult>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(scenes.len().max(1));
    let chunk = scenes.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = scenes
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|sc| {
                            let n = match steps {
                                Some(n) => n,
                                None => full_length(model, sc)?,
                            };
                            rollout(model, sc, n)
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(scenes.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::invalid("rollout worker panicked"))??);
        }
        Ok(out)
    })
}

/// Copy of `scene` whose track for `model`'s input holds the observed
/// frames followed by the rollout, with rigid poses advanced by the fitted
/// motions. The other track is dropped.
pub fn export_rollout(model: &Model, scene: &Scene, result: &RolloutResult) -> Result<Scene> {
    let tr = &scene.trajectory;
    let seq = track(scene, model.config.input)?;
    let mut positions = seq.positions[..=result.start].to_vec();
    positions.extend(result.positions.iter().cloned());
    let mut poses = tr.poses[..=result.start].to_vec();
    let base = &tr.poses[result.start];
    for frame in &result.poses {
        poses.push(
            base.iter()
                .enumerate()
                .map(|(o, p)| match frame.get(o).copied().flatten() {
                    Some(iso) => iso * p,
                    None => *p,
                })
                .collect(),
        );
    }
    let new_seq = Sequence::new(positions, seq.object_ids.clone(), seq.triangles.clone())?;
    let (cloud, mesh) = match model.config.input {
        crate::unet::InputMode::PointCloud => (new_seq, None),
        crate::unet::InputMode::Mesh => (new_seq.clone(), Some(new_seq)),
    };
    Ok(Scene {
        trajectory: Trajectory {
            bodies: tr.bodies.clone(),
            physics: tr.physics,
            poses,
            cloud,
            mesh,
            rigid: tr.rigid.clone(),
        },
        ..scene.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_scene, DatasetConfig, Scenario, SurfaceOptions};
    use crate::unet::{tiny_config, InputMode, ModelConfig, PredictionMode};

    fn scene(scenario: Scenario, seed: u64, frames: usize) -> Scene {
        let cfg = DatasetConfig {
            frames,
            surface: SurfaceOptions {
                density: 400.0,
                voxel: None,
                mesh_level: Some(1),
            },
            ..Default::default()
        };
        generate_scene(scenario, seed, &cfg).unwrap()
    }

    fn pairwise(p: &[Vec3], idx: &[usize]) -> Vec<f64> {
        let mut d = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                d.push((p[i] - p[j]).norm());
            }
        }
        d
    }

    #[test]
    fn zero_network_extrapolates_in_straight_lines() {
        let sc = scene(Scenario::Collide, 1, 20);
        let m = Model::new(ModelConfig::desk(), 2).unwrap();
        let r = rollout(&m, &sc, 10).unwrap();
        let p = &sc.trajectory.cloud.positions;
        let v = |i: usize| p[2][i] - p[1][i];
        assert_eq!(r.steps(), 10);
        for (s, frame) in r.positions.iter().enumerate() {
            for (i, q) in frame.iter().enumerate() {
                assert!((q - (p[2][i] + v(i) * (s + 1) as f64)).norm() < 1e-9);
            }
        }
        assert!(r.final_error.unwrap() > 0.0);
    }

    #[test]
    fn rigid_objects_keep_their_shape() {
        let sc = scene(Scenario::Collide, 3, 45);
        let mut m = Model::new(tiny_config(InputMode::PointCloud, false).with_levels(2), 4).unwrap();
        m.config.k = 8;
        m.randomize_head(5);
        m.normalizer.output = [0.01; 3];
        let r = rollout(&m, &sc, 40).unwrap();
        let groups = members(&sc.trajectory.cloud.object_ids);
        let first = &sc.trajectory.cloud.positions[r.start];
        for idx in groups.values() {
            let d0 = pairwise(first, idx);
            for frame in &r.positions {
                let d = pairwise(frame, idx);
                let worst = d.iter().zip(&d0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(worst < 1e-6, "{worst}");
            }
        }
        // the random head does move the objects off the straight line
        let zero = Model::new(ModelConfig::desk(), 4).unwrap();
        let z = rollout(&zero, &sc, 40).unwrap();
        assert!(r.positions[39].iter().zip(&z.positions[39]).any(|(a, b)| (a - b).norm() > 1e-3));
        assert!(r.poses.iter().flatten().all(|p| p.is_some()));
    }

    #[test]
    fn deformable_objects_keep_pointwise_predictions() {
        let sc = scene(Scenario::Miss, 6, 12);
        let mut m = Model::new(
            ModelConfig {
                prediction: PredictionMode::Velocity,
                ..tiny_config(InputMode::PointCloud, false)
            },
            7,
        )
        .unwrap();
        m.randomize_head(8);
        let seq = &sc.trajectory.cloud;
        let r = rollout_sequence(&m, seq, &[false, false], 1).unwrap();
        let raw = m.predict_next(&seq.frame(2, 2).unwrap(), None).unwrap();
        assert_eq!(r.positions[0], raw);
        assert!(r.poses[0].iter().all(|p| p.is_none()));
    }

    #[test]
    fn mesh_rollout_and_export() {
        let sc = scene(Scenario::Miss, 9, 10);
        let m = Model::new(
            ModelConfig {
                input: InputMode::Mesh,
                ..tiny_config(InputMode::Mesh, true)
            },
            10,
        )
        .unwrap();
        let r = rollout(&m, &sc, 7).unwrap();
        assert_eq!(r.positions[0].len(), sc.trajectory.mesh.as_ref().unwrap().num_points());
        assert_eq!(r.min_distances.len(), 7);
        let ex = export_rollout(&m, &sc, &r).unwrap();
        assert_eq!(ex.trajectory.num_frames(), 10);
        let bytes = crate::scenes::encode_scene(&ex).unwrap();
        let back = crate::scenes::decode_scene(&bytes, std::path::Path::new("mem")).unwrap();
        assert_eq!(back.trajectory.mesh.unwrap().num_frames(), 10);
    }

    #[test]
    fn parallel_rollouts_match_serial() {
        let scenes: Vec<Scene> = (0..3).map(|s| scene(Scenario::Miss, 20 + s, 8)).collect();
        let mut m = Model::new(tiny_config(InputMode::PointCloud, false), 11).unwrap();
        m.randomize_head(12);
        let par = rollout_all(&m, &scenes, None).unwrap();
        for (sc, r) in scenes.iter().zip(&par) {
            assert_eq!(*r, rollout(&m, sc, 5).unwrap());
        }
        assert!(rollout_sequence(&m, &scenes[0].trajectory.cloud.truncated(2), &[], 1).is_err());
    }
}
