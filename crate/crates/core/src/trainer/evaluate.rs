//! Trajectory error and contact-prediction accuracy.

use serde::{Deserialize, Serialize};

use super::data::track;
use super::rollout::RolloutResult;
use crate::scenes::{Scenario, Scene};
use crate::unet::InputMode;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub seed: u64,
    pub scenario: Scenario,
    pub steps: usize,
    pub final_error: Option<f64>,
    /// Over the observed frames and the rollout.
    pub predicted_min_distance: f64,
    /// Over every ground-truth frame.
    pub true_min_distance: f64,
    pub predicted_contact: bool,
    pub true_contact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub contact_threshold: f64,
    pub scenes: usize,
    /// Mean of the per-scene final errors that exist.
    pub mean_final_error: Option<f64>,
    pub contact_accuracy: f64,
    pub rows: Vec<SceneMetrics>,
}

impl MetricsReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("report: {e}")))
    }
}

fn min_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::INFINITY, f64::min)
}

/// Scores rollouts against their scenes. A scene counts as a predicted
/// contact when its observed frames or rollout bring two objects closer
/// than `contact_threshold`.
pub fn evaluate(
    rollouts: &[RolloutResult],
    scenes: &[Scene],
    input: InputMode,
    contact_threshold: f64,
) -> Result<MetricsReport> {
    if rollouts.len() != scenes.len() {
        return Err(Error::invalid(format!("{} rollouts for {} scenes", rollouts.len(), scenes.len())));
    }
    if scenes.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    if !(contact_threshold >= 0.0) {
        return Err(Error::invalid("contact threshold must be non-negative"));
    }
    let mut rows = Vec::with_capacity(scenes.len());
    for (r, sc) in rollouts.iter().zip(scenes) {
        let seq = track(sc, input)?;
        if r.start >= seq.num_frames() || r.positions.iter().any(|f| f.len() != seq.num_points()) {
            return Err(Error::invalid(format!("rollout does not belong to scene {}", sc.seed)));
        }
        let gt = seq.min_distances();
        let predicted = min_of(gt[..=r.start].iter().copied().chain(r.min_distances.iter().copied()));
        let truth = min_of(gt.iter().copied());
        rows.push(SceneMetrics {
            seed: sc.seed,
            scenario: sc.scenario,
            steps: r.steps(),
            final_error: r.final_error,
            predicted_min_distance: predicted,
            true_min_distance: truth,
            predicted_contact: predicted < contact_threshold,
            true_contact: truth < contact_threshold,
        });
    }
    let errs: Vec<f64> = rows.iter().filter_map(|r| r.final_error).collect();
    let correct = rows.iter().filter(|r| r.predicted_contact == r.true_contact).count();
    Ok(MetricsReport {
        contact_threshold,
        scenes: rows.len(),
        mean_final_error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
        contact_accuracy: correct as f64 / rows.len() as f64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::min_inter_object_distance;
    use crate::scenes::{generate_scene, DatasetConfig, SurfaceOptions};
    use crate::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(scenario: Scenario, seed: u64) -> Scene {
        let cfg = DatasetConfig {
            frames: 40,
            surface: SurfaceOptions {
                density: 300.0,
                voxel: None,
                mesh_level: None,
            },
            ..Default::default()
        };
        generate_scene(scenario, seed, &cfg).unwrap()
    }

    fn perfect(sc: &Scene) -> RolloutResult {
        let seq = &sc.trajectory.cloud;
        let start = 2;
        let positions = seq.positions[start + 1..].to_vec();
        RolloutResult {
            start,
            min_distances: seq.min_distances()[start + 1..].to_vec(),
            poses: vec![vec![None; 2]; positions.len()],
            positions,
            final_error: Some(0.0),
        }
    }

    fn constant_contact(sc: &Scene, d: f64) -> RolloutResult {
        RolloutResult {
            min_distances: vec![d],
            ..perfect(sc)
        }
    }

    fn balanced() -> Vec<Scene> {
        (0..3)
            .flat_map(|s| [small(Scenario::Collide, s), small(Scenario::Miss, s)])
            .collect()
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let scenes = balanced();
        let rolls: Vec<RolloutResult> = scenes.iter().map(perfect).collect();
        let rep = evaluate(&rolls, &scenes, InputMode::PointCloud, 0.1).unwrap();
        assert_eq!(rep.contact_accuracy, 1.0);
        assert_eq!(rep.mean_final_error, Some(0.0));
        for (row, sc) in rep.rows.iter().zip(&scenes) {
            assert_eq!(row.true_contact, sc.contact);
        }
        assert!(rep.to_toml().unwrap().contains("contact_accuracy = 1.0"));
    }

    #[test]
    fn always_contact_scores_half() {
        let scenes = balanced();
        let rolls: Vec<RolloutResult> = scenes.iter().map(|s| constant_contact(s, 0.0)).collect();
        let rep = evaluate(&rolls, &scenes, InputMode::PointCloud, 0.1).unwrap();
        assert_eq!(rep.contact_accuracy, 0.5);
    }

    #[test]
    fn mismatched_sets_are_rejected() {
        let scenes = balanced();
        let rolls: Vec<RolloutResult> = scenes.iter().map(perfect).collect();
        assert!(evaluate(&rolls[1..], &scenes, InputMode::PointCloud, 0.1).is_err());
        let mut bad = rolls.clone();
        bad[0].positions[0].pop();
        assert!(evaluate(&bad, &scenes, InputMode::PointCloud, 0.1).is_err());
        assert!(evaluate(&[], &[], InputMode::PointCloud, 0.1).is_err());
    }

    fn brute_min(p: &[Vec3], ids: &[u32]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                if ids[i] != ids[j] {
                    let d = (p[i] - p[j]).norm();
                    best = Some(best.map_or(d, |b| b.min(d)));
                }
            }
        }
        best
    }

    #[test]
    fn min_distance_matches_all_pairs_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let n = rng.gen_range(1..120);
            let objects = rng.gen_range(1..5u32);
            let p: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(0..objects)).collect();
            assert_eq!(min_inter_object_distance(&p, &ids), brute_min(&p, &ids));
        }
    }
}
