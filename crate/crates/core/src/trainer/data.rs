//! Training samples: which track a model reads, targets and normalization.

use crate::autodiff::Tensor;
use crate::scenes::{Scene, Sequence};
use crate::unet::{encode_input_features, InputMode, ModelConfig, Normalizer, PredictionMode};
use crate::{Error, Result, Vec3};

/// The track a model with `input` reads from a scene.
pub fn track(scene: &Scene, input: InputMode) -> Result<&Sequence> {
    match input {
        InputMode::PointCloud => Ok(&scene.trajectory.cloud),
        InputMode::Mesh => scene
            .trajectory
            .mesh
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("scene {} has no mesh track", scene.seed))),
    }
}

/// Frames `t` usable as inputs: enough history behind, one frame ahead.
pub fn frame_range(seq: &Sequence, history: usize) -> std::ops::Range<usize> {
    history..seq.num_frames().saturating_sub(1)
}

/// Raw per-point target in scene units: the next displacement, or its
/// change from the current one.
pub fn raw_target(seq: &Sequence, t: usize, mode: PredictionMode) -> Result<Vec<Vec3>> {
    if t == 0 || t + 1 >= seq.num_frames() {
        return Err(Error::invalid(format!("no target for frame {t} of {}", seq.num_frames())));
    }
    let (prev, cur, next) = (&seq.positions[t - 1], &seq.positions[t], &seq.positions[t + 1]);
    Ok((0..seq.num_points())
        .map(|i| {
            let v_next = next[i] - cur[i];
            match mode {
                PredictionMode::Velocity => v_next,
                PredictionMode::Acceleration => v_next - (cur[i] - prev[i]),
            }
        })
        .collect())
}

/// Target divided by the per-axis output scales, shape `[n, 3]`.
pub fn normalized_target(raw: &[Vec3], normalizer: &Normalizer) -> Result<Tensor<f64>> {
    let s = normalizer.output;
    Tensor::new(
        vec![raw.len(), 3],
        raw.iter().flat_map(|v| [v.x / s[0], v.y / s[1], v.z / s[2]]).collect(),
    )
}

fn rms(sum_sq: f64, count: usize) -> f64 {
    (sum_sq / count.max(1) as f64).sqrt()
}

/// Root-mean-square scales over every usable frame of `seqs`.
///
/// Velocity columns share one scale per axis across lags. Columns with
/// almost no signal are floored at a tenth of the largest scale of their
/// group so that constant inputs do not blow up.
pub fn fit_normalizer(config: &ModelConfig, seqs: &[&Sequence]) -> Result<Normalizer> {
    let h = config.history;
    let w = config.raw_width();
    let mut vel = [0.0; 3];
    let mut vel_n = 0;
    let mut z = 0.0;
    let mut out = [0.0; 3];
    let mut out_n = 0;
    for seq in seqs {
        for t in frame_range(seq, h) {
            let frame = seq.frame(t, h)?;
            let raw = encode_input_features(&frame, h)?;
            for r in 0..raw.rows() {
                let row = raw.row(r);
                for lag in 0..h {
                    for a in 0..3 {
                        vel[a] += row[3 * lag + a].powi(2);
                    }
                }
                vel_n += h;
                z += row[w - 1].powi(2);
            }
            for v in raw_target(seq, t, config.prediction)? {
                for a in 0..3 {
                    out[a] += v[a].powi(2);
                }
                out_n += 1;
            }
        }
    }
    if out_n == 0 {
        return Err(Error::invalid("no frames with enough history to fit a normalizer"));
    }
    let floored = |s: [f64; 3], n: usize| -> [f64; 3] {
        let s = s.map(|x| rms(x, n));
        let top = s.iter().copied().fold(0.0, f64::max);
        let floor = if top > 0.0 { 0.1 * top } else { 1.0 };
        s.map(|x| x.max(floor))
    };
    let vel = floored(vel, vel_n);
    let out = floored(out, out_n);
    let z = rms(z, out_n);
    let mut input = Vec::with_capacity(w);
    for _ in 0..h {
        input.extend_from_slice(&vel);
    }
    input.push(if z > 0.0 { z } else { 1.0 });
    let n = Normalizer { input, output: out };
    n.validate(w)?;
    Ok(n)
}
