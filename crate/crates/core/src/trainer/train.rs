//! Mini-batch training with Adam and best-by-validation selection.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::data::{fit_normalizer, frame_range, normalized_target, raw_target, track};
use super::loss::{training_loss, HUBER_DELTA};
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::scenes::{Scene, Sequence};
use crate::unet::{Model, Normalizer, Prepared};
use crate::{Error, Result};

/// File name of the best checkpoint inside the checkpoint folder.
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Times every training video is drawn per epoch, each time at a
    /// random frame.
    pub samples_per_video: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    /// Epochs between validation passes. The last epoch is always validated.
    pub validate_every: usize,
    /// Frames per validation video, evenly spaced.
    pub validation_frames: usize,
    /// Fits per-column input and per-axis target scales on the training
    /// set. When off, raw scene units are used.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 100,
            samples_per_video: 8,
            batch_size: 4,
            seed: 0,
            checkpoint_dir: None,
            max_steps: None,
            validate_every: 1,
            validation_frames: 4,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.samples_per_video == 0 || self.batch_size == 0 {
            return Err(Error::invalid("samples per video and batch size must be positive"));
        }
        if self.validate_every == 0 || self.validation_frames == 0 {
            return Err(Error::invalid("validation cadence and frame count must be positive"));
        }
        Ok(())
    }
}

/// What happened during [`train`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub epochs: usize,
    /// Mini-batch loss of every step.
    pub train_losses: Vec<f64>,
    /// `(step, loss)` after every validation pass, starting at step 0.
    pub validation: Vec<(u64, f64)>,
    pub best_validation: f64,
    pub best_step: u64,
    /// Set when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

impl TrainReport {
    pub fn initial_validation(&self) -> f64 {
        self.validation.first().map_or(f64::NAN, |v| v.1)
    }
}

/// A prepared input frame with its normalized target.
#[derive(Clone, Debug)]
pub struct Sample {
    pub prepared: Prepared,
    pub target: Tensor<f64>,
}

pub fn make_sample(model: &Model, seq: &Sequence, t: usize) -> Result<Sample> {
    let frame = seq.frame(t, model.config.history)?;
    let prepared = model.prepare(&frame, seq.triangles.as_deref())?;
    let raw = raw_target(seq, t, model.config.prediction)?;
    Ok(Sample {
        prepared,
        target: normalized_target(&raw, &model.normalizer)?,
    })
}

/// Per-point Huber loss of `model` over `samples`, as in training.
pub fn evaluation_loss(model: &Model, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let mut sum = 0.0;
    let mut points = 0;
    for s in samples {
        let mut g = Graph::new();
        let y = model.forward_prepared(&mut g, &model.params, &s.prepared)?;
        let t = g.constant(s.target.clone())?;
        let l = g.huber_sum(y, t, HUBER_DELTA)?;
        sum += g.value(l).item();
        points += s.target.rows();
    }
    Ok(sum / points as f64)
}

/// Evenly spaced frames of every sequence.
pub fn validation_frames(seqs: &[&Sequence], history: usize, per_video: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (v, seq) in seqs.iter().enumerate() {
        let r = frame_range(seq, history);
        if r.is_empty() {
            continue;
        }
        let n = per_video.min(r.len());
        let mut picks: Vec<usize> = (0..n).map(|k| r.start + k * r.len() / n).collect();
        picks.dedup();
        out.extend(picks.into_iter().map(|t| (v, t)));
    }
    out
}

struct SampleCache<'a> {
    seqs: Vec<&'a Sequence>,
    map: HashMap<(usize, usize), Sample>,
}

impl<'a> SampleCache<'a> {
    fn new(seqs: Vec<&'a Sequence>) -> Self {
        Self {
            seqs,
            map: HashMap::new(),
        }
    }

    fn ensure(&mut self, model: &Model, key: (usize, usize)) -> Result<()> {
        if !self.map.contains_key(&key) {
            let s = make_sample(model, self.seqs[key.0], key.1)?;
            self.map.insert(key, s);
        }
        Ok(())
    }

    fn loss(&mut self, model: &Model, keys: &[(usize, usize)]) -> Result<f64> {
        for &k in keys {
            self.ensure(model, k)?;
        }
        let samples: Vec<&Sample> = keys.iter().map(|k| &self.map[k]).collect();
        evaluation_loss(model, &samples)
    }
}

/// One optimizer step on cached samples; returns the mini-batch loss.
fn step(model: &mut Model, adam: &mut Adam, cache: &SampleCache<'_>, keys: &[(usize, usize)]) -> Result<f64> {
    let mut g = Graph::new();
    let mut preds = Vec::with_capacity(keys.len());
    let mut targets = Vec::with_capacity(keys.len());
    for k in keys {
        let s = &cache.map[k];
        preds.push(model.forward_prepared(&mut g, &model.params, &s.prepared)?);
        targets.push(g.constant(s.target.clone())?);
    }
    let loss = training_loss(&mut g, &preds, &targets)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = g.backward(loss)?;
    let mut buf = model.params.zero_grads();
    grads.accumulate(&mut buf);
    adam.step(&mut model.params, &buf)?;
    Ok(value)
}

fn tracks<'a>(scenes: &'a [Scene], model: &Model) -> Result<Vec<&'a Sequence>> {
    scenes.iter().map(|s| track(s, model.config.input)).collect()
}

/// Trains `model` in place and leaves it at the parameters with the lowest
/// validation loss. Validation falls back to the training scenes when
/// `validation` is empty.
///
/// A non-finite loss or gradient stops training; the best parameters seen
/// so far are restored and the reason is recorded in the report.
pub fn train(model: &mut Model, train_set: &[Scene], validation: &[Scene], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let h = model.config.history;
    let train_seqs = tracks(train_set, model)?;
    let usable: Vec<usize> = (0..train_seqs.len()).filter(|&v| !frame_range(train_seqs[v], h).is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::invalid("no training scene has enough frames"));
    }
    model.normalizer = if config.normalize {
        fit_normalizer(&model.config, &train_seqs)?
    } else {
        Normalizer::identity(model.config.raw_width())
    };
    let val_seqs = if validation.is_empty() { train_seqs.clone() } else { tracks(validation, model)? };
    let val_keys = validation_frames(&val_seqs, h, config.validation_frames);
    if val_keys.is_empty() {
        return Err(Error::invalid("no validation frames"));
    }
    let mut train_cache = SampleCache::new(train_seqs);
    let mut val_cache = SampleCache::new(val_seqs);

    let best_path = config.checkpoint_dir.as_ref().map(|d| d.join(BEST_CHECKPOINT));
    let mut report = TrainReport::default();
    let initial = val_cache.loss(model, &val_keys)?;
    if !initial.is_finite() {
        return Err(Error::NonFinite("initial validation loss"));
    }
    report.validation.push((0, initial));
    report.best_validation = initial;
    let mut best_params = model.params.clone();
    if let Some(p) = &best_path {
        save_checkpoint(p, model, 0, Some(initial))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &model.params,
    );
    let budget = config.max_steps.unwrap_or(u64::MAX);
    'epochs: for epoch in 0..config.epochs {
        if report.steps >= budget {
            break;
        }
        let mut order: Vec<usize> = usable
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(config.samples_per_video))
            .collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if report.steps >= budget {
                break;
            }
            let keys: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&v| (v, rng.gen_range(frame_range(train_cache.seqs[v], h))))
                .collect();
            for &k in &keys {
                train_cache.ensure(model, k)?;
            }
            match step(model, &mut adam, &train_cache, &keys) {
                Ok(value) => {
                    report.steps += 1;
                    report.train_losses.push(value);
                }
                Err(Error::NonFinite(what)) => {
                    report.aborted = Some(format!("non-finite {what} at step {}", report.steps + 1));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        report.epochs = epoch + 1;
        let last = epoch + 1 == config.epochs || report.steps >= budget;
        if (epoch + 1) % config.validate_every == 0 || last {
            let v = match val_cache.loss(model, &val_keys) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    report.aborted = Some(format!("non-finite validation loss at step {}", report.steps));
                    break;
                }
                Err(e) => return Err(e),
            };
            report.validation.push((report.steps, v));
            if v < report.best_validation {
                report.best_validation = v;
                report.best_step = report.steps;
                best_params = model.params.clone();
                if let Some(p) = &best_path {
                    save_checkpoint(p, model, report.steps, Some(v))?;
                }
            }
        }
    }
    model.params = best_params;
    Ok(report)
}
