//! Central finite-difference check of analytic parameter gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::Result;

/// Builds a scalar loss on a fresh graph from the current parameters.
pub trait LossBuilder: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> {}
impl<F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>> LossBuilder for F {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominators below this are raised to it.
    pub floor: f64,
    /// Check at most this many coordinates per tensor, chosen at random.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Multiplies analytic gradients before comparing. Test fixtures use it
    /// to corrupt gradients on purpose.
    pub corrupt: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
            corrupt: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation flipped a rectifier.
    pub skipped_kinks: usize,
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn eval(store: &ParamStore<f64>, build: &impl LossBuilder) -> Result<(f64, Vec<u64>)> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    Ok((g.value(loss).item(), g.activation_pattern().to_vec()))
}

/// Analytic gradients of the built loss for every parameter tensor.
pub fn analytic_gradients(store: &ParamStore<f64>, build: &impl LossBuilder) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;
    let mut out = store.zero_grads();
    grads.accumulate(&mut out);
    Ok(out)
}

/// Compares analytic gradients with central differences, coordinate by
/// coordinate. Parameters are restored afterwards.
pub fn gradient_check(
    store: &mut ParamStore<f64>,
    build: impl LossBuilder,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(store, &build)?;
    let (_, base_pattern) = eval(store, &build)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        per_param: Vec::new(),
    };
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.get(id).len();
        let mut coords: Vec<usize> = (0..n).collect();
        if let Some(m) = opts.max_coords {
            if m < n {
                coords.shuffle(&mut rng);
                coords.truncate(m);
                coords.sort_unstable();
            }
        }
        let mut pc = ParamCheck {
            name: store.name(id).to_string(),
            checked: 0,
            max_rel_error: 0.0,
        };
        for c in coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + opts.step;
            let plus = eval(store, &build);
            store.get_mut(id).data_mut()[c] = orig - opts.step;
            let minus = eval(store, &build);
            store.get_mut(id).data_mut()[c] = orig;
            let ((lp, pp), (lm, pm)) = (plus?, minus?);
            if pp != base_pattern || pm != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.step);
            let a = analytic[id.index()][c] * opts.corrupt;
            let e = relative_error(a, numeric, opts.floor);
            pc.checked += 1;
            pc.max_rel_error = pc.max_rel_error.max(e);
        }
        report.checked += pc.checked;
        report.max_rel_error = report.max_rel_error.max(pc.max_rel_error);
        report.per_param.push(pc);
    }
    Ok(report)
}
