//! Per-point Huber loss over a mini-batch of clouds.

use crate::autodiff::{huber, Graph, Real, Var};
use crate::{Error, Result, Vec3};

/// Huber threshold in normalized units.
pub const HUBER_DELTA: f64 = 1.0;

/// Sum of Huber penalties of every cloud divided by the total number of
/// points in the batch, so that large clouds weigh more than small ones.
pub fn training_loss<T: Real>(g: &mut Graph<T>, preds: &[Var], targets: &[Var]) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if preds.len() != targets.len() {
        return Err(Error::shape(format!("{} predictions, {} targets", preds.len(), targets.len())));
    }
    let mut points = 0;
    let mut total = None;
    for (&p, &t) in preds.iter().zip(targets) {
        points += g.value(p).rows();
        let s = g.huber_sum(p, t, T::of(HUBER_DELTA))?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    if points == 0 {
        return Err(Error::invalid("batch has no points"));
    }
    let total = total.expect("nonempty batch");
    g.scale(total, T::one() / T::of(points as f64))
}

/// Value of [`training_loss`] for plain per-point vectors.
pub fn batch_loss(preds: &[Vec<Vec3>], targets: &[Vec<Vec3>]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if preds.len() != targets.len() {
        return Err(Error::shape(format!("{} predictions, {} targets", preds.len(), targets.len())));
    }
    let mut points = 0;
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::shape("prediction and target clouds differ in size"));
        }
        points += p.len();
        sum += p
            .iter()
            .zip(t)
            .flat_map(|(a, b)| (a - b).iter().copied().collect::<Vec<_>>())
            .map(|e| huber(e, HUBER_DELTA))
            .sum::<f64>();
    }
    if points == 0 {
        return Err(Error::invalid("batch has no points"));
    }
    Ok(sum / points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn cloud(v: &[[f64; 3]]) -> Vec<Vec3> {
        v.iter().map(|&a| Vec3::from(a)).collect()
    }

    fn on_graph(preds: &[Vec<Vec3>], targets: &[Vec<Vec3>]) -> f64 {
        let mut g = Graph::<f64>::new();
        let to_var = |g: &mut Graph<f64>, c: &Vec<Vec3>| {
            let t = Tensor::new(vec![c.len(), 3], c.iter().flat_map(|v| v.iter().copied()).collect()).unwrap();
            g.leaf(t).unwrap()
        };
        let p: Vec<Var> = preds.iter().map(|c| to_var(&mut g, c)).collect();
        let t: Vec<Var> = targets.iter().map(|c| to_var(&mut g, c)).collect();
        let l = training_loss(&mut g, &p, &t).unwrap();
        g.value(l).item()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let c = vec![cloud(&[[1.0, 2.0, 3.0], [0.5, 0.0, -1.0]])];
        assert_eq!(batch_loss(&c, &c).unwrap(), 0.0);
        assert_eq!(on_graph(&c, &c), 0.0);
    }

    #[test]
    fn weighting_is_per_point() {
        // singleton with residual (0.5, 2, 0); three-point cloud exact
        let preds = vec![cloud(&[[0.5, 2.0, 0.0]]), cloud(&[[1.0, 1.0, 1.0]; 3])];
        let targets = vec![cloud(&[[0.0, 0.0, 0.0]]), cloud(&[[1.0, 1.0, 1.0]; 3])];
        let singleton = 0.5 * 0.25 + (2.0 - 0.5);
        let expect = singleton / 4.0;
        assert!((batch_loss(&preds, &targets).unwrap() - expect).abs() < 1e-15);
        assert!((on_graph(&preds, &targets) - expect).abs() < 1e-15);
        // a per-cloud mean would give singleton / 2
        assert!((expect - singleton / 2.0).abs() > 0.1);
    }

    #[test]
    fn doubling_every_cloud_keeps_the_loss() {
        let preds = vec![cloud(&[[0.3, -0.2, 1.7]]), cloud(&[[0.0, 0.1, 0.2], [2.5, 0.0, 0.0]])];
        let targets = vec![cloud(&[[0.0, 0.0, 0.0]]), cloud(&[[0.0; 3], [0.0; 3]])];
        let doubled = |cs: &[Vec<Vec3>]| -> Vec<Vec<Vec3>> {
            cs.iter().map(|c| c.iter().chain(c.iter()).copied().collect()).collect()
        };
        let a = batch_loss(&preds, &targets).unwrap();
        let b = batch_loss(&doubled(&preds), &doubled(&targets)).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!((on_graph(&doubled(&preds), &doubled(&targets)) - a).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(batch_loss(&[], &[]).is_err());
        let mut g = Graph::<f64>::new();
        assert!(training_loss(&mut g, &[], &[]).is_err());
    }
}
