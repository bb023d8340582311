use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{glorot, ParamId, ParamStore};
use super::{Real, Tensor};
use crate::Result;

/// Fully connected layer `y = x W^T (+ b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
    ) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, c_in, c_out));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(vec![c_out])));
        Self { w, b, c_in, c_out }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w)?;
        let b = match self.b {
            Some(b) => Some(g.param(store, b)?),
            None => None,
        };
        g.linear(x, w, b)
    }
}

/// Multilayer perceptron with rectifiers between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers }
    }

    pub fn c_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.c_out)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Sets the output layer to zero so the network starts at the origin.
    pub fn zero_output<T: Real>(&self, store: &mut ParamStore<T>) {
        if let Some(last) = self.layers.last() {
            store.get_mut(last.w).data_mut().fill(T::zero());
            if let Some(b) = last.b {
                store.get_mut(b).data_mut().fill(T::zero());
            }
        }
    }
}
