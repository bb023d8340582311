//! Dense tensors with reverse-mode differentiation, layers, Huber loss and
//! Adam.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod real;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{
    analytic_gradients, gradient_check, relative_error, GradCheckOptions, GradCheckReport, LossBuilder, ParamCheck,
};
pub use graph::{huber, Gradients, Graph, Var};
pub use layers::{Dense, Mlp};
pub use params::{glorot, ParamEntry, ParamId, ParamStore};
pub use real::Real;
pub(crate) use real::{axpy, dot};
pub use tensor::Tensor;
