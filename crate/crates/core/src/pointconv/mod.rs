//! Point convolutions: the factored PointConv core, its object,
//! relational and mesh forms, and the residual interaction block.
//!
//! All operators run on an autodiff [`Graph`](crate::autodiff::Graph).
//! Neighborhoods are precomputed into [`Stencil`]s so one geometry pass can
//! serve many evaluations.

mod block;
mod layer;
mod ops;
mod suite;

pub use block::{
    reduced_width, BlockGeometry, Core, CoreGeometry, CoreKind, InteractionBlock, Residual, ResidualConv,
};
pub use layer::{pointconv_forward, PointConvLayer, Stencil, C_MID, EMBED, HIDDEN};
pub use ops::{
    mesh_receiver_features, mesh_sender_features, mesh_vertex_update, object_pointconv, object_stencil,
    relational_pointconv_pc, relational_stencil, upsample_interpolate, MeshRelational, MeshStencils,
};
pub use suite::layer_gradient_suite;
