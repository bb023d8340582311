//! Residual wrappers and the interaction block.

use rand::Rng;

use super::layer::{pointconv_forward, PointConvLayer, Stencil};
use super::ops::{MeshRelational, MeshStencils};
use crate::autodiff::{Dense, Graph, ParamStore, Real, Var};
use crate::{Error, Result};

/// Width of the reduced channel space inside a wrapped convolution.
pub fn reduced_width(c: usize) -> usize {
    (c / 4).max(8)
}

/// Convolution inside a residual wrapper.
#[derive(Clone, Debug, PartialEq)]
pub enum Core {
    Point { layer: PointConvLayer, mean: bool },
    Mesh(MeshRelational),
}

/// Geometry a [`Core`] runs on.
#[derive(Clone, Copy, Debug)]
pub enum CoreGeometry<'a> {
    Point(&'a Stencil),
    Mesh(&'a MeshStencils),
}

/// How the residual reaches the output rows.
#[derive(Clone, Copy, Debug)]
pub enum Residual<'a> {
    /// Output rows are the input rows.
    Same,
    /// Output row `q` takes the input row `carried[q]`.
    Nearest(&'a [usize]),
}

/// `relu(down) -> conv -> relu(up)`, plus the residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualConv {
    pub c_in: usize,
    pub c_out: usize,
    pub down: Dense,
    pub core: Core,
    pub up: Dense,
    /// 1x1 projection of the residual, present when the width or the
    /// resolution changes.
    pub skip: Option<Dense>,
}

/// Which convolution a [`ResidualConv`] wraps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoreKind {
    /// Same-object neighbors with positional embedding, summed.
    Object,
    /// Cross-object neighbors, averaged.
    Relational,
    /// Interaction points on mesh faces.
    Mesh,
}

impl ResidualConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kind: CoreKind,
        resamples: bool,
        c_mid: usize,
        scale: f64,
    ) -> Result<Self> {
        let c_red = reduced_width(c_in.max(c_out));
        let down = Dense::new(store, rng, &format!("{name}.down"), c_in, c_red, true);
        let core = match kind {
            CoreKind::Object | CoreKind::Relational => {
                let object = kind == CoreKind::Object;
                Core::Point {
                    layer: PointConvLayer::new(store, rng, &format!("{name}.conv"), c_red, c_red, c_mid, object, scale)?,
                    mean: !object,
                }
            }
            CoreKind::Mesh => Core::Mesh(MeshRelational::new(store, rng, &format!("{name}.mesh"), c_red, c_mid, scale)?),
        };
        let up = Dense::new(store, rng, &format!("{name}.up"), c_red, c_out, true);
        let skip = (resamples || c_in != c_out).then(|| Dense::new(store, rng, &format!("{name}.skip"), c_in, c_out, false));
        Ok(Self {
            c_in,
            c_out,
            down,
            core,
            up,
            skip,
        })
    }

    /// Zeroes the convolution cores so the wrapper reduces to its residual.
    pub fn zero_core<T: Real>(&self, store: &mut ParamStore<T>) {
        match &self.core {
            Core::Point { layer, .. } => layer.zero_core(store),
            Core::Mesh(m) => {
                m.sender.zero_core(store);
                m.receiver.zero_core(store);
                m.vertex.zero_core(store);
            }
        }
    }

    /// The convolution branch alone, before the residual is added.
    pub fn branch<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        geom: CoreGeometry<'_>,
    ) -> Result<Var> {
        let a = self.down.forward(g, store, x)?;
        let a = g.relu(a)?;
        let b = match (&self.core, geom) {
            (Core::Point { layer, mean }, CoreGeometry::Point(st)) => pointconv_forward(g, store, layer, a, st, *mean)?,
            (Core::Mesh(m), CoreGeometry::Mesh(st)) => m.forward(g, store, a, st)?,
            _ => return Err(Error::invalid("convolution and geometry kinds differ")),
        };
        let c = self.up.forward(g, store, b)?;
        g.relu(c)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        geom: CoreGeometry<'_>,
        residual: Residual<'_>,
    ) -> Result<Var> {
        let branch = self.branch(g, store, x, geom)?;
        let carried = match residual {
            Residual::Same => x,
            Residual::Nearest(idx) => {
                if self.skip.is_none() {
                    return Err(Error::invalid("resampling wrapper built without a residual projection"));
                }
                g.gather(x, idx)?
            }
        };
        let res = match &self.skip {
            Some(s) => s.forward(g, store, carried)?,
            None => carried,
        };
        if g.value(res).rows() != g.value(branch).rows() {
            return Err(Error::shape(format!(
                "residual has {} rows, branch {}",
                g.value(res).rows(),
                g.value(branch).rows()
            )));
        }
        g.add(branch, res)
    }
}

/// Object layer, optionally followed by a relational layer at the object
/// layer's output resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionBlock {
    pub object: ResidualConv,
    pub relational: Option<ResidualConv>,
}

/// Geometry for one block evaluation.
#[derive(Clone, Copy, Debug)]
pub struct BlockGeometry<'a> {
    pub object: &'a Stencil,
    pub residual: Residual<'a>,
    pub relational: Option<CoreGeometry<'a>>,
}

impl InteractionBlock {
    /// `relational` picks the second layer's kind, if any. `resamples`
    /// marks an object layer whose queries differ from its sources.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        resamples: bool,
        relational: Option<CoreKind>,
        c_mid: usize,
        scale: f64,
    ) -> Result<Self> {
        let object = ResidualConv::new(
            store,
            rng,
            &format!("{name}.obj"),
            c_in,
            c_out,
            CoreKind::Object,
            resamples,
            c_mid,
            scale,
        )?;
        let relational = match relational {
            Some(CoreKind::Object) => return Err(Error::invalid("relational layer cannot be an object layer")),
            Some(kind) => Some(ResidualConv::new(
                store,
                rng,
                &format!("{name}.rel"),
                c_out,
                c_out,
                kind,
                false,
                c_mid,
                scale,
            )?),
            None => None,
        };
        Ok(Self { object, relational })
    }

    pub fn c_out(&self) -> usize {
        self.object.c_out
    }

    pub fn zero_cores<T: Real>(&self, store: &mut ParamStore<T>) {
        self.object.zero_core(store);
        if let Some(r) = &self.relational {
            r.zero_core(store);
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        geom: &BlockGeometry<'_>,
    ) -> Result<Var> {
        let y = self.object.forward(g, store, x, CoreGeometry::Point(geom.object), geom.residual)?;
        match (&self.relational, geom.relational) {
            (Some(r), Some(rg)) => r.forward(g, store, y, rg, Residual::Same),
            (None, None) => Ok(y),
            _ => Err(Error::invalid("relational layer and geometry do not match")),
        }
    }
}
