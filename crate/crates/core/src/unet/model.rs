use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{InputMode, ModelConfig, PredictionMode};
use super::levels::{build_geometry, RelationalGeometry, SceneGeometry};
use crate::autodiff::{glorot, Dense, Graph, Mlp, ParamStore, Real, Tensor, Var};
use crate::geometry::PointCloudFrame;
use crate::pointconv::{BlockGeometry, CoreGeometry, CoreKind, InteractionBlock, Residual, ResidualConv};
use crate::{Error, Result, Vec3};

/// Per-column divisors for raw inputs and per-axis divisors for targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input: Vec<f64>,
    pub output: [f64; 3],
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Self {
            input: vec![1.0; width],
            output: [1.0; 3],
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.input.len() != width {
            return Err(Error::invalid(format!(
                "normalizer has {} input scales, model expects {width}",
                self.input.len()
            )));
        }
        if self.input.iter().chain(&self.output).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("normalizer scales must be positive"));
        }
        Ok(())
    }
}

/// Raw per-point inputs `[v(t); v(t-1); ...; z(t)]`, width `3h + 1`.
pub fn encode_input_features(frame: &PointCloudFrame, history: usize) -> Result<Tensor<f64>> {
    if frame.history < history {
        return Err(Error::MissingHistory {
            needed: history + 1,
            available: frame.history + 1,
        });
    }
    let w = 3 * history + 1;
    let mut data = Vec::with_capacity(frame.len() * w);
    for i in 0..frame.len() {
        for lag in 0..history {
            data.extend(frame.velocity(i, lag).iter());
        }
        data.push(frame.positions[i].z);
    }
    Tensor::new(vec![frame.len(), w], data)
}

/// Decoder stage: upsampling object layer, skip merge, relational layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock {
    pub up: ResidualConv,
    pub merge: Dense,
    pub relational: Option<ResidualConv>,
}

/// Layer layout of the network; parameters live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    /// Raw inputs to `C` channels.
    pub encoder_input: Mlp,
    /// Full-resolution block without resampling.
    pub stem: InteractionBlock,
    pub encoder: Vec<InteractionBlock>,
    pub bottleneck: Vec<InteractionBlock>,
    /// Coarsest first.
    pub decoder: Vec<DecoderBlock>,
    pub head: Mlp,
}

fn relational_kind(config: &ModelConfig, level: usize) -> Option<CoreKind> {
    match config.input {
        InputMode::PointCloud => Some(CoreKind::Relational),
        InputMode::Mesh if level > 0 => None,
        InputMode::Mesh if config.faces => Some(CoreKind::Mesh),
        InputMode::Mesh => Some(CoreKind::Relational),
    }
}

fn core_geometry(r: &RelationalGeometry) -> CoreGeometry<'_> {
    match r {
        RelationalGeometry::Point(s) => CoreGeometry::Point(s),
        RelationalGeometry::Mesh(m) => CoreGeometry::Mesh(m),
    }
}

impl UNet {
    /// Lays out every block. The head's output layer starts at zero.
    pub fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = config.levels();
        let radius = |l: usize| config.schedule.level_radii[l];
        let c = config.width(0);
        let encoder_input = Mlp::new(store, &mut rng, "input", &[config.raw_width(), c, c]);
        let stem = InteractionBlock::new(
            store,
            &mut rng,
            "stem",
            c,
            c,
            false,
            relational_kind(config, 0),
            config.c_mid,
            radius(0),
        )?;
        let mut encoder = Vec::with_capacity(levels);
        for l in 1..=levels {
            encoder.push(InteractionBlock::new(
                store,
                &mut rng,
                &format!("enc{l}"),
                config.width(l - 1),
                config.width(l),
                true,
                relational_kind(config, l),
                config.c_mid,
                radius(l),
            )?);
        }
        let bottleneck = (0..config.bottleneck_blocks)
            .map(|b| {
                InteractionBlock::new(
                    store,
                    &mut rng,
                    &format!("mid{b}"),
                    config.width(levels),
                    config.width(levels),
                    false,
                    relational_kind(config, levels),
                    config.c_mid,
                    radius(levels),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut decoder = Vec::with_capacity(levels);
        for l in (1..=levels).rev() {
            let (wc, wf) = (config.width(l), config.width(l - 1));
            let name = format!("dec{l}");
            let up = ResidualConv::new(
                store,
                &mut rng,
                &format!("{name}.up"),
                wc,
                wf,
                CoreKind::Object,
                true,
                config.c_mid,
                radius(l),
            )?;
            let merge = Dense::new(store, &mut rng, &format!("{name}.merge"), 2 * wf, wf, true);
            let relational = relational_kind(config, l - 1)
                .map(|kind| {
                    ResidualConv::new(
                        store,
                        &mut rng,
                        &format!("{name}.rel"),
                        wf,
                        wf,
                        kind,
                        false,
                        config.c_mid,
                        radius(l - 1),
                    )
                })
                .transpose()?;
            decoder.push(DecoderBlock { up, merge, relational });
        }
        let head = Mlp::new(store, &mut rng, "head", &[c, config.head_hidden, 3]);
        head.zero_output(store);
        Ok(Self {
            encoder_input,
            stem,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    /// Normalized per-point predictions `[n, 3]` from normalized inputs.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: Var,
        geo: &SceneGeometry,
    ) -> Result<Var> {
        let levels = &geo.levels;
        if levels.len() != self.encoder.len() + 1 {
            return Err(Error::invalid(format!(
                "geometry has {} levels, network expects {}",
                levels.len(),
                self.encoder.len() + 1
            )));
        }
        if g.value(inputs).rows() != levels[0].len() {
            return Err(Error::shape("input rows differ from level-0 points"));
        }
        let same = |l: usize| {
            levels[l]
                .same
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("level {l} lacks a same-object stencil")))
        };
        let rel = |l: usize| levels[l].relational.as_ref().map(core_geometry);

        let x = self.encoder_input.forward(g, store, inputs)?;
        let mut x = self.stem.forward(
            g,
            store,
            x,
            &BlockGeometry {
                object: same(0)?,
                residual: Residual::Same,
                relational: rel(0),
            },
        )?;
        let mut skips = vec![x];
        for (i, block) in self.encoder.iter().enumerate() {
            let l = i + 1;
            let lv = &levels[l];
            let down = lv.down.as_ref().ok_or_else(|| Error::invalid("missing downsampling stencil"))?;
            x = block.forward(
                g,
                store,
                x,
                &BlockGeometry {
                    object: down,
                    residual: Residual::Nearest(&lv.carried),
                    relational: rel(l),
                },
            )?;
            skips.push(x);
        }
        let bottom = self.encoder.len();
        for block in &self.bottleneck {
            x = block.forward(
                g,
                store,
                x,
                &BlockGeometry {
                    object: same(bottom)?,
                    residual: Residual::Same,
                    relational: rel(bottom),
                },
            )?;
        }
        for (i, block) in self.decoder.iter().enumerate() {
            let l = bottom - i;
            let lv = &levels[l];
            let up = lv.up.as_ref().ok_or_else(|| Error::invalid("missing upsampling stencil"))?;
            let y = block.up.forward(g, store, x, CoreGeometry::Point(up), Residual::Nearest(&lv.up_carried))?;
            let cat = g.concat_cols(&[y, skips[l - 1]])?;
            x = block.merge.forward(g, store, cat)?;
            if let Some(r) = &block.relational {
                let geom = rel(l - 1).ok_or_else(|| Error::invalid("missing relational geometry"))?;
                x = r.forward(g, store, x, geom, Residual::Same)?;
            }
        }
        self.head.forward(g, store, x)
    }

    /// Encoder, bottleneck and decoder blocks. The stem is not counted.
    pub fn block_count(&self) -> usize {
        self.encoder.len() + self.bottleneck.len() + self.decoder.len()
    }
}

/// Inputs and geometry for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// Normalized inputs `[n, 3h + 1]`.
    pub inputs: Tensor<f64>,
    pub geometry: SceneGeometry,
}

/// A network with its parameters and normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub net: UNet,
    pub params: ParamStore<f64>,
    pub normalizer: Normalizer,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = UNet::build(&config, &mut params, seed)?;
        let normalizer = Normalizer::identity(config.raw_width());
        Ok(Self {
            config,
            seed,
            net,
            params,
            normalizer,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Re-draws the head's output layer so that gradients reach every
    /// parameter. Used by gradient checks.
    pub fn randomize_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(last) = self.net.head.layers.last() {
            *self.params.get_mut(last.w) = glorot(&mut rng, last.c_in, last.c_out);
        }
    }

    pub fn prepare(&self, frame: &PointCloudFrame, triangles: Option<&[[usize; 3]]>) -> Result<Prepared> {
        let raw = encode_input_features(frame, self.config.history)?;
        self.normalizer.validate(raw.cols())?;
        let w = raw.cols();
        let mut data = raw.into_data();
        for (k, v) in data.iter_mut().enumerate() {
            let col = k % w;
            *v = if col == w - 1 && !self.config.z_feature {
                0.0
            } else {
                *v / self.normalizer.input[col]
            };
        }
        let inputs = Tensor::new(vec![frame.len(), w], data)?;
        let geometry = build_geometry(&self.config, &frame.positions, &frame.object_ids, triangles)?;
        Ok(Prepared { inputs, geometry })
    }

    /// Normalized outputs on a graph using `store` for the parameters.
    pub fn forward_prepared<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, p: &Prepared) -> Result<Var> {
        let x = g.constant(p.inputs.cast())?;
        self.net.forward(g, store, x, &p.geometry)
    }

    /// Per-point network output in scene units per frame: the next
    /// displacement or its change, depending on the mode.
    pub fn predict_raw(&self, frame: &PointCloudFrame, triangles: Option<&[[usize; 3]]>) -> Result<Vec<Vec3>> {
        let p = self.prepare(frame, triangles)?;
        let mut g = Graph::new();
        let y = self.forward_prepared(&mut g, &self.params, &p)?;
        let out = g.value(y);
        let s = self.normalizer.output;
        Ok((0..out.rows())
            .map(|r| {
                let row = out.row(r);
                Vec3::new(row[0] * s[0], row[1] * s[1], row[2] * s[2])
            })
            .collect())
    }

    /// Next-frame positions.
    pub fn predict_next(&self, frame: &PointCloudFrame, triangles: Option<&[[usize; 3]]>) -> Result<Vec<Vec3>> {
        let raw = self.predict_raw(frame, triangles)?;
        Ok(raw
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = match self.config.prediction {
                    PredictionMode::Velocity => *r,
                    PredictionMode::Acceleration => frame.velocity(i, 0) + r,
                };
                frame.positions[i] + v
            })
            .collect())
    }
}
