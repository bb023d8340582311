//! The PointConv core: `y0 = W_l vec(sum_i h(p_i - p0) x_i^T)`.

use rand::Rng;

use crate::autodiff::{Dense, Graph, Mlp, ParamStore, Real, Tensor, Var};
use crate::geometry::Neighborhood;
use crate::{Error, Result, Vec3};

/// Width of the hidden layer in the weight and embedding networks.
pub const HIDDEN: usize = 16;
/// Default number of kernel basis functions.
pub const C_MID: usize = 4;
/// Width of the relative positional embedding.
pub const EMBED: usize = 8;

/// Query points, their neighbor lists into a source set and the offsets
/// `p_i - p0` for every neighbor entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub nbhd: Neighborhood,
    pub offsets: Vec<Vec3>,
    pub source_count: usize,
}

impl Stencil {
    pub fn new(queries: &[Vec3], sources: &[Vec3], nbhd: Neighborhood) -> Result<Self> {
        if nbhd.query_count() != queries.len() {
            return Err(Error::shape(format!(
                "neighborhood has {} queries, expected {}",
                nbhd.query_count(),
                queries.len()
            )));
        }
        nbhd.validate(sources.len(), None)?;
        let offsets = (0..queries.len())
            .flat_map(|q| nbhd.neighbors(q).iter().map(move |&i| sources[i] - queries[q]))
            .collect();
        Ok(Self {
            nbhd,
            offsets,
            source_count: sources.len(),
        })
    }

    pub fn query_count(&self) -> usize {
        self.nbhd.query_count()
    }

    /// Offsets divided by `scale`, one row per neighbor entry.
    pub fn offset_tensor<T: Real>(&self, scale: f64) -> Tensor<T> {
        let data = self.offsets.iter().flat_map(|d| d.iter().map(move |c| T::of(c / scale))).collect();
        Tensor::new(vec![self.offsets.len(), 3], data).expect("offset rows")
    }

    /// Queries that have at least one neighbor.
    pub fn nonempty(&self) -> Vec<bool> {
        (0..self.query_count()).map(|q| self.nbhd.count(q) > 0).collect()
    }
}

/// One PointConv operator with weight network `h`, optional positional
/// embedding `e` concatenated to the features, and the bias-free map `W_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointConvLayer {
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    pub h: Mlp,
    pub e: Option<Mlp>,
    pub w_l: Dense,
    /// Length that offsets are divided by before entering `h` and `e`.
    pub scale: f64,
}

impl PointConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        c_mid: usize,
        embed: bool,
        scale: f64,
    ) -> Result<Self> {
        if c_mid == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::invalid("pointconv channel counts must be positive"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("pointconv offset scale must be positive"));
        }
        let h = Mlp::new(store, rng, &format!("{name}.h"), &[3, HIDDEN, c_mid]);
        let e = embed.then(|| Mlp::new(store, rng, &format!("{name}.e"), &[3, HIDDEN, EMBED]));
        let width = c_mid * (c_in + if embed { EMBED } else { 0 });
        let w_l = Dense::new(store, rng, &format!("{name}.w_l"), width, c_out, false);
        Ok(Self {
            c_in,
            c_mid,
            c_out,
            h,
            e,
            w_l,
            scale,
        })
    }

    /// Width of the per-neighbor feature after the embedding is appended.
    pub fn feature_width(&self) -> usize {
        self.c_in + self.e.as_ref().map_or(0, Mlp::c_out)
    }

    /// Zeroes `W_l`, turning the layer into the zero map.
    pub fn zero_core<T: Real>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.w_l.w).data_mut().fill(T::zero());
    }
}

/// Evaluates the layer on `features` (one row per source) over a stencil.
/// With `mean`, each query's sum is divided by its neighbor count. Queries
/// without neighbors produce zero rows.
pub fn pointconv_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &PointConvLayer,
    features: Var,
    stencil: &Stencil,
    mean: bool,
) -> Result<Var> {
    let fv = g.value(features);
    if fv.cols() != layer.c_in || fv.rows() != stencil.source_count {
        return Err(Error::shape(format!(
            "pointconv expects [{}, {}] features, got {:?}",
            stencil.source_count,
            layer.c_in,
            fv.shape()
        )));
    }
    let d = g.constant(stencil.offset_tensor(layer.scale))?;
    let hv = layer.h.forward(g, store, d)?;
    let mut x = g.gather(features, &stencil.nbhd.indices)?;
    if let Some(e) = &layer.e {
        let ev = e.forward(g, store, d)?;
        x = g.concat_cols(&[x, ev])?;
    }
    let s = g.segment_outer(hv, x, &stencil.nbhd.offsets, mean)?;
    layer.w_l.forward(g, store, s)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain-loop evaluation of an MLP read straight from the store.
    pub(crate) fn mlp_eval(store: &ParamStore<f64>, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (li, l) in mlp.layers.iter().enumerate() {
            let w = store.get(l.w);
            let mut next = vec![0.0; l.c_out];
            for (o, y) in next.iter_mut().enumerate() {
                *y = (0..l.c_in).map(|i| w.at(o, i) * cur[i]).sum::<f64>()
                    + l.b.map_or(0.0, |b| store.get(b).data()[o]);
                if li + 1 < mlp.layers.len() {
                    *y = y.max(0.0);
                }
            }
            cur = next;
        }
        cur
    }

    /// The continuous kernel `W(d)[j][o] = sum_a W_l[o][a * C + j] h_a(d)`,
    /// applied neighbor by neighbor.
    pub(crate) fn naive_pointconv(
        store: &ParamStore<f64>,
        layer: &PointConvLayer,
        features: &Tensor<f64>,
        stencil: &Stencil,
        mean: bool,
    ) -> Vec<Vec<f64>> {
        let wl = store.get(layer.w_l.w);
        let cw = layer.feature_width();
        let mut out = Vec::new();
        for q in 0..stencil.query_count() {
            let mut y = vec![0.0; layer.c_out];
            let lo = stencil.nbhd.offsets[q];
            for (k, &i) in stencil.nbhd.neighbors(q).iter().enumerate() {
                let d: Vec<f64> = stencil.offsets[lo + k].iter().map(|c| c / layer.scale).collect();
                let h = mlp_eval(store, &layer.h, &d);
                let mut x = features.row(i).to_vec();
                if let Some(e) = &layer.e {
                    x.extend(mlp_eval(store, e, &d));
                }
                for (o, yo) in y.iter_mut().enumerate() {
                    for (j, xj) in x.iter().enumerate() {
                        let w: f64 = (0..layer.c_mid).map(|a| wl.at(o, a * cw + j) * h[a]).sum();
                        *yo += w * xj;
                    }
                }
            }
            let n = stencil.nbhd.count(q);
            if mean && n > 0 {
                y.iter_mut().for_each(|v| *v /= n as f64);
            }
            out.push(y);
        }
        out
    }

    pub(crate) fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    pub(crate) fn random_features(rng: &mut impl Rng, n: usize, c: usize) -> Tensor<f64> {
        Tensor::new(vec![n, c], (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    pub(crate) fn random_nbhd(rng: &mut impl Rng, q: usize, n: usize, max: usize) -> Neighborhood {
        Neighborhood::from_lists((0..q).map(|_| {
            let c = rng.gen_range(0..=max);
            (0..c).map(|_| rng.gen_range(0..n)).collect::<Vec<_>>()
        }))
    }

    fn forward_rows(
        store: &ParamStore<f64>,
        layer: &PointConvLayer,
        x: &Tensor<f64>,
        st: &Stencil,
        mean: bool,
    ) -> Tensor<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let y = pointconv_forward(&mut g, store, layer, xv, st, mean).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn efficient_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let mut store = ParamStore::new();
            let (cin, cout) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
            let embed = trial % 2 == 0;
            let layer = PointConvLayer::new(&mut store, &mut rng, "l", cin, cout, C_MID, embed, 0.7).unwrap();
            let n = rng.gen_range(1..=64);
            let q = rng.gen_range(1..=32);
            let src = random_points(&mut rng, n);
            let qs = random_points(&mut rng, q);
            let st = Stencil::new(&qs, &src, random_nbhd(&mut rng, q, n, 8)).unwrap();
            let x = random_features(&mut rng, n, cin);
            for mean in [false, true] {
                let fast = forward_rows(&store, &layer, &x, &st, mean);
                let slow = naive_pointconv(&store, &layer, &x, &st, mean);
                for (r, row) in slow.iter().enumerate() {
                    for (o, v) in row.iter().enumerate() {
                        assert!((fast.at(r, o) - v).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn single_neighbor_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "l", 3, 2, C_MID, false, 1.0).unwrap();
        let p = [Vec3::zeros()];
        let st = Stencil::new(&p, &p, Neighborhood::single(vec![0])).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let y = forward_rows(&store, &layer, &x, &st, false);
        let h0 = mlp_eval(&store, &layer.h, &[0.0, 0.0, 0.0]);
        let wl = store.get(layer.w_l.w);
        for o in 0..2 {
            // vec(h(0) e1^T) has h_a at column a * 3
            let want: f64 = (0..C_MID).map(|a| wl.at(o, a * 3) * h0[a]).sum();
            assert!((y.at(0, o) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_features_and_empty_queries_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "l", 4, 5, C_MID, false, 1.0).unwrap();
        let src = random_points(&mut rng, 10);
        let qs = random_points(&mut rng, 3);
        let st = Stencil::new(&qs, &src, Neighborhood::from_lists(vec![vec![1, 2], vec![], vec![3]])).unwrap();
        let y = forward_rows(&store, &layer, &Tensor::zeros(vec![10, 4]), &st, false);
        assert!(y.data().iter().all(|v| *v == 0.0));
        let y = forward_rows(&store, &layer, &random_features(&mut rng, 10, 4), &st, true);
        assert!(y.row(1).iter().all(|v| *v == 0.0));
        assert!(y.row(0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "l", 4, 5, C_MID, false, 1.0).unwrap();
        let p = random_points(&mut rng, 2);
        let st = Stencil::new(&p, &p, Neighborhood::single(vec![0, 1])).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 3])).unwrap();
        assert!(matches!(
            pointconv_forward(&mut g, &store, &layer, x, &st, false),
            Err(Error::Shape(_))
        ));
        assert!(PointConvLayer::new(&mut store, &mut rng, "z", 4, 5, 0, false, 1.0).is_err());
    }

    #[test]
    fn embedding_widens_w_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let a = PointConvLayer::new(&mut store, &mut rng, "a", 6, 5, C_MID, true, 1.0).unwrap();
        assert_eq!(a.w_l.c_in, C_MID * (6 + EMBED));
        let b = PointConvLayer::new(&mut store, &mut rng, "b", 6, 5, C_MID, false, 1.0).unwrap();
        assert_eq!(b.w_l.c_in, C_MID * 6);
    }
}
