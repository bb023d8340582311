//! Finite-difference gradient checks for every layer variant on small
//! random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::block::{BlockGeometry, CoreGeometry, CoreKind, InteractionBlock, Residual, ResidualConv};
use super::layer::{pointconv_forward, PointConvLayer, Stencil, C_MID};
use super::ops::{object_stencil, relational_stencil, MeshStencils};
use crate::autodiff::{gradient_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::geometry::{find_interaction_points, nearest_same_object, offset_face_pair, FaceSampling, Neighborhood};
use crate::{Result, Vec3};

fn points(rng: &mut impl Rng, n: usize, spread: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
            )
        })
        .collect()
}

fn features(rng: &mut impl Rng, n: usize, c: usize) -> Tensor<f64> {
    Tensor::new(vec![n, c], (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Two interleaved objects a small gap apart.
fn two_bodies(rng: &mut impl Rng, n: usize) -> (Vec<Vec3>, Vec<u32>) {
    let mut p = points(rng, n, 0.25);
    let ids: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    for (q, &o) in p.iter_mut().zip(&ids) {
        q.x += if o == 0 { -0.27 } else { 0.27 };
    }
    (p, ids)
}

/// `sum(y * R)` for a fixed random `R`.
fn project(g: &mut Graph<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(weights.clone())?;
    let m = g.mul(y, r)?;
    g.sum(m)
}

fn check(
    store: &mut ParamStore<f64>,
    x: &Tensor<f64>,
    out_shape: (usize, usize),
    seed: u64,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = features(&mut rng, out_shape.0, out_shape.1);
    gradient_check(
        store,
        |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let xv = g.constant(x.clone())?;
            let y = f(g, s, xv)?;
            project(g, y, &weights)
        },
        GradCheckOptions {
            max_coords: Some(40),
            seed,
            ..Default::default()
        },
    )
}

/// Runs the check for the core, object, relational, the three mesh
/// layers and a full interaction block. Returns one report per variant.
pub fn layer_gradient_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // core, sum mode over a random stencil
    {
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "core", 5, 4, C_MID, false, 0.5)?;
        let src = points(&mut rng, 20, 0.5);
        let q = points(&mut rng, 8, 0.5);
        let nb = Neighborhood::from_lists((0..8).map(|_| (0..4).map(|_| rng.gen_range(0..20)).collect::<Vec<_>>()));
        let st = Stencil::new(&q, &src, nb)?;
        let x = features(&mut rng, 20, 5);
        let rep = check(&mut store, &x, (8, 4), seed, |g, s, xv| pointconv_forward(g, s, &layer, xv, &st, false))?;
        out.push(("pointconv", rep));
    }

    let (p, ids) = two_bodies(&mut rng, 24);
    // object layer with embedding
    {
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "obj", 4, 4, C_MID, true, 0.3)?;
        let st = object_stencil(&p, &ids, &p, &ids, 6)?;
        let x = features(&mut rng, 24, 4);
        let rep = check(&mut store, &x, (24, 4), seed + 1, |g, s, xv| pointconv_forward(g, s, &layer, xv, &st, false))?;
        out.push(("object", rep));
    }
    // relational layer, mean mode
    {
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "rel", 4, 4, C_MID, false, 0.3)?;
        let st = relational_stencil(&p, &ids, 6, 0.3)?;
        let x = features(&mut rng, 24, 4);
        let rep = check(&mut store, &x, (24, 4), seed + 2, |g, s, xv| pointconv_forward(g, s, &layer, xv, &st, true))?;
        out.push(("relational", rep));
    }

    // mesh layers on a face pair that touches inside the faces only
    let mesh = offset_face_pair(0.03);
    let ips = find_interaction_points(&mesh, 6, 0.1, FaceSampling::Uniform { seed })?;
    let ms = MeshStencils::new(&mesh, &ips, 4, 0.1)?;
    let (ns, nr, nv) = (ips.sender_points.len(), ips.receiver_points.len(), mesh.vertices.len());
    {
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "send", 3, 3, C_MID, true, 0.1)?;
        let x = features(&mut rng, nv, 3);
        let rep = check(&mut store, &x, (ns, 3), seed + 3, |g, s, xv| {
            pointconv_forward(g, s, &layer, xv, &ms.sender, false)
        })?;
        out.push(("mesh sender", rep));
    }
    {
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "recv", 3, 3, C_MID, false, 0.1)?;
        let x = features(&mut rng, ns, 3);
        let rep = check(&mut store, &x, (nr, 3), seed + 4, |g, s, xv| {
            pointconv_forward(g, s, &layer, xv, &ms.receiver, true)
        })?;
        out.push(("mesh receiver", rep));
    }
    {
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "vert", 3, 3, C_MID, true, 0.1)?;
        let x = features(&mut rng, nr, 3);
        let rep = check(&mut store, &x, (nv, 3), seed + 5, |g, s, xv| {
            pointconv_forward(g, s, &layer, xv, &ms.vertex, true)
        })?;
        out.push(("mesh vertex", rep));
    }
    {
        let mut store = ParamStore::new();
        let wrap = ResidualConv::new(&mut store, &mut rng, "meshrel", 4, 4, CoreKind::Mesh, false, C_MID, 0.1)?;
        let x = features(&mut rng, nv, 4);
        let rep = check(&mut store, &x, (nv, 4), seed + 6, |g, s, xv| {
            wrap.forward(g, s, xv, CoreGeometry::Mesh(&ms), Residual::Same)
        })?;
        out.push(("mesh relational", rep));
    }

    // downsampling interaction block
    {
        let mut store = ParamStore::new();
        let block = InteractionBlock::new(
            &mut store,
            &mut rng,
            "blk",
            4,
            8,
            true,
            Some(CoreKind::Relational),
            C_MID,
            0.3,
        )?;
        let kept: Vec<usize> = (0..24).step_by(3).collect();
        let cp: Vec<Vec3> = kept.iter().map(|&i| p[i]).collect();
        let cid: Vec<u32> = kept.iter().map(|&i| ids[i]).collect();
        let obj = object_stencil(&p, &ids, &cp, &cid, 6)?;
        let rel = relational_stencil(&cp, &cid, 6, 0.4)?;
        let near = nearest_same_object(&p, &ids, &cp, &cid)?;
        let x = features(&mut rng, 24, 4);
        let rep = check(&mut store, &x, (kept.len(), 8), seed + 7, |g, s, xv| {
            let geom = BlockGeometry {
                object: &obj,
                residual: Residual::Nearest(&near),
                relational: Some(CoreGeometry::Point(&rel)),
            };
            block.forward(g, s, xv, &geom)
        })?;
        out.push(("interaction block", rep));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for (name, rep) in layer_gradient_suite(7).unwrap() {
            assert!(rep.passed(1e-4), "{name}: {rep:?}");
            assert!(rep.checked >= 10, "{name}: only {} coordinates", rep.checked);
        }
    }
}
