//! Neighborhood construction and the object, relational, mesh and
//! interpolation operators built on [`pointconv_forward`].

use rand::Rng;

use super::layer::{pointconv_forward, PointConvLayer, Stencil};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::geometry::{
    knn_cross_object, knn_same_object, receiver_neighborhood, sender_vertex_neighborhood, vertex_surface_neighborhood,
    InteractionPointSet, TriMesh,
};
use crate::{Result, Vec3};

/// Same-object kNN stencil from `queries` into `sources`.
pub fn object_stencil(
    sources: &[Vec3],
    source_ids: &[u32],
    queries: &[Vec3],
    query_ids: &[u32],
    k: usize,
) -> Result<Stencil> {
    let nbhd = knn_same_object(sources, source_ids, queries, query_ids, k)?;
    Stencil::new(queries, sources, nbhd)
}

/// Cross-object kNN stencil over one point set, filtered to radius `r`.
pub fn relational_stencil(positions: &[Vec3], object_ids: &[u32], k: usize, r: f64) -> Result<Stencil> {
    let nbhd = knn_cross_object(positions, object_ids, positions, object_ids, k, r)?;
    Stencil::new(positions, positions, nbhd)
}

/// Object PointConv: same-object kNN, positional embedding appended to the
/// neighbor features, summed.
#[allow(clippy::too_many_arguments)]
pub fn object_pointconv<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &PointConvLayer,
    features: Var,
    sources: &[Vec3],
    source_ids: &[u32],
    queries: &[Vec3],
    query_ids: &[u32],
    k: usize,
) -> Result<Var> {
    let st = object_stencil(sources, source_ids, queries, query_ids, k)?;
    pointconv_forward(g, store, layer, features, &st, false)
}

/// Relational PointConv on a point cloud: cross-object neighbors within
/// `r`, averaged. Points with no such neighbor get zero.
#[allow(clippy::too_many_arguments)]
pub fn relational_pointconv_pc<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &PointConvLayer,
    features: Var,
    positions: &[Vec3],
    object_ids: &[u32],
    k: usize,
    r: f64,
) -> Result<Var> {
    let st = relational_stencil(positions, object_ids, k, r)?;
    pointconv_forward(g, store, layer, features, &st, true)
}

/// Stencils of the three mesh relational steps for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshStencils {
    /// Sender interaction points over the vertices of their face.
    pub sender: Stencil,
    /// Receiver interaction points over nearby sender points.
    pub receiver: Stencil,
    /// Mesh vertices over receiver points on incident faces.
    pub vertex: Stencil,
}

impl MeshStencils {
    pub fn new(mesh: &TriMesh, ips: &InteractionPointSet, k: usize, threshold: f64) -> Result<Self> {
        Ok(Self {
            sender: Stencil::new(&ips.sender_points, &mesh.vertices, sender_vertex_neighborhood(mesh, ips))?,
            receiver: Stencil::new(
                &ips.receiver_points,
                &ips.sender_points,
                receiver_neighborhood(ips, k, threshold),
            )?,
            vertex: Stencil::new(&mesh.vertices, &ips.receiver_points, vertex_surface_neighborhood(mesh, ips))?,
        })
    }
}

/// Features at sender interaction points, convolved from the three
/// vertices of each point's face.
pub fn mesh_sender_features<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &PointConvLayer,
    mesh: &TriMesh,
    vertex_features: Var,
    ips: &InteractionPointSet,
) -> Result<Var> {
    let st = Stencil::new(&ips.sender_points, &mesh.vertices, sender_vertex_neighborhood(mesh, ips))?;
    pointconv_forward(g, store, layer, vertex_features, &st, false)
}

/// Features at receiver interaction points, averaged over sender points of
/// other objects within `threshold`.
pub fn mesh_receiver_features<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &PointConvLayer,
    ips: &InteractionPointSet,
    sender_features: Var,
    k: usize,
    threshold: f64,
) -> Result<Var> {
    let st = Stencil::new(
        &ips.receiver_points,
        &ips.sender_points,
        receiver_neighborhood(ips, k, threshold),
    )?;
    pointconv_forward(g, store, layer, sender_features, &st, true)
}

/// Per-vertex update averaged over receiver points on incident faces.
pub fn mesh_vertex_update<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &PointConvLayer,
    mesh: &TriMesh,
    ips: &InteractionPointSet,
    receiver_features: Var,
) -> Result<Var> {
    let st = Stencil::new(&mesh.vertices, &ips.receiver_points, vertex_surface_neighborhood(mesh, ips))?;
    pointconv_forward(g, store, layer, receiver_features, &st, true)
}

/// The three mesh layers chained: vertices to senders, senders to
/// receivers, receivers back to vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshRelational {
    pub sender: PointConvLayer,
    pub receiver: PointConvLayer,
    pub vertex: PointConvLayer,
}

impl MeshRelational {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c: usize,
        c_mid: usize,
        scale: f64,
    ) -> Result<Self> {
        Ok(Self {
            sender: PointConvLayer::new(store, rng, &format!("{name}.send"), c, c, c_mid, true, scale)?,
            receiver: PointConvLayer::new(store, rng, &format!("{name}.recv"), c, c, c_mid, false, scale)?,
            vertex: PointConvLayer::new(store, rng, &format!("{name}.vert"), c, c, c_mid, true, scale)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        vertex_features: Var,
        st: &MeshStencils,
    ) -> Result<Var> {
        let s = pointconv_forward(g, store, &self.sender, vertex_features, &st.sender, false)?;
        let r = pointconv_forward(g, store, &self.receiver, s, &st.receiver, true)?;
        pointconv_forward(g, store, &self.vertex, r, &st.vertex, true)
    }
}

/// Interpolates coarse features onto fine query points through a
/// same-object kNN PointConv.
#[allow(clippy::too_many_arguments)]
pub fn upsample_interpolate<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &PointConvLayer,
    coarse: &[Vec3],
    coarse_ids: &[u32],
    coarse_features: Var,
    fine: &[Vec3],
    fine_ids: &[u32],
    k: usize,
) -> Result<Var> {
    object_pointconv(g, store, layer, coarse_features, coarse, coarse_ids, fine, fine_ids, k)
}

#[cfg(test)]
mod tests {
    use super::super::layer::tests::{naive_pointconv, random_features, random_points};
    use super::super::layer::C_MID;
    use super::*;
    use crate::autodiff::Tensor;
    use crate::geometry::{find_interaction_points, FaceSampling, Neighborhood};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(f: impl FnOnce(&mut Graph<f64>) -> Result<Var>) -> Tensor<f64> {
        let mut g = Graph::new();
        let v = f(&mut g).unwrap();
        g.value(v).clone()
    }

    fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn two_objects(rng: &mut impl Rng, n: usize, gap: f64) -> (Vec<Vec3>, Vec<u32>) {
        let mut p = random_points(rng, n);
        let ids: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        for (q, &o) in p.iter_mut().zip(&ids) {
            *q *= 0.3;
            q.x += if o == 0 { -0.3 - gap / 2.0 } else { 0.3 + gap / 2.0 };
        }
        (p, ids)
    }

    #[test]
    fn object_conv_ignores_xy_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "o", 5, 6, C_MID, true, 0.5).unwrap();
        let (p, ids) = two_objects(&mut rng, 40, 0.05);
        let x = random_features(&mut rng, 40, 5);
        let shift = Vec3::new(3.25, -7.5, 0.0);
        let moved: Vec<Vec3> = p.iter().map(|v| v + shift).collect();
        let a = run(|g| {
            let xv = g.constant(x.clone())?;
            object_pointconv(g, &store, &layer, xv, &p, &ids, &p, &ids, 8)
        });
        let b = run(|g| {
            let xv = g.constant(x.clone())?;
            object_pointconv(g, &store, &layer, xv, &moved, &ids, &moved, &ids, 8)
        });
        assert!(max_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn relational_single_object_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "r", 4, 4, C_MID, false, 0.1).unwrap();
        let p = random_points(&mut rng, 30);
        let ids = vec![0; 30];
        let y = run(|g| {
            let xv = g.constant(random_features(&mut rng, 30, 4))?;
            relational_pointconv_pc(g, &store, &layer, xv, &p, &ids, 8, 0.5)
        });
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn relational_output_masked_by_cross_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "r", 4, 3, C_MID, false, 0.1).unwrap();
        let (p, ids) = two_objects(&mut rng, 200, 0.02);
        let r = 0.15;
        let x = random_features(&mut rng, 200, 4);
        let y = run(|g| {
            let xv = g.constant(x.clone())?;
            relational_pointconv_pc(g, &store, &layer, xv, &p, &ids, 8, r)
        });
        let mut touched = 0;
        for i in 0..200 {
            let has = (0..200).any(|j| ids[j] != ids[i] && (p[i] - p[j]).norm() <= r);
            let nonzero = y.row(i).iter().any(|v| *v != 0.0);
            assert_eq!(has, nonzero, "point {i}");
            touched += has as usize;
        }
        assert!(touched > 0 && touched < 200);
    }

    #[test]
    fn relational_duplicates_do_not_change_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "r", 3, 3, C_MID, false, 0.2).unwrap();
        let (p, ids) = two_objects(&mut rng, 20, 0.0);
        let x = random_features(&mut rng, 20, 3);
        // duplicate every point of object 1 in place
        let mut p2 = p.clone();
        let mut ids2 = ids.clone();
        let mut rows: Vec<Vec<f64>> = (0..20).map(|i| x.row(i).to_vec()).collect();
        for i in 0..20 {
            if ids[i] == 1 {
                p2.push(p[i]);
                ids2.push(1);
                rows.push(x.row(i).to_vec());
            }
        }
        let x2 = Tensor::from_rows(&rows).unwrap();
        let a = run(|g| {
            let xv = g.constant(x.clone())?;
            relational_pointconv_pc(g, &store, &layer, xv, &p, &ids, 64, 0.4)
        });
        let b = run(|g| {
            let xv = g.constant(x2.clone())?;
            relational_pointconv_pc(g, &store, &layer, xv, &p2, &ids2, 128, 0.4)
        });
        for i in 0..20 {
            for c in 0..3 {
                assert!((a.at(i, c) - b.at(i, c)).abs() < 1e-12);
            }
        }
    }

    fn face_pair_scene() -> (TriMesh, InteractionPointSet) {
        let mesh = crate::geometry::offset_face_pair(0.02);
        let ips = find_interaction_points(&mesh, 16, 0.1, FaceSampling::Uniform { seed: 3 }).unwrap();
        assert!(!ips.is_empty());
        (mesh, ips)
    }

    #[test]
    fn sender_features_with_zero_vertex_features_match_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (mesh, ips) = face_pair_scene();
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "s", 4, 5, C_MID, true, 0.1).unwrap();
        let x = Tensor::zeros(vec![mesh.vertices.len(), 4]);
        let y = run(|g| {
            let xv = g.constant(x.clone())?;
            mesh_sender_features(g, &store, &layer, &mesh, xv, &ips)
        });
        let st = Stencil::new(&ips.sender_points, &mesh.vertices, sender_vertex_neighborhood(&mesh, &ips)).unwrap();
        assert!(st.nbhd.iter().all(|n| n.len() == 3));
        let oracle = naive_pointconv(&store, &layer, &x, &st, false);
        let mut any = false;
        for (r, row) in oracle.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((y.at(r, c) - v).abs() < 1e-12);
                any |= *v != 0.0;
            }
        }
        assert!(any, "embedding alone gives a response");
    }

    #[test]
    fn sender_features_follow_rigid_face_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (mesh, ips) = face_pair_scene();
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "s", 3, 3, C_MID, true, 0.1).unwrap();
        let x = random_features(&mut rng, mesh.vertices.len(), 3);
        let t = Vec3::new(1.5, -2.0, 0.75);
        let moved_mesh = mesh.with_vertices(mesh.vertices.iter().map(|v| v + t).collect()).unwrap();
        let mut moved_ips = ips.clone();
        moved_ips.sender_points.iter_mut().for_each(|p| *p += t);
        let a = run(|g| {
            let xv = g.constant(x.clone())?;
            mesh_sender_features(g, &store, &layer, &mesh, xv, &ips)
        });
        let b = run(|g| {
            let xv = g.constant(x.clone())?;
            mesh_sender_features(g, &store, &layer, &moved_mesh, xv, &moved_ips)
        });
        assert!(max_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn receiver_and_vertex_match_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (mesh, ips) = face_pair_scene();
        let mut store = ParamStore::new();
        let recv = PointConvLayer::new(&mut store, &mut rng, "r", 3, 4, C_MID, false, 0.1).unwrap();
        let vert = PointConvLayer::new(&mut store, &mut rng, "v", 4, 2, C_MID, true, 0.1).unwrap();
        let xs = random_features(&mut rng, ips.sender_points.len(), 3);
        let yr = run(|g| {
            let xv = g.constant(xs.clone())?;
            mesh_receiver_features(g, &store, &recv, &ips, xv, 8, 0.1)
        });
        let st = Stencil::new(&ips.receiver_points, &ips.sender_points, receiver_neighborhood(&ips, 8, 0.1)).unwrap();
        let want = naive_pointconv(&store, &recv, &xs, &st, true);
        for (r, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((yr.at(r, c) - v).abs() < 1e-12);
            }
        }
        let yv = run(|g| {
            let xv = g.constant(yr.clone())?;
            mesh_vertex_update(g, &store, &vert, &mesh, &ips, xv)
        });
        let sv = Stencil::new(&mesh.vertices, &ips.receiver_points, vertex_surface_neighborhood(&mesh, &ips)).unwrap();
        let want = naive_pointconv(&store, &vert, &yr, &sv, true);
        for (r, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((yv.at(r, c) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn receiver_without_senders_is_zero_and_single_sender_mean_equals_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "r", 2, 2, C_MID, false, 0.1).unwrap();
        let ips = InteractionPointSet {
            sender_points: vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)],
            sender_face: vec![0, 1],
            sender_object: vec![0, 1],
            receiver_points: vec![Vec3::new(0.0, 0.0, 0.05), Vec3::new(9.0, 0.0, 0.0)],
            receiver_face: vec![1, 0],
            receiver_object: vec![1, 0],
            pairs: vec![(0, 0)],
        };
        let x = random_features(&mut rng, 2, 2);
        let mean = run(|g| {
            let xv = g.constant(x.clone())?;
            mesh_receiver_features(g, &store, &layer, &ips, xv, 4, 0.1)
        });
        let st = Stencil::new(&ips.receiver_points, &ips.sender_points, receiver_neighborhood(&ips, 4, 0.1)).unwrap();
        assert_eq!(st.nbhd.count(0), 1);
        let sum = run(|g| {
            let xv = g.constant(x.clone())?;
            pointconv_forward(g, &store, &layer, xv, &st, false)
        });
        assert_eq!(mean.row(0), sum.row(0));
        assert!(mean.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vertex_update_duplicate_points_average_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "v", 3, 3, C_MID, true, 0.2).unwrap();
        let mesh = TriMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(5.0, 5.0, 5.0)],
            vec![[0, 1, 2]],
            vec![0; 4],
        )
        .unwrap();
        let p = Vec3::new(0.2, 0.2, 0.0);
        let one = InteractionPointSet {
            receiver_points: vec![p],
            receiver_face: vec![0],
            receiver_object: vec![0],
            ..Default::default()
        };
        let two = InteractionPointSet {
            receiver_points: vec![p, p],
            receiver_face: vec![0, 0],
            receiver_object: vec![0, 0],
            ..Default::default()
        };
        let x1 = random_features(&mut rng, 1, 3);
        let x2 = Tensor::from_rows(&[x1.row(0).to_vec(), x1.row(0).to_vec()]).unwrap();
        let a = run(|g| {
            let xv = g.constant(x1.clone())?;
            mesh_vertex_update(g, &store, &layer, &mesh, &one, xv)
        });
        let b = run(|g| {
            let xv = g.constant(x2.clone())?;
            mesh_vertex_update(g, &store, &layer, &mesh, &two, xv)
        });
        assert!(max_diff(&a, &b) < 1e-12);
        // vertex 3 belongs to no face
        assert!(a.row(3).iter().all(|v| *v == 0.0));
        // single incident point: no averaging
        let st = Stencil::new(&mesh.vertices, &one.receiver_points, Neighborhood::from_lists(vec![
            vec![0],
            vec![0],
            vec![0],
            vec![],
        ]))
        .unwrap();
        let want = naive_pointconv(&store, &layer, &x1, &st, false);
        assert!((a.at(0, 0) - want[0][0]).abs() < 1e-12);
    }

    #[test]
    fn upsample_from_one_coarse_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut store = ParamStore::new();
        let layer = PointConvLayer::new(&mut store, &mut rng, "u", 3, 3, C_MID, true, 0.5).unwrap();
        let fine = random_points(&mut rng, 12);
        let ids = vec![0; 12];
        let coarse = vec![Vec3::new(0.1, 0.0, 0.0)];
        let x = random_features(&mut rng, 1, 3);
        let y = run(|g| {
            let xv = g.constant(x.clone())?;
            upsample_interpolate(g, &store, &layer, &coarse, &[0], xv, &fine, &ids, 4)
        });
        assert_eq!(y.rows(), 12);
        let st = Stencil::new(&fine, &coarse, Neighborhood::from_lists(vec![vec![0]; 12])).unwrap();
        let want = naive_pointconv(&store, &layer, &x, &st, false);
        for (r, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((y.at(r, c) - v).abs() < 1e-12);
            }
        }
    }
}
