//! Per-frame resolution hierarchy: point sets, carried indices and the
//! stencils every block runs on.

use std::iter;

use super::config::{InputMode, ModelConfig};
use crate::geometry::{
    cluster_by_object, find_interaction_points, grid_downsample_by_object, mesh_vertex_neighborhood,
    nearest_same_object, FaceSampling, InteractionPointSet, TriMesh,
};
use crate::pointconv::{object_stencil, relational_stencil, MeshStencils, Stencil};
use crate::{Error, Result, Vec3};

/// Seed for face sampling during interaction-point search. Fixed so the
/// same mesh always yields the same interaction points.
pub const FACE_SAMPLING_SEED: u64 = 0x1f_ace5;

/// Cross-object geometry at one level.
#[derive(Clone, Debug, PartialEq)]
pub enum RelationalGeometry {
    Point(Stencil),
    Mesh(MeshStencils),
}

/// One resolution level.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub positions: Vec<Vec3>,
    pub object_ids: Vec<u32>,
    /// Levels below the first: for each point, the nearest point of the
    /// finer level, used for residuals.
    pub carried: Vec<usize>,
    /// Levels below the first: stencil from the finer level onto this one.
    pub down: Option<Stencil>,
    /// Same-object stencil within this level (stem and bottleneck only).
    pub same: Option<Stencil>,
    pub relational: Option<RelationalGeometry>,
    /// Levels below the first: stencil from this level onto the finer
    /// level's points.
    pub up: Option<Stencil>,
    /// For each point of the finer level, its nearest point here.
    pub up_carried: Vec<usize>,
}

impl Level {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// The whole hierarchy for one input frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGeometry {
    pub levels: Vec<Level>,
    /// Interaction points found at full resolution (mesh input, faces on).
    pub interaction: Option<InteractionPointSet>,
    /// Levels at which cross-object neighborhoods were built.
    pub cross_object_levels: Vec<usize>,
}

fn mesh_stem(mesh: &TriMesh) -> Result<Stencil> {
    let adj = mesh_vertex_neighborhood(mesh);
    let nb = crate::geometry::Neighborhood::from_lists(
        adj.iter()
            .enumerate()
            .map(|(v, n)| iter::once(v).chain(n.iter().copied()).collect::<Vec<_>>()),
    );
    Stencil::new(&mesh.vertices, &mesh.vertices, nb)
}

/// Builds every level for `positions` (mesh vertices when `triangles` is
/// given).
pub fn build_geometry(
    config: &ModelConfig,
    positions: &[Vec3],
    object_ids: &[u32],
    triangles: Option<&[[usize; 3]]>,
) -> Result<SceneGeometry> {
    if positions.is_empty() {
        return Err(Error::EmptySource);
    }
    if positions.len() != object_ids.len() {
        return Err(Error::invalid("positions and object ids differ in length"));
    }
    let mesh = match (config.input, triangles) {
        (InputMode::Mesh, Some(t)) => Some(TriMesh::new(positions.to_vec(), t.to_vec(), object_ids.to_vec())?),
        (InputMode::Mesh, None) => return Err(Error::invalid("mesh input needs triangles")),
        (InputMode::PointCloud, _) => None,
    };
    let levels_n = config.levels();
    let radii = &config.schedule.level_radii;
    let k = config.k;
    let mut out = SceneGeometry {
        levels: Vec::with_capacity(levels_n + 1),
        interaction: None,
        cross_object_levels: Vec::new(),
    };

    // full resolution
    let stem = match &mesh {
        Some(m) => mesh_stem(m)?,
        None => object_stencil(positions, object_ids, positions, object_ids, k)?,
    };
    let relational = match &mesh {
        Some(m) if config.faces => {
            let ips = find_interaction_points(
                m,
                config.samples_per_face,
                radii[0],
                FaceSampling::Uniform {
                    seed: FACE_SAMPLING_SEED,
                },
            )?;
            let st = MeshStencils::new(m, &ips, k, radii[0])?;
            out.interaction = Some(ips);
            RelationalGeometry::Mesh(st)
        }
        _ => RelationalGeometry::Point(relational_stencil(positions, object_ids, k, radii[0])?),
    };
    out.cross_object_levels.push(0);
    out.levels.push(Level {
        positions: positions.to_vec(),
        object_ids: object_ids.to_vec(),
        carried: Vec::new(),
        down: None,
        same: Some(stem),
        relational: Some(relational),
        up: None,
        up_carried: Vec::new(),
    });

    for l in 1..=levels_n {
        let voxel = config.schedule.level_voxels[l - 1];
        let prev = &out.levels[l - 1];
        let (pos, ids, carried) = if mesh.is_some() {
            let c = cluster_by_object(&prev.positions, &prev.object_ids, voxel)?;
            let carried = nearest_same_object(&prev.positions, &prev.object_ids, &c.centroids, &c.object_ids)?;
            (c.centroids, c.object_ids, carried)
        } else {
            let kept = grid_downsample_by_object(&prev.positions, &prev.object_ids, voxel)?;
            let pos: Vec<Vec3> = kept.iter().map(|&i| prev.positions[i]).collect();
            let ids: Vec<u32> = kept.iter().map(|&i| prev.object_ids[i]).collect();
            (pos, ids, kept)
        };
        let down = object_stencil(&prev.positions, &prev.object_ids, &pos, &ids, k)?;
        let up = object_stencil(&pos, &ids, &prev.positions, &prev.object_ids, k)?;
        let up_carried = nearest_same_object(&pos, &ids, &prev.positions, &prev.object_ids)?;
        let same = (l == levels_n && config.bottleneck_blocks > 0)
            .then(|| object_stencil(&pos, &ids, &pos, &ids, k))
            .transpose()?;
        let relational = match config.input {
            InputMode::PointCloud => {
                out.cross_object_levels.push(l);
                Some(RelationalGeometry::Point(relational_stencil(&pos, &ids, k, radii[l])?))
            }
            InputMode::Mesh => None,
        };
        out.levels.push(Level {
            positions: pos,
            object_ids: ids,
            carried,
            down: Some(down),
            same,
            relational,
            up: Some(up),
            up_carried,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::icosphere;
    use crate::unet::config::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut impl Rng, n: usize) -> (Vec<Vec3>, Vec<u32>) {
        let p = (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { -0.25 } else { 0.25 };
                Vec3::new(c + rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(0.0..0.4))
            })
            .collect();
        (p, (0..n).map(|i| (i % 2) as u32).collect())
    }

    #[test]
    fn levels_shrink_and_carry_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let (p, ids) = cloud(&mut rng, 300);
        let cfg = ModelConfig::desk();
        let geo = build_geometry(&cfg, &p, &ids, None).unwrap();
        assert_eq!(geo.levels.len(), 3);
        for l in 1..geo.levels.len() {
            let (fine, coarse) = (&geo.levels[l - 1], &geo.levels[l]);
            assert!(coarse.len() < fine.len());
            for (q, &c) in coarse.carried.iter().enumerate() {
                assert_eq!(fine.positions[c], coarse.positions[q]);
                assert_eq!(fine.object_ids[c], coarse.object_ids[q]);
            }
            assert_eq!(coarse.up.as_ref().unwrap().query_count(), fine.len());
            assert_eq!(coarse.up_carried.len(), fine.len());
        }
        assert_eq!(geo.cross_object_levels, vec![0, 1, 2]);
        assert!(geo.levels[2].same.is_some() && geo.levels[1].same.is_none());
    }

    fn two_spheres() -> TriMesh {
        let a = icosphere(0.2, 1);
        let mut b = icosphere(0.2, 1);
        b.vertices.iter_mut().for_each(|v| v.x += 0.45);
        b.object_ids.iter_mut().for_each(|o| *o = 1);
        TriMesh::merge(&[a, b])
    }

    #[test]
    fn mesh_variant_keeps_cross_object_search_at_full_resolution() {
        let m = two_spheres();
        for faces in [true, false] {
            let cfg = ModelConfig {
                input: InputMode::Mesh,
                faces,
                ..ModelConfig::desk()
            };
            let geo = build_geometry(&cfg, &m.vertices, &m.object_ids, Some(&m.triangles)).unwrap();
            assert_eq!(geo.cross_object_levels, vec![0]);
            assert!(geo.levels[1..].iter().all(|l| l.relational.is_none()));
            assert_eq!(geo.interaction.is_some(), faces);
            // stem neighbors include the vertex itself
            let stem = geo.levels[0].same.as_ref().unwrap();
            assert!((0..m.vertices.len()).all(|v| stem.nbhd.neighbors(v)[0] == v));
        }
    }

    #[test]
    fn mesh_input_needs_triangles() {
        let cfg = ModelConfig {
            input: InputMode::Mesh,
            ..ModelConfig::desk()
        };
        let m = two_spheres();
        assert!(build_geometry(&cfg, &m.vertices, &m.object_ids, None).is_err());
        assert!(matches!(build_geometry(&cfg, &[], &[], None), Err(Error::EmptySource)));
    }
}
