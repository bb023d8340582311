//! Voxel-grid subsampling and clustering. The grid is anchored at the
//! coordinate origin.

use std::collections::BTreeMap;

use crate::{Error, Result, Vec3};

pub type VoxelKey = [i64; 3];

pub fn voxel_key(p: &Vec3, voxel: f64) -> VoxelKey {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

fn check_voxel(voxel: f64) -> Result<()> {
    if voxel.is_finite() && voxel > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("voxel size must be positive"))
    }
}

fn downsample_keyed<K: Ord>(points: &[Vec3], voxel: f64, key: impl Fn(usize) -> K) -> Vec<usize> {
    let mut cells: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for i in 0..points.len() {
        cells.entry(key(i)).or_default().push(i);
    }
    // distances this close count as ties, so rounding noise from a
    // translated copy of the cloud cannot change the pick
    let tie = 1e-9 * voxel * voxel;
    let mut kept: Vec<usize> = cells
        .values()
        .map(|members| {
            let centroid = members.iter().map(|&i| points[i]).sum::<Vec3>() / members.len() as f64;
            let d = |i: usize| (points[i] - centroid).norm_squared();
            // members are ascending, so the first within the tie band wins
            let best = members.iter().map(|&i| d(i)).fold(f64::INFINITY, f64::min);
            *members
                .iter()
                .find(|&&i| d(i) <= best + tie)
                .expect("occupied voxel has members")
        })
        .collect();
    kept.sort_unstable();
    kept
}

/// Keeps one point per occupied voxel: the point nearest the centroid of
/// the voxel's points, lowest index on ties (within `1e-9 voxel^2`).
/// Output is ascending.
pub fn grid_downsample(points: &[Vec3], voxel: f64) -> Result<Vec<usize>> {
    check_voxel(voxel)?;
    if points.is_empty() {
        return Err(Error::EmptySource);
    }
    Ok(downsample_keyed(points, voxel, |i| voxel_key(&points[i], voxel)))
}

/// [`grid_downsample`] with the object id as part of the voxel key, so
/// touching objects keep their own representatives.
pub fn grid_downsample_by_object(points: &[Vec3], object_ids: &[u32], voxel: f64) -> Result<Vec<usize>> {
    check_voxel(voxel)?;
    if points.is_empty() {
        return Err(Error::EmptySource);
    }
    Ok(downsample_keyed(points, voxel, |i| (object_ids[i], voxel_key(&points[i], voxel))))
}

/// Result of merging points that share an (object, voxel) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec3>,
    pub object_ids: Vec<u32>,
    /// Cluster index of every input point.
    pub assignment: Vec<usize>,
}

/// Vertex clustering: every (object, voxel) cell becomes its centroid.
/// Clusters are numbered by their lowest member index.
pub fn cluster_by_object(points: &[Vec3], object_ids: &[u32], voxel: f64) -> Result<Clustering> {
    check_voxel(voxel)?;
    let mut cell_of: BTreeMap<(u32, VoxelKey), usize> = BTreeMap::new();
    let mut out = Clustering {
        centroids: Vec::new(),
        object_ids: Vec::new(),
        assignment: Vec::with_capacity(points.len()),
    };
    let mut counts = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = (object_ids[i], voxel_key(p, voxel));
        let c = *cell_of.entry(key).or_insert_with(|| {
            out.centroids.push(Vec3::zeros());
            out.object_ids.push(object_ids[i]);
            counts.push(0usize);
            out.centroids.len() - 1
        });
        out.centroids[c] += p;
        counts[c] += 1;
        out.assignment.push(c);
    }
    for (c, n) in out.centroids.iter_mut().zip(&counts) {
        *c /= *n as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn two_occupied_voxels() {
        let pts = vec![
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(0.2, 0.2, 0.2),
            Vec3::new(1.1, 0.1, 0.1),
        ];
        let kept = grid_downsample(&pts, 0.5).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept[0] < 2 && kept[1] == 2);
    }

    #[test]
    fn single_point_and_huge_voxel() {
        assert_eq!(grid_downsample(&[Vec3::new(0.3, 0.2, 0.1)], 0.1).unwrap(), vec![0]);
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(0.01 * i as f64, 0.0, 0.0)).collect();
        assert_eq!(grid_downsample(&pts, 10.0).unwrap().len(), 1);
        assert!(grid_downsample(&pts, 0.0).is_err());
        assert!(grid_downsample(&[], 1.0).is_err());
    }

    #[test]
    fn by_object_keeps_touching_objects_apart() {
        let pts = vec![Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.12, 0.1, 0.1)];
        assert_eq!(grid_downsample(&pts, 1.0).unwrap().len(), 1);
        assert_eq!(grid_downsample_by_object(&pts, &[0, 1], 1.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn clustering_merges_to_centroid() {
        let pts = vec![
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(0.3, 0.1, 0.1),
            Vec3::new(2.1, 0.1, 0.1),
        ];
        let c = cluster_by_object(&pts, &[0, 0, 0], 1.0).unwrap();
        assert_eq!(c.centroids.len(), 2);
        assert!((c.centroids[0] - Vec3::new(0.2, 0.1, 0.1)).norm() < 1e-15);
        assert_eq!(c.assignment, vec![0, 0, 1]);
    }

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    proptest! {
        #[test]
        fn one_point_per_voxel(seed in 0u64..500, voxel in 0.05f64..1.0) {
            let pts = cloud(seed, 200);
            let kept = grid_downsample(&pts, voxel).unwrap();
            let occupied: HashSet<_> = pts.iter().map(|p| voxel_key(p, voxel)).collect();
            let kept_keys: HashSet<_> = kept.iter().map(|&i| voxel_key(&pts[i], voxel)).collect();
            prop_assert_eq!(kept.len(), occupied.len());
            prop_assert_eq!(kept_keys.len(), kept.len());
            prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn equivariant_under_lattice_translation(seed in 0u64..500, a in -4i32..4, b in -4i32..4, c in -4i32..4) {
            let voxel = 0.25;
            let pts = cloud(seed, 150);
            let t = Vec3::new(a as f64, b as f64, c as f64) * voxel;
            let moved: Vec<Vec3> = pts.iter().map(|p| p + t).collect();
            prop_assert_eq!(grid_downsample(&pts, voxel).unwrap(), grid_downsample(&moved, voxel).unwrap());
        }
    }
}
