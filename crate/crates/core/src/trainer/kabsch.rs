//! Least-squares rigid alignment.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};

use crate::{Error, Result, Vec3};

/// Proper rotation and translation minimizing `sum |R src_i + t - dst_i|^2`.
///
/// Fails with [`Error::RankDeficient`] when the source points are
/// coincident or collinear.
pub fn kabsch_fit(src: &[Vec3], dst: &[Vec3]) -> Result<Isometry3<f64>> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!("{} source points, {} targets", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::RankDeficient);
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - cs, d - cd);
        h += a * b.transpose();
        spread += a * a.transpose();
    }
    // the source must span a plane; its scatter needs two nonzero
    // eigenvalues
    let ev = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = ev.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if !(ev[1] > 1e-12 * ev[2].max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient);
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.ok_or(Error::RankDeficient)?, svd.v_t.ok_or(Error::RankDeficient)?);
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let d = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, sign));
    let r = v * d * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    if !t.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("kabsch"));
    }
    Ok(Isometry3::from_parts(Translation3::from(t), rot))
}

/// Root-mean-square distance between `iso * src` and `dst`.
pub fn rmsd(iso: &Isometry3<f64>, src: &[Vec3], dst: &[Vec3]) -> f64 {
    let s: f64 = src
        .iter()
        .zip(dst)
        .map(|(a, b)| (iso.transform_point(&(*a).into()).coords - b).norm_squared())
        .sum();
    (s / src.len().max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn cloud() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.2, 0.0),
            Vec3::new(0.3, 1.1, 0.1),
            Vec3::new(-0.4, 0.5, 0.9),
            Vec3::new(0.7, -0.6, 0.4),
        ]
    }

    #[test]
    fn identity_for_equal_sets() {
        let p = cloud();
        let iso = kabsch_fit(&p, &p).unwrap();
        assert!(iso.translation.vector.norm() < 1e-12);
        assert!(iso.rotation.angle() < 1e-7);
    }

    #[test]
    fn quarter_turn_and_shift() {
        let p = cloud();
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let q: Vec<Vec3> = p.iter().map(|v| rot * v + Vec3::new(1.0, 0.0, 0.0)).collect();
        let iso = kabsch_fit(&p, &q).unwrap();
        assert!(rmsd(&iso, &p, &q) < 1e-8);
        assert!((iso.translation.vector - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn mirrored_target_still_gives_a_rotation() {
        // planar points mirrored through the plane x = 0 tempt a reflection
        let p = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(2.0, 2.0, 0.0),
            Vec3::new(0.5, 3.0, 0.0),
        ];
        let q: Vec<Vec3> = p.iter().map(|v| Vec3::new(-v.x, v.y, v.z + 1e-3 * v.x)).collect();
        let iso = kabsch_fit(&p, &q).unwrap();
        let r = iso.rotation.to_rotation_matrix();
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_is_rank_deficient() {
        let p: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(kabsch_fit(&p, &p), Err(Error::RankDeficient)));
        let same = vec![Vec3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(kabsch_fit(&same, &same), Err(Error::RankDeficient)));
        assert!(matches!(kabsch_fit(&p[..2], &p[..2]), Err(Error::RankDeficient)));
    }

    proptest! {
        #[test]
        fn random_motions_round_trip(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.1f64..3.1,
            t in prop::array::uniform3(-5.0f64..5.0),
            pts in prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 4..30),
        ) {
            let axis = Vec3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let src: Vec<Vec3> = pts.into_iter().map(Vec3::from).collect();
            let dst: Vec<Vec3> = src.iter().map(|v| rot * v + Vec3::from(t)).collect();
            match kabsch_fit(&src, &dst) {
                Ok(iso) => prop_assert!(rmsd(&iso, &src, &dst) < 1e-8),
                Err(Error::RankDeficient) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
