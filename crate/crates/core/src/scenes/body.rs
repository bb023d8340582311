//! Rigid body shapes, surface sampling and mesh conversion.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::TriMesh;
use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box.
    Box { half_extents: [f64; 3] },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { radius } => *radius > 0.0 && radius.is_finite(),
            Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0 && h.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate shape {self:?}")))
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
            Shape::Box { half_extents: [a, b, c] } => 8.0 * (a * b + b * c + a * c),
        }
    }

    /// Distance from the center to the lowest point.
    pub fn bottom(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents } => half_extents[2],
        }
    }
}

/// A translating rigid body. Nothing rotates: there is no friction, and
/// boxes stay axis-aligned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidBody {
    pub shape: Shape,
    pub position: Vec3,
    pub velocity: Vec3,
    pub mass: f64,
    pub restitution: f64,
}

impl RigidBody {
    pub fn sphere(radius: f64, position: Vec3, velocity: Vec3) -> Self {
        Self {
            shape: Shape::Sphere { radius },
            position,
            velocity,
            mass: radius.powi(3),
            restitution: 1.0,
        }
    }

    pub fn cuboid(half_extents: Vec3, position: Vec3, velocity: Vec3) -> Self {
        Self {
            shape: Shape::Box {
                half_extents: half_extents.into(),
            },
            position,
            velocity,
            mass: 8.0 * half_extents.x * half_extents.y * half_extents.z,
            restitution: 1.0,
        }
    }

    pub fn with_restitution(mut self, e: f64) -> Self {
        self.restitution = e;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::invalid("mass must be positive"));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::invalid("restitution must lie in [0, 1]"));
        }
        if !self.position.iter().chain(self.velocity.iter()).all(|c| c.is_finite()) {
            return Err(Error::invalid("non-finite body state"));
        }
        Ok(())
    }
}

/// Uniform area-weighted samples on the surface in the body frame.
pub fn sample_surface(shape: &Shape, count: usize, seed: u64) -> Result<Vec<Vec3>> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    match *shape {
        Shape::Sphere { radius } => {
            while out.len() < count {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let n2 = v.norm_squared();
                if n2 > 1e-6 && n2 <= 1.0 {
                    out.push(v * (radius / n2.sqrt()));
                }
            }
        }
        Shape::Box { half_extents: h } => {
            // face pairs normal to x, y, z
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total: f64 = areas.iter().sum();
            for _ in 0..count {
                let mut pick = rng.gen_range(0.0..total);
                let mut axis = 2;
                for (k, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut p = Vec3::zeros();
                for k in 0..3 {
                    p[k] = if k == axis {
                        sign * h[k]
                    } else {
                        rng.gen_range(-h[k]..=h[k])
                    };
                }
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Number of samples for a target density in points per unit area.
pub fn samples_for_density(shape: &Shape, density: f64) -> Result<usize> {
    if !(density > 0.0) {
        return Err(Error::invalid("density must be positive"));
    }
    Ok((shape.surface_area() * density).ceil() as usize)
}

/// Body-frame triangle mesh: icosphere at `level` for spheres, 12
/// triangles for boxes.
pub fn body_to_mesh(shape: &Shape, level: usize) -> TriMesh {
    match *shape {
        Shape::Sphere { radius } => icosphere(radius, level),
        Shape::Box { half_extents } => box_mesh(Vec3::from(half_extents)),
    }
}

/// Subdivided icosahedron centred at the origin, object id 0.
pub fn icosphere(radius: f64, level: usize) -> TriMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let n = verts.len();
    TriMesh::new(verts.into_iter().map(|v| v * radius).collect(), tris, vec![0; n]).expect("icosphere is valid")
}

/// Axis-aligned box centred at the origin with outward-wound triangles,
/// object id 0.
pub fn box_mesh(half: Vec3) -> TriMesh {
    let verts: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -half.x } else { half.x },
                if i & 2 == 0 { -half.y } else { half.y },
                if i & 4 == 0 { -half.z } else { half.z },
            )
        })
        .collect();
    let tris = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    TriMesh::new(verts, tris, vec![0; 8]).expect("box is valid")
}
