//! Event-driven rigid-body integrator.
//!
//! Between events every body follows an exact constant-acceleration
//! trajectory. Within a step, the earliest contact is located on the gap
//! function by sampling and bisection, all bodies advance to it, an impulse
//! is applied, and the search repeats for the rest of the step.

use serde::{Deserialize, Serialize};

use super::body::{RigidBody, Shape};
use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub dt: f64,
    pub gravity: [f64; 3],
    /// Ground plane at z = 0.
    pub ground: bool,
    /// Separating speeds below this after a resting-type contact become zero.
    pub rest_speed: f64,
    pub max_events_per_step: usize,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 60.0,
            gravity: [0.0, 0.0, -9.8],
            ground: true,
            rest_speed: 0.05,
            max_events_per_step: 64,
        }
    }
}

const CONTACT_TOL: f64 = 1e-7;
const REST_TOL: f64 = 1e-6;
const SEARCH_SAMPLES: usize = 32;
const BISECTIONS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Contact {
    Ground(usize),
    Pair(usize, usize),
}

/// Counters for the impulses applied during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EventStats {
    pub impulses: usize,
    pub capped_steps: usize,
}

pub struct Simulator {
    pub bodies: Vec<RigidBody>,
    pub config: PhysicsConfig,
    accel: Vec<Vec3>,
    supported: Vec<bool>,
    pub stats: EventStats,
}

impl Simulator {
    pub fn new(bodies: Vec<RigidBody>, config: PhysicsConfig) -> Result<Self> {
        if !(config.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        for b in &bodies {
            b.validate()?;
        }
        let n = bodies.len();
        let sim = Self {
            bodies,
            config,
            accel: vec![Vec3::zeros(); n],
            supported: vec![false; n],
            stats: EventStats::default(),
        };
        for i in 0..n {
            if config.ground && sim.ground_gap(i, 0.0) < -CONTACT_TOL {
                return Err(Error::invalid(format!("body {i} starts below the ground")));
            }
            for j in i + 1..n {
                if sim.pair_gap(i, j, 0.0) < -CONTACT_TOL {
                    return Err(Error::Interpenetration(i, j));
                }
            }
        }
        Ok(sim)
    }

    fn gravity(&self) -> Vec3 {
        Vec3::from(self.config.gravity)
    }

    fn pos_at(&self, i: usize, t: f64) -> Vec3 {
        let b = &self.bodies[i];
        b.position + b.velocity * t + self.accel[i] * (0.5 * t * t)
    }

    fn ground_gap(&self, i: usize, t: f64) -> f64 {
        self.pos_at(i, t).z - self.bodies[i].shape.bottom()
    }

    fn pair_gap(&self, i: usize, j: usize, t: f64) -> f64 {
        let (pi, pj) = (self.pos_at(i, t), self.pos_at(j, t));
        shape_gap(&self.bodies[i].shape, &pi, &self.bodies[j].shape, &pj).0
    }

    fn gap(&self, c: Contact, t: f64) -> f64 {
        match c {
            Contact::Ground(i) => self.ground_gap(i, t),
            Contact::Pair(i, j) => self.pair_gap(i, j, t),
        }
    }

    /// Unit normal pointing from the first participant to the second (from
    /// the ground up for ground contacts).
    fn normal(&self, c: Contact) -> Vec3 {
        match c {
            Contact::Ground(_) => Vec3::z(),
            Contact::Pair(i, j) => {
                let (a, b) = (&self.bodies[i], &self.bodies[j]);
                shape_gap(&a.shape, &a.position, &b.shape, &b.position).1
            }
        }
    }

    fn approach_speed(&self, c: Contact) -> f64 {
        let n = self.normal(c);
        match c {
            Contact::Ground(i) => self.bodies[i].velocity.dot(&n),
            Contact::Pair(i, j) => (self.bodies[j].velocity - self.bodies[i].velocity).dot(&n),
        }
    }

    /// Earliest time in `[0, horizon]` at which `c` starts to overlap.
    fn time_of_impact(&self, c: Contact, horizon: f64) -> Option<f64> {
        let g0 = self.gap(c, 0.0);
        if g0 < 0.0 {
            return (self.approach_speed(c) < 0.0).then_some(0.0);
        }
        let mut lo = 0.0;
        for k in 1..=SEARCH_SAMPLES {
            let t = horizon * k as f64 / SEARCH_SAMPLES as f64;
            if self.gap(c, t) < 0.0 {
                let mut hi = t;
                for _ in 0..BISECTIONS {
                    let mid = 0.5 * (lo + hi);
                    if self.gap(c, mid) < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(lo);
            }
            lo = t;
        }
        None
    }

    fn candidates(&self) -> Vec<Contact> {
        let n = self.bodies.len();
        let mut out = Vec::new();
        for i in 0..n {
            if self.config.ground && !self.supported[i] {
                out.push(Contact::Ground(i));
            }
            for j in i + 1..n {
                if !(self.supported[i] && self.supported[j]) {
                    out.push(Contact::Pair(i, j));
                }
            }
        }
        out
    }

    fn advance(&mut self, t: f64) {
        for i in 0..self.bodies.len() {
            let p = self.pos_at(i, t);
            let a = self.accel[i];
            let b = &mut self.bodies[i];
            b.position = p;
            b.velocity += a * t;
        }
    }

    fn box_rests_on(&self, top: usize, below: usize) -> bool {
        let (Shape::Box { half_extents: ht }, Shape::Box { half_extents: hb }) =
            (self.bodies[top].shape, self.bodies[below].shape)
        else {
            return false;
        };
        let (t, b) = (&self.bodies[top], &self.bodies[below]);
        let d = t.position - b.position;
        let overlap_xy = (0..2).all(|k| d[k].abs() < ht[k] + hb[k]);
        overlap_xy
            && (d.z - (ht[2] + hb[2])).abs() <= CONTACT_TOL.max(REST_TOL)
            && (t.velocity.z - b.velocity.z).abs() <= REST_TOL
    }

    fn update_support(&mut self) {
        let n = self.bodies.len();
        self.supported = vec![false; n];
        for i in 0..n {
            if self.config.ground
                && self.ground_gap(i, 0.0).abs() <= REST_TOL
                && self.bodies[i].velocity.z.abs() <= REST_TOL
            {
                self.supported[i] = true;
            }
        }
        loop {
            let mut changed = false;
            for top in 0..n {
                if self.supported[top] {
                    continue;
                }
                if (0..n).any(|b| b != top && self.supported[b] && self.box_rests_on(top, b)) {
                    self.supported[top] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let g = self.gravity();
        for i in 0..n {
            if self.supported[i] {
                self.bodies[i].velocity.z = 0.0;
                self.accel[i] = Vec3::zeros();
            } else {
                self.accel[i] = g;
            }
        }
    }

    fn rest(&mut self, i: usize) {
        self.supported[i] = true;
        self.accel[i] = Vec3::zeros();
        self.bodies[i].velocity.z = 0.0;
    }

    fn resolve(&mut self, c: Contact) {
        let n = self.normal(c);
        let vn = self.approach_speed(c);
        if vn >= 0.0 {
            return;
        }
        self.stats.impulses += 1;
        match c {
            Contact::Ground(i) => {
                let e = self.bodies[i].restitution;
                let after = -e * vn;
                self.bodies[i].velocity += n * (after - vn);
                if after < self.config.rest_speed {
                    self.rest(i);
                }
            }
            Contact::Pair(i, j) => {
                let e = self.bodies[i].restitution.min(self.bodies[j].restitution);
                let vertical = n.z.abs() > 0.99;
                let (lower, upper) = if n.z > 0.0 { (i, j) } else { (j, i) };
                if vertical && self.supported[lower] {
                    // the supported body transmits the impulse to the ground
                    let after = -e * vn;
                    let sign = if upper == j { 1.0 } else { -1.0 };
                    self.bodies[upper].velocity += n * (sign * (after - vn));
                    if after < self.config.rest_speed {
                        self.rest(upper);
                    }
                    return;
                }
                let (mi, mj) = (self.bodies[i].mass, self.bodies[j].mass);
                let jimp = -(1.0 + e) * vn / (1.0 / mi + 1.0 / mj);
                self.bodies[i].velocity -= n * (jimp / mi);
                self.bodies[j].velocity += n * (jimp / mj);
            }
        }
    }

    /// Advances one step of `config.dt`.
    pub fn step(&mut self) -> Result<()> {
        self.update_support();
        let mut left = self.config.dt;
        let mut events = 0;
        while left > 0.0 {
            let hit = self
                .candidates()
                .into_iter()
                .filter_map(|c| self.time_of_impact(c, left).map(|t| (t, c)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match hit {
                Some((t, c)) if events < self.config.max_events_per_step => {
                    self.advance(t);
                    left -= t;
                    self.resolve(c);
                    events += 1;
                }
                Some(_) => {
                    self.stats.capped_steps += 1;
                    self.advance(left);
                    left = 0.0;
                }
                None => {
                    self.advance(left);
                    left = 0.0;
                }
            }
        }
        if self.bodies.iter().any(|b| !b.position.iter().chain(b.velocity.iter()).all(|x| x.is_finite())) {
            return Err(Error::NonFinite("physics step"));
        }
        Ok(())
    }

    /// Kinetic plus gravitational potential energy.
    pub fn energy(&self) -> f64 {
        let g = self.gravity();
        self.bodies
            .iter()
            .map(|b| 0.5 * b.mass * b.velocity.norm_squared() - b.mass * g.dot(&b.position))
            .sum()
    }

    pub fn momentum(&self) -> Vec3 {
        self.bodies.iter().map(|b| b.velocity * b.mass).sum()
    }
}

/// Signed gap between two shapes and the contact normal from the first to
/// the second.
pub(crate) fn shape_gap(a: &Shape, pa: &Vec3, b: &Shape, pb: &Vec3) -> (f64, Vec3) {
    match (*a, *b) {
        (Shape::Sphere { radius: ra }, Shape::Sphere { radius: rb }) => {
            let d = pb - pa;
            let n = d.norm();
            let dir = if n > 0.0 { d / n } else { Vec3::z() };
            (n - ra - rb, dir)
        }
        (Shape::Box { half_extents: ha }, Shape::Box { half_extents: hb }) => {
            let d = pb - pa;
            let (mut best, mut axis) = (f64::NEG_INFINITY, 2);
            for k in 0..3 {
                let s = d[k].abs() - (ha[k] + hb[k]);
                if s > best {
                    best = s;
                    axis = k;
                }
            }
            let mut n = Vec3::zeros();
            n[axis] = if d[axis] >= 0.0 { 1.0 } else { -1.0 };
            (best, n)
        }
        (Shape::Sphere { radius }, Shape::Box { half_extents }) => sphere_box(pa, radius, pb, &half_extents),
        (Shape::Box { half_extents }, Shape::Sphere { radius }) => {
            let (g, n) = sphere_box(pb, radius, pa, &half_extents);
            (g, -n)
        }
    }
}

/// Gap and normal from the sphere towards the box.
fn sphere_box(c: &Vec3, r: f64, b: &Vec3, h: &[f64; 3]) -> (f64, Vec3) {
    let d = c - b;
    let inside = (0..3).all(|k| d[k].abs() < h[k]);
    if inside {
        let (mut depth, mut axis) = (f64::INFINITY, 2);
        for k in 0..3 {
            let m = h[k] - d[k].abs();
            if m < depth {
                depth = m;
                axis = k;
            }
        }
        let mut n = Vec3::zeros();
        n[axis] = if d[axis] >= 0.0 { -1.0 } else { 1.0 };
        return (-depth - r, n);
    }
    let q = Vec3::new(d.x.clamp(-h[0], h[0]), d.y.clamp(-h[1], h[1]), d.z.clamp(-h[2], h[2]));
    let off = d - q;
    let dist = off.norm();
    (dist - r, -off / dist)
}

/// Runs `steps` steps and returns the body states of every frame,
/// starting with the initial one.
pub fn simulate_states(bodies: &[RigidBody], config: PhysicsConfig, steps: usize) -> Result<Vec<Vec<RigidBody>>> {
    let mut sim = Simulator::new(bodies.to_vec(), config)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(sim.bodies.clone());
    for _ in 0..steps {
        sim.step()?;
        out.push(sim.bodies.clone());
    }
    Ok(out)
}
