//! Randomized scenario generators.

use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::body::RigidBody;
use super::format::write_scene;
use super::physics::{shape_gap, PhysicsConfig};
use super::trajectory::{simulate, SurfaceOptions, Trajectory};
use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// One body in ballistic flight, far above the ground.
    Freefall,
    /// Two spheres on a collision course in mid-air.
    Collide,
    /// Two spheres that pass each other with a clear gap.
    Miss,
    /// A box dropped onto a box resting on the ground.
    Stack,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Freefall, Scenario::Collide, Scenario::Miss, Scenario::Stack];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Freefall => "freefall",
            Scenario::Collide => "collide",
            Scenario::Miss => "miss",
            Scenario::Stack => "stack",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Frames per scene including the initial one.
    pub frames: usize,
    pub contact_threshold: f64,
    pub surface: SurfaceOptions,
    pub physics: PhysicsConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            contact_threshold: 0.1,
            surface: SurfaceOptions::default(),
            physics: PhysicsConfig::default(),
        }
    }
}

/// A generated scene and its ground-truth contact label.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scenario: Scenario,
    pub seed: u64,
    pub contact: bool,
    pub contact_threshold: f64,
    pub trajectory: Trajectory,
}

fn random_unit_xy(rng: &mut impl Rng) -> Vec3 {
    let a = rng.gen_range(0.0..TAU);
    Vec3::new(a.cos(), a.sin(), 0.0)
}

fn freefall(rng: &mut impl Rng) -> Vec<RigidBody> {
    let pos = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(6.0..7.0));
    let vel = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..1.0));
    let body = if rng.gen::<bool>() {
        RigidBody::sphere(rng.gen_range(0.18..0.24), pos, vel)
    } else {
        let h = Vec3::new(rng.gen_range(0.12..0.18), rng.gen_range(0.12..0.18), rng.gen_range(0.12..0.18));
        RigidBody::cuboid(h, pos, vel)
    };
    vec![body.with_restitution(rng.gen_range(0.5..1.0))]
}

/// Two spheres whose centres approach to lateral offset `offset(r1 + r2)`
/// at time `t_close`.
fn sphere_pair(rng: &mut ChaCha8Rng, offset: impl Fn(&mut ChaCha8Rng, f64) -> f64) -> Vec<RigidBody> {
    let r1 = rng.gen_range(0.15..0.25);
    let r2 = rng.gen_range(0.15..0.25);
    let mid = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(6.0..7.0));
    let u = random_unit_xy(rng);
    let perp = Vec3::new(-u.y, u.x, 0.0);
    let speed = rng.gen_range(2.0..3.5);
    let t_close = rng.gen_range(0.25..0.5);
    let common = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
    let b = offset(rng, r1 + r2);
    let along = ((r1 + r2).powi(2) - b * b).max(0.0).sqrt() + speed * t_close;
    let p1 = mid - u * (along / 2.0) - perp * (b / 2.0);
    let p2 = mid + u * (along / 2.0) + perp * (b / 2.0);
    let e = rng.gen_range(0.6..1.0);
    vec![
        RigidBody::sphere(r1, p1, common + u * (speed / 2.0)).with_restitution(e),
        RigidBody::sphere(r2, p2, common - u * (speed / 2.0)).with_restitution(e),
    ]
}

fn stack(rng: &mut impl Rng) -> Vec<RigidBody> {
    let hb = Vec3::new(rng.gen_range(0.2..0.3), rng.gen_range(0.2..0.3), rng.gen_range(0.1..0.2));
    let ht = Vec3::new(rng.gen_range(0.1..0.2), rng.gen_range(0.1..0.2), rng.gen_range(0.1..0.2));
    let base = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), hb.z);
    let shift = Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.0);
    let drop = rng.gen_range(0.1..0.5);
    let top = base + shift + Vec3::new(0.0, 0.0, hb.z + ht.z + drop);
    let e = rng.gen_range(0.2..0.5);
    vec![
        RigidBody::cuboid(hb, base, Vec3::zeros()).with_restitution(e),
        RigidBody::cuboid(ht, top, Vec3::zeros()).with_restitution(e),
    ]
}

fn bodies_for(scenario: Scenario, rng: &mut ChaCha8Rng) -> Vec<RigidBody> {
    match scenario {
        Scenario::Freefall => freefall(rng),
        Scenario::Collide => sphere_pair(rng, |r, sum| r.gen_range(0.0..0.5) * sum),
        Scenario::Miss => sphere_pair(rng, |r, sum| sum + r.gen_range(0.3..0.6)),
        Scenario::Stack => stack(rng),
    }
}

fn expected_contact(scenario: Scenario) -> Option<bool> {
    match scenario {
        Scenario::Freefall => None,
        Scenario::Collide | Scenario::Stack => Some(true),
        Scenario::Miss => Some(false),
    }
}

/// Smallest analytic surface gap between the first two bodies over the
/// simulated states.
pub fn analytic_min_gap(tr: &Trajectory, frame: usize) -> f64 {
    let poses = &tr.poses[frame];
    let mut best = f64::INFINITY;
    for i in 0..tr.bodies.len() {
        for j in i + 1..tr.bodies.len() {
            let (g, _) = shape_gap(
                &tr.bodies[i].shape,
                &poses[i].translation.vector,
                &tr.bodies[j].shape,
                &poses[j].translation.vector,
            );
            best = best.min(g);
        }
    }
    best
}

/// Generates one scene. Draws are repeated until the contact label agrees
/// with the scenario, so collide scenes always touch and miss scenes never
/// do.
pub fn generate_scene(scenario: Scenario, seed: u64, config: &DatasetConfig) -> Result<Scene> {
    if config.frames < 2 {
        return Err(Error::invalid("scenes need at least two frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        let bodies = bodies_for(scenario, &mut rng);
        let surface_seed = rng.gen::<u32>() as u64;
        let tr = simulate(&bodies, config.physics, config.frames - 1, surface_seed, config.surface)?;
        let contact = tr.contact_label(config.contact_threshold);
        if expected_contact(scenario).is_some_and(|want| want != contact) {
            continue;
        }
        let clear_of_ground = match scenario {
            Scenario::Stack => true,
            _ => tr.cloud.positions.iter().flatten().all(|p| p.z > 0.0),
        };
        if !clear_of_ground {
            continue;
        }
        return Ok(Scene {
            scenario,
            seed,
            contact,
            contact_threshold: config.contact_threshold,
            trajectory: tr,
        });
    }
    Err(Error::invalid(format!("could not draw a valid {scenario} scene for seed {seed}")))
}

/// Generates `count` scenes with seeds `seed, seed + 1, ...` and writes
/// them as `<scenario>_<index>.pfd` when `out_dir` is given.
pub fn make_dataset(
    scenario: Scenario,
    count: usize,
    seed: u64,
    config: &DatasetConfig,
    out_dir: Option<&Path>,
) -> Result<(Vec<Scene>, Vec<PathBuf>)> {
    let mut scenes = Vec::with_capacity(count);
    let mut paths = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    for k in 0..count {
        let scene = generate_scene(scenario, seed + k as u64, config)?;
        if let Some(dir) = out_dir {
            let path = dir.join(format!("{}_{:04}.pfd", scenario.name(), k));
            write_scene(&path, &scene)?;
            paths.push(path);
        }
        scenes.push(scene);
    }
    Ok((scenes, paths))
}
