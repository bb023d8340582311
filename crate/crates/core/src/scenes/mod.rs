//! Ground-truth rigid-body scenes: shapes, an analytic integrator, surface
//! tracks, scenario generators and the scene file format.

pub mod body;
mod dataset;
mod format;
mod physics;
mod trajectory;

pub use body::{body_to_mesh, box_mesh, icosphere, sample_surface, samples_for_density, RigidBody, Shape};
pub use dataset::{analytic_min_gap, generate_scene, make_dataset, DatasetConfig, Scenario, Scene};
pub use format::{decode_scene, encode_scene, list_scenes, read_scene, write_scene, Manifest, ObjectEntry, MAGIC};
pub use physics::{simulate_states, EventStats, PhysicsConfig, Simulator};
pub use trajectory::{simulate, Sequence, SurfaceOptions, Trajectory};
