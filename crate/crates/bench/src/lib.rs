//! Fixtures shared by the criterion benches.

use pseopt_core::io::RunConfig;
use pseopt_core::{ParticleSet, SceneConfig};

/// The default two-object scene with `per_object` particles per object.
pub fn two_object_scene(per_object: usize) -> (ParticleSet, SceneConfig) {
    let mut cfg = RunConfig::default();
    cfg.setup.particles_per_object = per_object;
    let set = cfg.build_particles().expect("default scene builds");
    (set, cfg.scene)
}
