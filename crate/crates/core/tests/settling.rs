use pseopt_core::optimizer::ppps;
use pseopt_core::scene::{SplatParticle, FOREGROUND};
use pseopt_core::{
    MaterialParams, MpmSolver, OptimConfig, ParticleSet, SceneConfig, ShapeSpec, Vec3,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Elastic block of 1,000 particles with its bottom face `drop` above the floor.
fn falling_block(scene: &SceneConfig, drop: f64) -> ParticleSet {
    let half = Vec3::new(0.08, 0.08, 0.06);
    let center = Vec3::new(0.5, 0.5, scene.floor_height() + drop + half.z);
    let shape = ShapeSpec::cuboid(center, half);
    let count = 1000;
    let volume0 = shape.volume() / count as f64;
    let material = MaterialParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let particles = shape
        .sample_interior(count, &mut rng)
        .into_iter()
        .map(|x| SplatParticle::at_rest(x, material.density * volume0, volume0, FOREGROUND))
        .collect();
    ParticleSet::with_default_objects(particles, material)
}

#[test]
fn dropped_block_settles_on_the_floor() {
    let scene = SceneConfig::default();
    let mut pset = falling_block(&scene, 0.05);
    let cfg = OptimConfig {
        ppps_dt: Some(1e-3),
        ..OptimConfig::default()
    };
    cfg.validate_for(&pset, &scene).unwrap();
    let substeps = 2000;
    let stats = ppps(
        &mut pset,
        &cfg,
        &scene,
        None,
        substeps,
        &mut MpmSolver::new(&scene),
    )
    .unwrap();
    let ke = &stats.kinetic_energy;
    let (peak_at, peak) = ke
        .iter()
        .enumerate()
        .fold((0, 0.0), |a, (i, &k)| if k > a.1 { (i, k) } else { a });
    let settled = ke
        .iter()
        .skip(peak_at)
        .position(|&k| k < 0.01 * peak)
        .map(|i| i + peak_at);
    let lowest = pset
        .particles
        .iter()
        .map(|p| p.position.z)
        .fold(f64::INFINITY, f64::min);
    assert!(settled.is_some());
    assert!(ke[substeps - 1] < 0.01 * peak);
    assert!(lowest >= scene.floor_height() - scene.spacing());
}
