//! Particle, object and scene types plus synthetic two-object scene
//! construction.

use std::collections::BTreeMap;

use nalgebra::Quaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::materials::MaterialParams;
use crate::sdf::BoundaryMode;
use crate::shape::ShapeSpec;
use crate::{Error, Mat3, Result, Vec3};

/// Object label of the static background solid.
pub const BACKGROUND: u32 = 1;
/// Object label of the dynamic foreground solid.
pub const FOREGROUND: u32 = 2;

/// One Gaussian splat doubling as an MPM material point.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatParticle {
    pub position: Vec3,
    pub velocity: Vec3,
    pub mass: f64,
    /// Rest volume.
    pub volume0: f64,
    pub deform_grad: Mat3,
    /// APIC affine velocity matrix.
    pub affine: Mat3,
    pub scale: Vec3,
    /// Unit quaternion, `w` first when serialized.
    pub rotation: Quaternion<f64>,
    pub opacity: f64,
    pub color: Vec3,
    pub object_id: u32,
}

impl SplatParticle {
    /// A particle at rest with identity deformation and default appearance.
    pub fn at_rest(position: Vec3, mass: f64, volume0: f64, object_id: u32) -> Self {
        SplatParticle {
            position,
            velocity: Vec3::zeros(),
            mass,
            volume0,
            deform_grad: Mat3::identity(),
            affine: Mat3::zeros(),
            scale: Vec3::repeat(volume0.cbrt() * 0.5),
            rotation: Quaternion::identity(),
            opacity: 1.0,
            color: Vec3::repeat(0.5),
            object_id,
        }
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("particle {index}: {what}")));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !(self.volume0 > 0.0) {
            return bad("rest volume must be positive");
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return bad("opacity outside [0, 1]");
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("color outside [0, 1]");
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-9 {
            return bad("rotation is not a unit quaternion");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mobility {
    Dynamic,
    Static,
}

/// The simulation and optimization state: an ordered particle list plus
/// per-object material and mobility tables.
///
/// Particle indices are identities; no operation reorders or drops particles.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<SplatParticle>,
    pub material_of_object: BTreeMap<u32, MaterialParams>,
    pub mobility_of_object: BTreeMap<u32, Mobility>,
}

impl ParticleSet {
    pub fn new(
        particles: Vec<SplatParticle>,
        material_of_object: BTreeMap<u32, MaterialParams>,
        mobility_of_object: BTreeMap<u32, Mobility>,
    ) -> Result<Self> {
        let set = ParticleSet {
            particles,
            material_of_object,
            mobility_of_object,
        };
        set.validate()?;
        Ok(set)
    }

    /// Background static, foreground dynamic, both with the given material.
    pub fn with_default_objects(particles: Vec<SplatParticle>, material: MaterialParams) -> Self {
        let mut materials = BTreeMap::new();
        let mut mobility = BTreeMap::new();
        for p in &particles {
            materials.entry(p.object_id).or_insert(material);
            mobility
                .entry(p.object_id)
                .or_insert(if p.object_id == BACKGROUND {
                    Mobility::Static
                } else {
                    Mobility::Dynamic
                });
        }
        materials.entry(BACKGROUND).or_insert(material);
        materials.entry(FOREGROUND).or_insert(material);
        mobility.entry(BACKGROUND).or_insert(Mobility::Static);
        mobility.entry(FOREGROUND).or_insert(Mobility::Dynamic);
        ParticleSet {
            particles,
            material_of_object: materials,
            mobility_of_object: mobility,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.particles.iter().enumerate() {
            p.validate(i)?;
            if !self.material_of_object.contains_key(&p.object_id)
                || !self.mobility_of_object.contains_key(&p.object_id)
            {
                return Err(Error::config(format!(
                    "particle {i}: object {} has no material or mobility entry",
                    p.object_id
                )));
            }
        }
        for m in self.material_of_object.values() {
            m.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn is_dynamic(&self, index: usize) -> bool {
        self.mobility_of_object
            .get(&self.particles[index].object_id)
            .is_some_and(|m| *m == Mobility::Dynamic)
    }

    /// Indices of dynamic particles, ascending.
    pub fn dynamic_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_dynamic(i)).collect()
    }

    pub fn material(&self, index: usize) -> &MaterialParams {
        &self.material_of_object[&self.particles[index].object_id]
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.particles.iter().map(|p| p.position).collect()
    }

    /// Positions of particles carrying `object_id`.
    pub fn object_positions(&self, object_id: u32) -> Vec<Vec3> {
        self.particles
            .iter()
            .filter(|p| p.object_id == object_id)
            .map(|p| p.position)
            .collect()
    }
}

/// Simulation domain and global physics settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Grid cells per axis along the longest domain edge.
    pub grid_resolution: usize,
    pub domain_min: Vec3,
    pub domain_max: Vec3,
    pub gravity: Vec3,
    pub boundary_margin_cells: usize,
    pub sdf_boundary_mode: BoundaryMode,
    /// Contact offset in grid cells: nodes closer than this to the SDF
    /// surface are treated as inside it. Zero projects only nodes with
    /// negative distance.
    pub sdf_skin_cells: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid_resolution: 64,
            domain_min: Vec3::zeros(),
            domain_max: Vec3::repeat(1.0),
            gravity: Vec3::new(0.0, 0.0, -9.81),
            boundary_margin_cells: 2,
            sdf_boundary_mode: BoundaryMode::Slip,
            sdf_skin_cells: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.domain_max - self.domain_min).min() <= 0.0 {
            return Err(Error::config(
                "domain_max must exceed domain_min on every axis",
            ));
        }
        if self.grid_resolution < 8 {
            return Err(Error::config("grid_resolution must be at least 8"));
        }
        if self.boundary_margin_cells < 2 {
            return Err(Error::config("boundary_margin_cells must be at least 2"));
        }
        if !(self.sdf_skin_cells >= 0.0 && self.sdf_skin_cells <= 4.0) {
            return Err(Error::config("sdf_skin_cells must lie in [0, 4]"));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("gravity must be finite"));
        }
        Ok(())
    }

    /// Grid spacing `h`.
    pub fn spacing(&self) -> f64 {
        (self.domain_max - self.domain_min).max() / self.grid_resolution as f64
    }

    pub fn extent(&self) -> Vec3 {
        self.domain_max - self.domain_min
    }

    /// Height of the floor plane enforced by the domain boundary.
    pub fn floor_height(&self) -> f64 {
        self.domain_min.z + self.boundary_margin_cells as f64 * self.spacing()
    }

    pub fn contains_box(&self, lo: &Vec3, hi: &Vec3) -> bool {
        (0..3).all(|k| lo[k] >= self.domain_min[k] && hi[k] <= self.domain_max[k])
    }
}

/// Appearance and material of one synthetic object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub shape: ShapeSpec,
    pub material: MaterialParams,
    pub color: Vec3,
    pub opacity: f64,
    /// Splat scale as a multiple of the particle spacing `cbrt(volume0)`.
    pub splat_scale: f64,
}

impl ObjectSpec {
    pub fn new(shape: ShapeSpec, material: MaterialParams) -> Self {
        ObjectSpec {
            shape,
            material,
            color: Vec3::repeat(0.5),
            opacity: 1.0,
            splat_scale: 0.5,
        }
    }
}

/// Places `foreground` on top of `background` along +z.
///
/// `overlap` is the fraction of the foreground's lower half-height that is
/// sunk into the top of the background: 0 leaves them touching, 1 puts the
/// foreground center on the background's top face. Only the z coordinate of
/// the foreground center changes.
pub fn place_on_top(foreground: &ShapeSpec, background: &ShapeSpec, overlap: f64) -> ShapeSpec {
    let (_, bg_hi) = background.aabb();
    let (fg_lo, _) = foreground.aabb();
    let below = foreground.center().z - fg_lo.z;
    let mut c = foreground.center();
    c.z = bg_hi.z + below - overlap * below;
    foreground.with_center(c)
}

fn sample_object(
    spec: &ObjectSpec,
    count: usize,
    object_id: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<SplatParticle> {
    let volume0 = spec.shape.volume() / count as f64;
    let mass = spec.material.density * volume0;
    let scale = volume0.cbrt() * spec.splat_scale;
    spec.shape
        .sample_interior(count, rng)
        .into_iter()
        .map(|x| {
            let mut p = SplatParticle::at_rest(x, mass, volume0, object_id);
            p.scale = Vec3::repeat(scale);
            p.color = spec.color;
            p.opacity = spec.opacity;
            p
        })
        .collect()
}

/// Builds a static background object (label 1) and a dynamic foreground
/// object (label 2) sunk into it by `overlap`; see [`place_on_top`].
///
/// Background particles come first, then foreground particles.
pub fn make_two_object_scene(
    foreground: &ObjectSpec,
    background: &ObjectSpec,
    particles_per_object: usize,
    overlap: f64,
    scene: &SceneConfig,
    seed: u64,
) -> Result<ParticleSet> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::config(format!("overlap {overlap} outside [0, 1]")));
    }
    if particles_per_object == 0 {
        return Err(Error::config("particles_per_object must be positive"));
    }
    scene.validate()?;
    foreground.shape.validate()?;
    background.shape.validate()?;
    let fg_shape = place_on_top(&foreground.shape, &background.shape, overlap);
    for (name, shape) in [("background", &background.shape), ("foreground", &fg_shape)] {
        let (lo, hi) = shape.aabb();
        if !scene.contains_box(&lo, &hi) {
            return Err(Error::config(format!(
                "{name} shape {shape} leaves the domain"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut particles = sample_object(background, particles_per_object, BACKGROUND, &mut rng);
    let fg = ObjectSpec {
        shape: fg_shape,
        ..foreground.clone()
    };
    particles.extend(sample_object(
        &fg,
        particles_per_object,
        FOREGROUND,
        &mut rng,
    ));

    let materials = BTreeMap::from([
        (BACKGROUND, background.material),
        (FOREGROUND, foreground.material),
    ]);
    let mobility = BTreeMap::from([
        (BACKGROUND, Mobility::Static),
        (FOREGROUND, Mobility::Dynamic),
    ]);
    ParticleSet::new(particles, materials, mobility)
}

/// Uniform scale plus translation, `x' = factor * x + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainTransform {
    pub factor: f64,
    pub offset: Vec3,
}

impl DomainTransform {
    pub fn identity() -> Self {
        DomainTransform {
            factor: 1.0,
            offset: Vec3::zeros(),
        }
    }

    pub fn apply(&self, pset: &mut ParticleSet) {
        for p in &mut pset.particles {
            p.position = p.position * self.factor + self.offset;
            p.scale *= self.factor;
        }
    }

    pub fn inverse(&self) -> DomainTransform {
        DomainTransform {
            factor: 1.0 / self.factor,
            offset: -self.offset / self.factor,
        }
    }

    /// Maps normalized particles back to their original frame, e.g. before export.
    pub fn apply_inverse(&self, pset: &mut ParticleSet) {
        for p in &mut pset.particles {
            p.position = (p.position - self.offset) / self.factor;
            p.scale /= self.factor;
        }
    }
}

/// Fits the bounding box of all positions into the domain shrunk by
/// `margin` (a fraction of the domain extent) on every side.
///
/// The scale is uniform and set by the longest bounding-box axis; the
/// minimum corner maps to the minimum corner of the target region.
pub fn normalize_to_domain(
    pset: &ParticleSet,
    margin: f64,
    scene: &SceneConfig,
) -> Result<(ParticleSet, DomainTransform)> {
    if pset.is_empty() {
        return Err(Error::config("cannot normalize an empty particle set"));
    }
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::config(format!("margin {margin} outside (0, 0.5)")));
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in &pset.particles {
        lo = lo.inf(&p.position);
        hi = hi.sup(&p.position);
    }
    let longest = (hi - lo).max();
    if !(longest > 0.0) {
        return Err(Error::config(
            "all particles coincide; nothing to normalize",
        ));
    }
    let ext = scene.extent();
    let target_lo = scene.domain_min + ext * margin;
    let target_extent = (ext * (1.0 - 2.0 * margin)).min();
    let factor = target_extent / longest;
    let transform = DomainTransform {
        factor,
        offset: target_lo - lo * factor,
    };
    let mut out = pset.clone();
    transform.apply(&mut out);
    Ok((out, transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::MaterialParams;
    use rand::Rng;

    fn mat() -> MaterialParams {
        MaterialParams::default()
    }

    fn cloud(points: &[Vec3]) -> ParticleSet {
        let ps = points
            .iter()
            .map(|&x| SplatParticle::at_rest(x, 1.0, 1e-6, FOREGROUND))
            .collect();
        ParticleSet::with_default_objects(ps, mat())
    }

    #[test]
    fn sphere_on_box_overlap_half_sinks_half_radius() {
        let fg = ShapeSpec::sphere(Vec3::new(0.5, 0.5, 0.5), 0.1);
        let bg = ShapeSpec::cuboid(Vec3::new(0.5, 0.5, 0.35), Vec3::repeat(0.15));
        let placed = place_on_top(&fg, &bg, 0.5);
        // Box top at 0.5; bottom of the sphere should sit 0.05 below it.
        let (lo, _) = placed.aabb();
        assert!((lo.z - 0.45).abs() < 1e-12);
        assert!((placed.center().z - 0.55).abs() < 1e-12);
    }

    #[test]
    fn particle_mass_matches_density_and_volume() {
        let scene = SceneConfig::default();
        let fg = ObjectSpec::new(ShapeSpec::sphere(Vec3::new(0.5, 0.5, 0.5), 0.1), mat());
        let bg = ObjectSpec::new(
            ShapeSpec::cuboid(Vec3::new(0.5, 0.5, 0.2), Vec3::repeat(0.1)),
            mat(),
        );
        let set = make_two_object_scene(&fg, &bg, 1000, 0.0, &scene, 1).unwrap();
        let rho = mat().density;
        let expected = rho * 4.0 / 3.0 * std::f64::consts::PI * 0.1f64.powi(3) / 1000.0;
        let fg_particles: Vec<_> = set
            .particles
            .iter()
            .filter(|p| p.object_id == FOREGROUND)
            .collect();
        assert_eq!(fg_particles.len(), 1000);
        for p in &fg_particles {
            assert!((p.mass - expected).abs() <= 1e-15 * expected);
        }
        let summed_volume: f64 = fg_particles.iter().map(|p| p.volume0).sum();
        let sphere_volume = 4.0 / 3.0 * std::f64::consts::PI * 1e-3;
        assert!((summed_volume - sphere_volume).abs() < 1e-12);
        // All sampled points are inside the sphere, which now rests on the box.
        let center = Vec3::new(0.5, 0.5, 0.4);
        for p in &fg_particles {
            assert!((p.position - center).norm() < 0.1);
            assert_eq!(p.deform_grad, Mat3::identity());
            assert_eq!(p.affine, Mat3::zeros());
            assert_eq!(p.velocity, Vec3::zeros());
        }
        assert!(set.is_dynamic(1500));
        assert!(!set.is_dynamic(0));
    }

    #[test]
    fn shape_outside_domain_is_rejected() {
        let scene = SceneConfig::default();
        let fg = ObjectSpec::new(ShapeSpec::sphere(Vec3::new(0.5, 0.5, 0.5), 0.3), mat());
        let bg = ObjectSpec::new(
            ShapeSpec::cuboid(Vec3::new(0.5, 0.5, 0.6), Vec3::repeat(0.3)),
            mat(),
        );
        let err = make_two_object_scene(&fg, &bg, 10, 0.0, &scene, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let bad_overlap = make_two_object_scene(&fg, &bg, 10, 1.5, &scene, 0);
        assert!(bad_overlap.is_err());
    }

    #[test]
    fn normalize_cube_example() {
        let scene = SceneConfig::default();
        let set = cloud(&[Vec3::zeros(), Vec3::repeat(2.0), Vec3::new(1.0, 0.5, 2.0)]);
        let (out, t) = normalize_to_domain(&set, 0.05, &scene).unwrap();
        assert!((t.factor - 0.45).abs() < 1e-15);
        assert!((out.particles[0].position - Vec3::repeat(0.05)).norm() < 1e-15);
        assert!((out.particles[1].position - Vec3::repeat(0.95)).norm() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent_and_invertible() {
        let scene = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..100)
            .map(|_| {
                Vec3::new(
                    rng.random::<f64>() * 3.0 - 1.0,
                    rng.random(),
                    rng.random::<f64>() * 7.0,
                )
            })
            .collect();
        let set = cloud(&pts);
        let (once, t1) = normalize_to_domain(&set, 0.1, &scene).unwrap();
        let (_, t2) = normalize_to_domain(&once, 0.1, &scene).unwrap();
        assert!((t2.factor - 1.0).abs() < 1e-12);
        assert!(t2.offset.norm() < 1e-12);
        let z_extent = pts.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max)
            - pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert!((t1.factor - 0.8 / z_extent).abs() < 1e-12);

        let mut back = once.clone();
        t1.apply_inverse(&mut back);
        for (a, b) in back.particles.iter().zip(&set.particles) {
            assert!((a.position - b.position).norm() < 1e-9);
            assert!((a.scale - b.scale).norm() < 1e-12);
            assert_eq!(a.object_id, b.object_id);
        }
    }

    #[test]
    fn normalize_flat_cloud_uses_longest_axis() {
        let scene = SceneConfig::default();
        let set = cloud(&[Vec3::new(0.0, 0.0, 3.0), Vec3::new(4.0, 0.0, 3.0)]);
        let (out, t) = normalize_to_domain(&set, 0.25, &scene).unwrap();
        assert!((t.factor - 0.125).abs() < 1e-15);
        assert!((out.particles[1].position - Vec3::new(0.75, 0.25, 0.25)).norm() < 1e-15);
        assert!(normalize_to_domain(&cloud(&[Vec3::zeros(), Vec3::zeros()]), 0.1, &scene).is_err());
        assert!(normalize_to_domain(&set, 0.5, &scene).is_err());
    }
}
