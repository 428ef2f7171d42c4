//! MLS-MPM substeps with quadratic B-spline transfers.
//!
//! One substep is `clear -> p2g -> grid_update -> g2p`. Only dynamic
//! particles take part; static objects act through the background SDF.

use rayon::prelude::*;

use crate::materials::kirchhoff_stress;
use crate::scene::{ParticleSet, SceneConfig};
use crate::sdf::{project_velocity, BoundaryMode, SdfField};
use crate::{Error, Mat3, Result, Vec3};

/// Background Eulerian grid for one substep.
#[derive(Clone, Debug)]
pub struct GridState {
    /// Node count per axis.
    pub resolution: [usize; 3],
    pub spacing: f64,
    pub origin: Vec3,
    pub node_mass: Vec<f64>,
    /// Momentum after [`p2g`], velocity after [`grid_update`].
    pub node_momentum: Vec<Vec3>,
    /// Nodes lighter than this are treated as empty.
    pub mass_epsilon: f64,
}

impl GridState {
    pub fn new(scene: &SceneConfig) -> Self {
        let h = scene.spacing();
        let ext = scene.extent();
        let resolution = [0, 1, 2].map(|k| (ext[k] / h).round() as usize + 1);
        let n = resolution.iter().product();
        GridState {
            resolution,
            spacing: h,
            origin: scene.domain_min,
            node_mass: vec![0.0; n],
            node_momentum: vec![Vec3::zeros(); n],
            mass_epsilon: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.node_mass.fill(0.0);
        self.node_momentum.fill(Vec3::zeros());
        self.mass_epsilon = 0.0;
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn total_mass(&self) -> f64 {
        self.node_mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.node_momentum.iter().sum()
    }

    /// Lowest and highest admissible particle coordinate (in cell units)
    /// along axis `k`.
    fn band(&self, k: usize) -> (f64, f64) {
        (1.5, (self.resolution[k] - 1) as f64 - 1.5)
    }

    /// Clamps `x` into the valid particle band, reporting whether it moved.
    pub fn clamp_to_band(&self, x: &mut Vec3) -> bool {
        let mut moved = false;
        for k in 0..3 {
            let (lo, hi) = self.band(k);
            let lo = self.origin[k] + lo * self.spacing;
            let hi = self.origin[k] + hi * self.spacing;
            if x[k] < lo {
                x[k] = lo;
                moved = true;
            } else if x[k] > hi {
                x[k] = hi;
                moved = true;
            }
        }
        moved
    }
}

/// The 3x3x3 quadratic B-spline stencil of one particle.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    /// Lowest node of the stencil.
    pub base: [usize; 3],
    /// Per-axis weights for node offsets 0, 1, 2 from `base`.
    pub weights: [[f64; 3]; 3],
    /// Particle position relative to `base`, in cell units.
    pub frac: Vec3,
    pub spacing: f64,
}

/// Quadratic B-spline kernel `N(u)` in cell units.
pub fn bspline_kernel(u: f64) -> f64 {
    let a = u.abs();
    if a < 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        0.5 * (1.5 - a) * (1.5 - a)
    } else {
        0.0
    }
}

impl Stencil {
    /// Visits the 27 nodes as `(node, weight, x_node - x_particle)`.
    #[inline]
    pub fn for_each(&self, mut f: impl FnMut([usize; 3], f64, Vec3)) {
        let [wx, wy, wz] = self.weights;
        for a in 0..3 {
            for b in 0..3 {
                let wab = wx[a] * wy[b];
                for c in 0..3 {
                    let offset = Vec3::new(a as f64, b as f64, c as f64);
                    let dpos = (offset - self.frac) * self.spacing;
                    f(
                        [self.base[0] + a, self.base[1] + b, self.base[2] + c],
                        wab * wz[c],
                        dpos,
                    );
                }
            }
        }
    }

    /// All 27 `(flat node index, weight, node offset)` triples.
    pub fn triples(&self, grid: &GridState) -> Vec<(usize, f64, Vec3)> {
        let mut out = Vec::with_capacity(27);
        self.for_each(|n, w, d| out.push((grid.index(n[0], n[1], n[2]), w, d)));
        out
    }
}

/// Stencil of a particle at `position`, or `None` outside the valid band
/// (closer than 1.5 cells to the grid boundary).
pub fn bspline_stencil(position: &Vec3, grid: &GridState) -> Option<Stencil> {
    let u = (position - grid.origin) / grid.spacing;
    let mut base = [0usize; 3];
    let mut weights = [[0.0; 3]; 3];
    let mut frac = Vec3::zeros();
    for k in 0..3 {
        let (lo, hi) = grid.band(k);
        if !(u[k] >= lo && u[k] <= hi) {
            return None;
        }
        let b = (u[k] - 0.5).floor();
        let fx = u[k] - b;
        base[k] = b as usize;
        frac[k] = fx;
        weights[k] = [
            0.5 * (1.5 - fx) * (1.5 - fx),
            0.75 - (fx - 1.0) * (fx - 1.0),
            0.5 * (fx - 0.5) * (fx - 0.5),
        ];
    }
    Some(Stencil {
        base,
        weights,
        frac,
        spacing: grid.spacing,
    })
}

/// Per-substep parameters.
#[derive(Clone, Copy, Debug)]
pub struct SubstepParams<'a> {
    pub dt: f64,
    pub gravity_on: bool,
    pub sdf: Option<&'a SdfField>,
    pub boundary_mode: BoundaryMode,
    /// Run g2p on the rayon pool. Results are bit-identical either way.
    pub parallel: bool,
}

impl<'a> SubstepParams<'a> {
    pub fn new(dt: f64) -> Self {
        SubstepParams {
            dt,
            gravity_on: false,
            sdf: None,
            boundary_mode: BoundaryMode::Slip,
            parallel: false,
        }
    }
}

/// Largest stable `dt`: `0.5 h / max(max |v_p|, max wave speed)`.
pub fn cfl_limit(pset: &ParticleSet, spacing: f64) -> f64 {
    let mut speed: f64 = 0.0;
    for i in pset.dynamic_indices() {
        speed = speed
            .max(pset.particles[i].velocity.norm())
            .max(pset.material(i).wave_speed());
    }
    if speed > 0.0 {
        0.5 * spacing / speed
    } else {
        f64::INFINITY
    }
}

pub fn check_cfl(pset: &ParticleSet, dt: f64, spacing: f64) -> Result<()> {
    let limit = cfl_limit(pset, spacing);
    if dt > 0.0 && dt <= limit {
        Ok(())
    } else {
        Err(Error::Cfl { dt, limit })
    }
}

fn check_finite(index: usize, p: &crate::scene::SplatParticle) -> Result<()> {
    let finite = p.position.iter().all(|v| v.is_finite())
        && p.velocity.iter().all(|v| v.is_finite())
        && p.deform_grad.iter().all(|v| v.is_finite())
        && p.affine.iter().all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::Blowup {
            particle: index,
            reason: "non-finite particle state".into(),
        })
    }
}

/// Scatters mass and APIC momentum of dynamic particles to the grid, with
/// the MLS-MPM stress impulse `-(4 dt / h^2) V0 tau` fused into the affine
/// term. Accumulates into `grid`, which is expected to be cleared.
pub fn p2g(pset: &ParticleSet, grid: &mut GridState, params: &SubstepParams) -> Result<()> {
    let h = grid.spacing;
    let stress_factor = -4.0 * params.dt / (h * h);
    let mut mass_sum = 0.0;
    let mut count = 0usize;
    for i in pset.dynamic_indices() {
        let p = &pset.particles[i];
        check_finite(i, p)?;
        let stencil = bspline_stencil(&p.position, grid)
            .ok_or_else(|| Error::out_of_domain(i, &p.position))?;
        let tau =
            kirchhoff_stress(&p.deform_grad, pset.material(i)).map_err(|e| Error::Blowup {
                particle: i,
                reason: e.to_string(),
            })?;
        let affine = p.affine * p.mass + tau * (stress_factor * p.volume0);
        let momentum = p.velocity * p.mass;
        let res = grid.resolution;
        let (masses, momenta) = (&mut grid.node_mass, &mut grid.node_momentum);
        stencil.for_each(|n, w, dpos| {
            let idx = (n[0] * res[1] + n[1]) * res[2] + n[2];
            masses[idx] += w * p.mass;
            momenta[idx] += (momentum + affine * dpos) * w;
        });
        mass_sum += p.mass;
        count += 1;
    }
    if count > 0 {
        grid.mass_epsilon = 1e-12 * mass_sum / count as f64;
    }
    Ok(())
}

/// Normalizes momentum to velocity, adds gravity, then applies the domain
/// walls and the SDF boundary.
pub fn grid_update(grid: &mut GridState, params: &SubstepParams, scene: &SceneConfig) {
    let [nx, ny, nz] = grid.resolution;
    let margin = scene.boundary_margin_cells;
    let gravity = if params.gravity_on {
        scene.gravity * params.dt
    } else {
        Vec3::zeros()
    };
    let near_wall = |i: usize, n: usize| i < margin || i + margin > n - 1;
    let skin = scene.sdf_skin_cells * grid.spacing;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let idx = grid.index(i, j, k);
                let m = grid.node_mass[idx];
                if !(m > grid.mass_epsilon) {
                    grid.node_momentum[idx] = Vec3::zeros();
                    continue;
                }
                let mut v = grid.node_momentum[idx] / m + gravity;
                if near_wall(i, nx) {
                    v.x = 0.0;
                }
                if near_wall(j, ny) {
                    v.y = 0.0;
                }
                if near_wall(k, nz) {
                    v.z = 0.0;
                }
                if let Some(sdf) = params.sdf {
                    let s = sdf.sample(&grid.node_position(i, j, k));
                    v = project_velocity(&v, s.distance - skin, &s.normal, params.boundary_mode);
                }
                grid.node_momentum[idx] = v;
            }
        }
    }
}

fn gather_particle(grid: &GridState, p: &mut crate::scene::SplatParticle, dt: f64) -> Option<bool> {
    let stencil = bspline_stencil(&p.position, grid)?;
    let res = grid.resolution;
    let mut v = Vec3::zeros();
    let mut b = Mat3::zeros();
    stencil.for_each(|n, w, dpos| {
        let vi = grid.node_momentum[(n[0] * res[1] + n[1]) * res[2] + n[2]];
        v += vi * w;
        b += (vi * w) * dpos.transpose();
    });
    let h = grid.spacing;
    let c = b * (4.0 / (h * h));
    p.velocity = v;
    p.affine = c;
    p.position += v * dt;
    p.deform_grad = (Mat3::identity() + c * dt) * p.deform_grad;
    Some(grid.clamp_to_band(&mut p.position))
}

/// Gathers grid velocities back to dynamic particles and advects them.
///
/// Returns the number of particles clamped back into the valid band.
pub fn g2p(pset: &mut ParticleSet, grid: &GridState, params: &SubstepParams) -> Result<usize> {
    let dynamic: Vec<bool> = (0..pset.len()).map(|i| pset.is_dynamic(i)).collect();
    let dt = params.dt;
    let step = |(i, p): (usize, &mut crate::scene::SplatParticle)| -> Result<usize> {
        if !dynamic[i] {
            return Ok(0);
        }
        match gather_particle(grid, p, dt) {
            Some(clamped) => Ok(clamped as usize),
            None => Err(Error::out_of_domain(i, &p.position)),
        }
    };
    if params.parallel {
        pset.particles
            .par_iter_mut()
            .enumerate()
            .map(step)
            .try_reduce(|| 0, |a, b| Ok(a + b))
    } else {
        pset.particles
            .iter_mut()
            .enumerate()
            .map(step)
            .try_fold(0, |acc, r| r.map(|c| acc + c))
    }
}

/// Counters from one substep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubstepStats {
    pub clamped: usize,
}

/// Owns a grid buffer reused across substeps.
#[derive(Clone, Debug)]
pub struct MpmSolver {
    pub grid: GridState,
}

impl MpmSolver {
    pub fn new(scene: &SceneConfig) -> Self {
        MpmSolver {
            grid: GridState::new(scene),
        }
    }

    /// One full substep: CFL check, clear, p2g, grid update, g2p.
    pub fn substep(
        &mut self,
        pset: &mut ParticleSet,
        params: &SubstepParams,
        scene: &SceneConfig,
    ) -> Result<SubstepStats> {
        check_cfl(pset, params.dt, self.grid.spacing)?;
        self.grid.clear();
        p2g(pset, &mut self.grid, params)?;
        grid_update(&mut self.grid, params, scene);
        let clamped = g2p(pset, &self.grid, params)?;
        Ok(SubstepStats { clamped })
    }
}

/// Convenience wrapper allocating a fresh grid.
pub fn substep(
    pset: &mut ParticleSet,
    params: &SubstepParams,
    scene: &SceneConfig,
) -> Result<SubstepStats> {
    MpmSolver::new(scene).substep(pset, params, scene)
}
