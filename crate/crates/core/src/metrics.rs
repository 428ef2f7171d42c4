//! Evaluation metrics: penetration, conservation, PSNR and SSIM.

use serde::Serialize;

use crate::scene::ParticleSet;
use crate::sdf::SdfField;
use crate::{Error, Result, Vec3};

/// Dense float image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Image::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if (self.width, self.height, self.channels) == (other.width, other.height, other.channels) {
            Ok(())
        } else {
            Err(Error::SizeMismatch {
                expected: format!("{}x{}x{}", self.width, self.height, self.channels),
                actual: format!("{}x{}x{}", other.width, other.height, other.channels),
            })
        }
    }

    /// One channel as a contiguous plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }
}

pub const PSNR_CAP_DB: f64 = 99.0;

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(1 / MSE)` for images in [0, 1], capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP_DB))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 11x11 Gaussian window, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g1 {
        for b in &g1 {
            w.push(a * b);
        }
    }
    w
}

/// Mean SSIM of one plane over all fully-covered window positions, and
/// optionally its gradient with respect to `x`.
pub fn ssim_plane(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    grad: Option<&mut [f64]>,
) -> f64 {
    let win = gaussian_window();
    let n = SSIM_WINDOW;
    let (ox_n, oy_n) = (width + 1 - n, height + 1 - n);
    let count = (ox_n * oy_n) as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for oy in 0..oy_n {
        for ox in 0..ox_n {
            let (mut mx, mut my, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..n {
                let row = (oy + wy) * width + ox;
                for wx in 0..n {
                    let g = win[wy * n + wx];
                    let (a, b) = (x[row + wx], y[row + wx]);
                    mx += g * a;
                    my += g * b;
                    exx += g * a * a;
                    eyy += g * b * b;
                    exy += g * a * b;
                }
            }
            let sxx = exx - mx * mx;
            let syy = eyy - my * my;
            let sxy = exy - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            total += (a1 * a2) / (b1 * b2);
            if let Some(g) = grad.as_deref_mut() {
                let d_mx = (2.0 * my * a2) / (b1 * b2) - (2.0 * mx * a1 * a2) / (b1 * b1 * b2);
                let d_sxy = 2.0 * a1 / (b1 * b2);
                let d_sxx = -(a1 * a2) / (b1 * b2 * b2);
                // sxx = exx - mx^2, sxy = exy - mx my.
                let k_const = (d_mx - 2.0 * mx * d_sxx - my * d_sxy) / count;
                let k_x = 2.0 * d_sxx / count;
                let k_y = d_sxy / count;
                for wy in 0..n {
                    let row = (oy + wy) * width + ox;
                    for wx in 0..n {
                        let w = win[wy * n + wx];
                        let i = row + wx;
                        g[i] += w * (k_const + k_x * x[i] + k_y * y[i]);
                    }
                }
            }
        }
    }
    total / count
}

fn check_ssim_size(a: &Image) -> Result<()> {
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::SizeMismatch {
            expected: format!("at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
            actual: format!("{}x{}", a.width, a.height),
        });
    }
    Ok(())
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, k1 0.01, k2 0.03,
/// dynamic range 1), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    check_ssim_size(a)?;
    let sum: f64 = (0..a.channels)
        .map(|c| ssim_plane(&a.plane(c), &b.plane(c), a.width, a.height, None))
        .sum();
    Ok(sum / a.channels as f64)
}

/// SSIM of `a` against `b` and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.same_shape(b)?;
    check_ssim_size(a)?;
    let mut grad = Image::zeros(a.width, a.height, a.channels);
    let mut sum = 0.0;
    let scale = 1.0 / a.channels as f64;
    for c in 0..a.channels {
        let mut g = vec![0.0; a.width * a.height];
        sum += ssim_plane(&a.plane(c), &b.plane(c), a.width, a.height, Some(&mut g));
        for (i, v) in g.iter().enumerate() {
            grad.data[i * a.channels + c] = v * scale;
        }
    }
    Ok((sum * scale, grad))
}

/// Fraction of dynamic particles deeper than half a cell inside `sdf`, and
/// the maximum penetration depth.
pub fn penetration_fraction(pset: &ParticleSet, sdf: &SdfField) -> (f64, f64) {
    let tol = -0.5 * sdf.spacing;
    let mut inside = 0usize;
    let mut total = 0usize;
    let mut min_d = f64::INFINITY;
    for i in pset.dynamic_indices() {
        let d = sdf.sample(&pset.particles[i].position).distance;
        total += 1;
        if d < tol {
            inside += 1;
        }
        min_d = min_d.min(d);
    }
    if total == 0 {
        return (0.0, 0.0);
    }
    (inside as f64 / total as f64, (-min_d).max(0.0))
}

/// Total mass and linear momentum of the dynamic particles.
pub fn conservation_report(pset: &ParticleSet) -> (f64, Vec3) {
    pset.dynamic_indices()
        .into_iter()
        .map(|i| &pset.particles[i])
        .fold((0.0, Vec3::zeros()), |(m, p), q| {
            (m + q.mass, p + q.velocity * q.mass)
        })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub penetration_fraction: f64,
    pub max_penetration_depth: f64,
    pub total_mass: f64,
    pub total_momentum: [f64; 3],
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Physical metrics of `pset`; image metrics are filled in when a
    /// rendered/reference pair is supplied and left at their identity
    /// values (cap, 1) otherwise.
    pub fn evaluate(
        pset: &ParticleSet,
        sdf: Option<&SdfField>,
        images: Option<(&Image, &Image)>,
    ) -> Result<Self> {
        let (fraction, depth) = sdf.map_or((0.0, 0.0), |s| penetration_fraction(pset, s));
        let (mass, momentum) = conservation_report(pset);
        let (psnr_db, ssim_value) = match images {
            Some((a, b)) => (psnr(a, b)?, ssim(a, b)?),
            None => (PSNR_CAP_DB, 1.0),
        };
        Ok(MetricReport {
            penetration_fraction: fraction,
            max_penetration_depth: depth,
            total_mass: mass,
            total_momentum: [momentum.x, momentum.y, momentum.z],
            psnr_db,
            ssim: ssim_value,
        })
    }
}
