//! Loss providers producing per-particle gradients.
//!
//! The image loss runs through an additive-density orthographic splatter:
//! every particle drops an isotropic Gaussian footprint weighted by its
//! opacity, pixel density `D` is the footprint sum, `alpha = 1 - exp(-D)`
//! and color is the opacity-weighted mean of particle colors. Being a
//! smooth sum (no depth sorting) it has clean analytic gradients with
//! respect to particle centers and scales.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector4;

use crate::metrics::{ssim_with_grad, Image};
use crate::scene::ParticleSet;
use crate::shape::ShapeSpec;
use crate::{Error, Result, Vec3};

/// Footprints are evaluated out to `exp(-FOOTPRINT_CUTOFF)`.
const FOOTPRINT_CUTOFF: f64 = 40.0;
/// Below this density a pixel has no defined color and renders black.
pub const MIN_COLOR_DENSITY: f64 = 1e-9;

/// Axis the orthographic camera looks along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewAxis {
    X,
    Y,
    Z,
}

impl ViewAxis {
    /// World axes mapped to image columns and (upward) image rows.
    pub fn image_axes(self) -> (usize, usize) {
        match self {
            ViewAxis::X => (1, 2),
            ViewAxis::Y => (0, 2),
            ViewAxis::Z => (0, 1),
        }
    }
}

impl fmt::Display for ViewAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewAxis::X => "x",
            ViewAxis::Y => "y",
            ViewAxis::Z => "z",
        })
    }
}

impl FromStr for ViewAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(ViewAxis::X),
            "y" => Ok(ViewAxis::Y),
            "z" => Ok(ViewAxis::Z),
            _ => Err(Error::config(format!("unknown view axis `{s}`"))),
        }
    }
}

/// Orthographic axis-aligned camera. The world rectangle
/// `[window_min, window_max]` (in the two image axes) fills the image; row
/// 0 is the top edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub view: ViewAxis,
    pub width: usize,
    pub height: usize,
    pub window_min: [f64; 2],
    pub window_max: [f64; 2],
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            view: ViewAxis::Y,
            width: 64,
            height: 64,
            window_min: [0.0, 0.0],
            window_max: [1.0, 1.0],
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::config("camera image must be at least 8x8"));
        }
        if !(self.window_max[0] > self.window_min[0] && self.window_max[1] > self.window_min[1]) {
            return Err(Error::config("camera window is empty"));
        }
        Ok(())
    }

    pub fn pixel_size(&self) -> [f64; 2] {
        [
            (self.window_max[0] - self.window_min[0]) / self.width as f64,
            (self.window_max[1] - self.window_min[1]) / self.height as f64,
        ]
    }

    /// Longest edge of the world window.
    pub fn window_extent(&self) -> f64 {
        (self.window_max[0] - self.window_min[0]).max(self.window_max[1] - self.window_min[1])
    }

    /// World-plane coordinates of a pixel center.
    pub fn pixel_center(&self, col: usize, row: usize) -> [f64; 2] {
        let [pw, ph] = self.pixel_size();
        [
            self.window_min[0] + (col as f64 + 0.5) * pw,
            self.window_max[1] - (row as f64 + 0.5) * ph,
        ]
    }

    pub fn project(&self, x: &Vec3) -> [f64; 2] {
        let (a, b) = self.view.image_axes();
        [x[a], x[b]]
    }

    /// Pixel rectangle `(col0, col1, row0, row1)` (exclusive ends) whose
    /// centers may lie within `radius` of the projected point.
    fn pixel_range(&self, p: [f64; 2], radius: f64) -> Option<(usize, usize, usize, usize)> {
        let [pw, ph] = self.pixel_size();
        let c0 = ((p[0] - radius - self.window_min[0]) / pw - 0.5)
            .ceil()
            .max(0.0);
        let c1 = ((p[0] + radius - self.window_min[0]) / pw - 0.5).floor() + 1.0;
        let r0 = ((self.window_max[1] - p[1] - radius) / ph - 0.5)
            .ceil()
            .max(0.0);
        let r1 = ((self.window_max[1] - p[1] + radius) / ph - 0.5).floor() + 1.0;
        let c1 = c1.min(self.width as f64);
        let r1 = r1.min(self.height as f64);
        if c1 <= c0 || r1 <= r0 {
            return None;
        }
        Some((c0 as usize, c1 as usize, r0 as usize, r1 as usize))
    }
}

/// Rendered alpha map (one channel) and color map (three channels).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub alpha: Image,
    pub color: Image,
}

impl RenderedImage {
    pub fn blank(width: usize, height: usize) -> Self {
        RenderedImage {
            alpha: Image::zeros(width, height, 1),
            color: Image::zeros(width, height, 3),
        }
    }

    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    /// Writes the color map as 8-bit RGB PNG and, if given, the alpha map
    /// as 8-bit grayscale PNG.
    pub fn save_png(&self, color_path: &Path, alpha_path: Option<&Path>) -> Result<()> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width() as u32, self.height() as u32);
        let rgb = image::RgbImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([0, 1, 2].map(|c| q(self.color.at(x, y, c))))
        });
        rgb.save(color_path).map_err(|e| Error::Image {
            path: color_path.into(),
            message: e.to_string(),
        })?;
        if let Some(path) = alpha_path {
            let gray = image::GrayImage::from_fn(w, h, |x, y| {
                image::Luma([q(self.alpha.at(x as usize, y as usize, 0))])
            });
            gray.save(path).map_err(|e| Error::Image {
                path: path.into(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Loads a color PNG and optional alpha PNG. Without an alpha map the
    /// mask is opaque wherever the color is non-black.
    pub fn load_png(color_path: &Path, alpha_path: Option<&Path>) -> Result<Self> {
        let open = |p: &Path| {
            image::open(p).map_err(|e| Error::Image {
                path: p.into(),
                message: e.to_string(),
            })
        };
        let rgb = open(color_path)?.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let color = Image::from_fn(w, h, 3, |x, y, c| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        });
        let alpha = match alpha_path {
            Some(p) => {
                let gray = open(p)?.to_luma8();
                if (gray.width() as usize, gray.height() as usize) != (w, h) {
                    return Err(Error::SizeMismatch {
                        expected: format!("{w}x{h}"),
                        actual: format!("{}x{}", gray.width(), gray.height()),
                    });
                }
                Image::from_fn(w, h, 1, |x, y, _| {
                    gray.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
                })
            }
            None => Image::from_fn(w, h, 1, |x, y, _| {
                let p = rgb.get_pixel(x as u32, y as u32);
                if p.0.iter().any(|v| *v > 0) {
                    1.0
                } else {
                    0.0
                }
            }),
        };
        Ok(RenderedImage { alpha, color })
    }
}

/// Per-pixel density and opacity-weighted color sums.
struct SplatBuffers {
    density: Vec<f64>,
    weighted_color: Vec<[f64; 3]>,
}

fn footprint_radius(s: f64) -> f64 {
    (2.0 * FOOTPRINT_CUTOFF).sqrt() * s
}

fn splat(pset: &ParticleSet, camera: &Camera) -> SplatBuffers {
    let n = camera.width * camera.height;
    let mut density = vec![0.0; n];
    let mut weighted_color = vec![[0.0; 3]; n];
    for p in &pset.particles {
        if p.opacity == 0.0 {
            continue;
        }
        let s = p.scale.mean();
        let inv = 1.0 / (2.0 * s * s);
        let c = camera.project(&p.position);
        let Some((c0, c1, r0, r1)) = camera.pixel_range(c, footprint_radius(s)) else {
            continue;
        };
        for row in r0..r1 {
            for col in c0..c1 {
                let q = camera.pixel_center(col, row);
                let d2 = (q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2);
                if d2 * inv > FOOTPRINT_CUTOFF {
                    continue;
                }
                let f = (-d2 * inv).exp() * p.opacity;
                let idx = row * camera.width + col;
                density[idx] += f;
                for k in 0..3 {
                    weighted_color[idx][k] += f * p.color[k];
                }
            }
        }
    }
    SplatBuffers {
        density,
        weighted_color,
    }
}

fn resolve(buf: &SplatBuffers, camera: &Camera) -> RenderedImage {
    let mut out = RenderedImage::blank(camera.width, camera.height);
    for (i, &d) in buf.density.iter().enumerate() {
        out.alpha.data[i] = 1.0 - (-d).exp();
        if d >= MIN_COLOR_DENSITY {
            for k in 0..3 {
                out.color.data[3 * i + k] = buf.weighted_color[i][k] / d;
            }
        }
    }
    out
}

/// Renders all particles (static ones included) through `camera`.
pub fn splat_render(pset: &ParticleSet, camera: &Camera) -> RenderedImage {
    resolve(&splat(pset, camera), camera)
}

/// Weights of the image loss and of the score term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Share of the SSIM term against L1.
    pub lambda1: f64,
    /// Weight of the alpha-outside-mask penalty.
    pub lambda2: f64,
    /// Weight of score-provider losses.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.2,
            lambda2: 1.0,
            lambda3: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3]
            .iter()
            .any(|l| !(*l >= 0.0))
        {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if self.lambda1 > 1.0 {
            return Err(Error::config("lambda1 must not exceed 1"));
        }
        Ok(())
    }
}

/// Loss value, its named parts and per-particle gradients.
///
/// `parts` holds `image` (weighted image loss) and the raw terms `l1`,
/// `ssim` (`1 - SSIM`), `alpha` and `sds` (unweighted provider loss).
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub d_position: Vec<Vec3>,
    pub d_scale: Vec<Vec3>,
    /// Quaternion tangent `(w, x, y, z)`.
    pub d_rotation: Vec<Vector4<f64>>,
    pub loss_value: f64,
    pub parts: BTreeMap<String, f64>,
}

impl LossGradient {
    pub fn zeros(n: usize) -> Self {
        LossGradient {
            d_position: vec![Vec3::zeros(); n],
            d_scale: vec![Vec3::zeros(); n],
            d_rotation: vec![Vector4::zeros(); n],
            loss_value: 0.0,
            parts: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    pub fn part(&self, name: &str) -> f64 {
        self.parts.get(name).copied().unwrap_or(0.0)
    }

    /// `self += weight * other` for gradients; loss values are left alone.
    pub fn add_scaled_gradients(&mut self, other: &LossGradient, weight: f64) {
        for (a, b) in self.d_position.iter_mut().zip(&other.d_position) {
            *a += b * weight;
        }
        for (a, b) in self.d_scale.iter_mut().zip(&other.d_scale) {
            *a += b * weight;
        }
        for (a, b) in self.d_rotation.iter_mut().zip(&other.d_rotation) {
            *a += b * weight;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss_value.is_finite()
            && self
                .d_position
                .iter()
                .all(|v| v.iter().all(|c| c.is_finite()))
            && self.d_scale.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self
                .d_rotation
                .iter()
                .all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// Largest absolute gradient component.
    pub fn max_abs(&self) -> f64 {
        let m = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, |a: f64, b| a.max(b.abs()));
        m(&mut self.d_position.iter().flat_map(|v| v.iter().copied()))
            .max(m(&mut self.d_scale.iter().flat_map(|v| v.iter().copied())))
            .max(m(&mut self
                .d_rotation
                .iter()
                .flat_map(|v| v.iter().copied())))
    }

    /// Mean position-gradient norm over the particles of `indices`.
    pub fn mean_position_norm(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        indices
            .iter()
            .map(|&i| self.d_position[i].norm())
            .sum::<f64>()
            / indices.len() as f64
    }
}

/// Value of each image-loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImageLossTerms {
    pub l1: f64,
    /// `1 - SSIM`.
    pub ssim: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Image loss of a rendered pair and its gradients with respect to the
/// rendered color (`3` channels) and alpha (`1` channel).
pub fn image_loss_terms(
    rendered: &RenderedImage,
    target: &RenderedImage,
    weights: &LossWeights,
) -> Result<(ImageLossTerms, Image, Image)> {
    rendered.color.same_shape(&target.color)?;
    rendered.alpha.same_shape(&target.alpha)?;
    let n_color = rendered.color.data.len() as f64;
    let n_pix = rendered.alpha.data.len() as f64;
    let mut g_color = Image::zeros(rendered.width(), rendered.height(), 3);
    let mut g_alpha = Image::zeros(rendered.width(), rendered.height(), 1);

    let w_l1 = 1.0 - weights.lambda1;
    let mut l1 = 0.0;
    for (i, (a, b)) in rendered
        .color
        .data
        .iter()
        .zip(&target.color.data)
        .enumerate()
    {
        let d = a - b;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        g_color.data[i] = w_l1 * sign / n_color;
    }
    l1 /= n_color;

    let mut ssim_term = 0.0;
    if weights.lambda1 > 0.0 {
        let (s, g) = ssim_with_grad(&rendered.color, &target.color)?;
        ssim_term = 1.0 - s;
        for (acc, v) in g_color.data.iter_mut().zip(&g.data) {
            *acc -= weights.lambda1 * v;
        }
    }

    let mut alpha = 0.0;
    for (i, (a, gt)) in rendered
        .alpha
        .data
        .iter()
        .zip(&target.alpha.data)
        .enumerate()
    {
        alpha += a * (1.0 - gt);
        g_alpha.data[i] = weights.lambda2 * (1.0 - gt) / n_pix;
    }
    alpha /= n_pix;

    let total = w_l1 * l1 + weights.lambda1 * ssim_term + weights.lambda2 * alpha;
    Ok((
        ImageLossTerms {
            l1,
            ssim: ssim_term,
            alpha,
            total,
        },
        g_color,
        g_alpha,
    ))
}

/// Image loss of `pset` seen through `camera` against `target`, with
/// gradients for dynamic particle centers and scales.
pub fn image_loss(
    pset: &ParticleSet,
    target: &RenderedImage,
    camera: &Camera,
    weights: &LossWeights,
) -> Result<LossGradient> {
    if (target.width(), target.height()) != (camera.width, camera.height) {
        return Err(Error::config(format!(
            "target is {}x{} but the camera renders {}x{}",
            target.width(),
            target.height(),
            camera.width,
            camera.height
        )));
    }
    let buf = splat(pset, camera);
    let rendered = resolve(&buf, camera);
    let (terms, g_color, g_alpha) = image_loss_terms(&rendered, target, weights)?;

    // Back to density and weighted-color sums.
    let npix = camera.width * camera.height;
    let mut g_density = vec![0.0; npix];
    let mut g_wcolor = vec![[0.0; 3]; npix];
    for i in 0..npix {
        let d = buf.density[i];
        let mut gd = g_alpha.data[i] * (-d).exp();
        if d >= MIN_COLOR_DENSITY {
            for k in 0..3 {
                let gc = g_color.data[3 * i + k];
                g_wcolor[i][k] = gc / d;
                gd -= gc * rendered.color.data[3 * i + k] / d;
            }
        }
        g_density[i] = gd;
    }

    let mut grad = LossGradient::zeros(pset.len());
    let (ua, va) = camera.view.image_axes();
    for idx in pset.dynamic_indices() {
        let p = &pset.particles[idx];
        if p.opacity == 0.0 {
            continue;
        }
        let s = p.scale.mean();
        let inv = 1.0 / (2.0 * s * s);
        let c = camera.project(&p.position);
        let Some((c0, c1, r0, r1)) = camera.pixel_range(c, footprint_radius(s)) else {
            continue;
        };
        let (mut du, mut dv, mut ds) = (0.0, 0.0, 0.0);
        for row in r0..r1 {
            for col in c0..c1 {
                let q = camera.pixel_center(col, row);
                let (ex, ey) = (q[0] - c[0], q[1] - c[1]);
                let d2 = ex * ex + ey * ey;
                if d2 * inv > FOOTPRINT_CUTOFF {
                    continue;
                }
                let pix = row * camera.width + col;
                let f = (-d2 * inv).exp() * p.opacity;
                let upstream = g_density[pix]
                    + g_wcolor[pix][0] * p.color[0]
                    + g_wcolor[pix][1] * p.color[1]
                    + g_wcolor[pix][2] * p.color[2];
                let gf = upstream * f;
                du += gf * ex / (s * s);
                dv += gf * ey / (s * s);
                ds += gf * d2 / (s * s * s);
            }
        }
        grad.d_position[idx][ua] = du;
        grad.d_position[idx][va] = dv;
        grad.d_scale[idx] = Vec3::repeat(ds / 3.0);
    }
    grad.loss_value = terms.total;
    grad.parts.insert("image".into(), terms.total);
    grad.parts.insert("l1".into(), terms.l1);
    grad.parts.insert("ssim".into(), terms.ssim);
    grad.parts.insert("alpha".into(), terms.alpha);
    Ok(grad)
}

/// One supervised view.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: Camera,
    pub target: RenderedImage,
}

/// Mean image loss over `views`; zero with no views.
pub fn image_loss_views(
    pset: &ParticleSet,
    views: &[View],
    weights: &LossWeights,
) -> Result<LossGradient> {
    let mut acc = LossGradient::zeros(pset.len());
    if views.is_empty() {
        return Ok(acc);
    }
    let share = 1.0 / views.len() as f64;
    for view in views {
        let g = image_loss(pset, &view.target, &view.camera, weights)?;
        acc.add_scaled_gradients(&g, share);
        acc.loss_value += g.loss_value * share;
        for (k, v) in &g.parts {
            *acc.parts.entry(k.clone()).or_insert(0.0) += v * share;
        }
    }
    Ok(acc)
}

/// Source of a score-distillation-style geometry gradient.
///
/// Implementations must return finite gradients and leave static
/// particles at zero.
pub trait ScoreProvider: Send + Sync {
    fn name(&self) -> &str;

    fn grad(&self, pset: &ParticleSet, step: usize) -> Result<LossGradient>;
}

/// Pulls every dynamic particle onto the surface of a target solid.
///
/// Loss is `sum 0.5 d^2` over dynamic particles with `d` the signed
/// distance to the target surface; the gradient is `d * normal`.
#[derive(Clone, Debug)]
pub struct ShapePrior {
    pub target: ShapeSpec,
}

impl ShapePrior {
    pub fn new(target: ShapeSpec) -> Self {
        ShapePrior { target }
    }
}

impl ScoreProvider for ShapePrior {
    fn name(&self) -> &str {
        "shape_prior"
    }

    fn grad(&self, pset: &ParticleSet, _step: usize) -> Result<LossGradient> {
        let mut g = LossGradient::zeros(pset.len());
        let mut loss = 0.0;
        for i in pset.dynamic_indices() {
            let x = pset.particles[i].position;
            let d = self.target.signed_distance(&x);
            loss += 0.5 * d * d;
            g.d_position[i] = self.target.gradient(&x) * d;
        }
        g.loss_value = loss;
        g.parts.insert("sds".into(), loss);
        Ok(g)
    }
}

/// Image loss plus `lambda3` times the summed provider losses.
///
/// With no views the image term is dropped.
pub fn total_loss(
    pset: &ParticleSet,
    views: &[View],
    providers: &[&dyn ScoreProvider],
    weights: &LossWeights,
    step: usize,
) -> Result<LossGradient> {
    let mut total = image_loss_views(pset, views, weights)?;
    let mut sds = 0.0;
    for provider in providers {
        let g = provider.grad(pset, step)?;
        if !g.is_finite() || g.len() != pset.len() {
            return Err(Error::Provider {
                provider: provider.name().to_string(),
                message: "returned non-finite or mis-sized gradients".into(),
            });
        }
        total.add_scaled_gradients(&g, weights.lambda3);
        sds += g.loss_value;
    }
    let image = total.loss_value;
    total.loss_value = image + weights.lambda3 * sds;
    total.parts.insert("image".into(), image);
    total.parts.insert("sds".into(), sds);
    for key in ["l1", "ssim", "alpha"] {
        total.parts.entry(key.into()).or_insert(0.0);
    }
    Ok(total)
}

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    pub step: f64,
    /// Largest `|analytic - fd|` seen.
    pub worst_abs_error: f64,
}

impl GradCheckReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Compares `analytic` position gradients against central differences of
/// `loss` at the given `(particle, axis)` coordinates.
///
/// A coordinate passes when the error is within `rtol` relative to the
/// larger magnitude or within `atol` absolute.
pub fn check_position_gradient(
    pset: &ParticleSet,
    analytic: &LossGradient,
    coords: &[(usize, usize)],
    step: f64,
    rtol: f64,
    atol: f64,
    loss: impl Fn(&ParticleSet) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        checked: 0,
        passed: 0,
        step,
        worst_abs_error: 0.0,
    };
    let mut probe = pset.clone();
    for &(i, axis) in coords {
        let x0 = pset.particles[i].position[axis];
        probe.particles[i].position[axis] = x0 + step;
        let plus = loss(&probe)?;
        probe.particles[i].position[axis] = x0 - step;
        let minus = loss(&probe)?;
        probe.particles[i].position[axis] = x0;
        let fd = (plus - minus) / (2.0 * step);
        let a = analytic.d_position[i][axis];
        let err = (a - fd).abs();
        report.checked += 1;
        if err <= atol || err <= rtol * a.abs().max(fd.abs()) {
            report.passed += 1;
        }
        report.worst_abs_error = report.worst_abs_error.max(err);
    }
    Ok(report)
}
