//! PLY particle clouds, telemetry CSV and the run configuration file.
//!
//! All writers are canonical: floats use the shortest representation that
//! parses back to the same value, so write -> read -> write reproduces the
//! first file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::losses::{Camera, LossWeights, RenderedImage, ShapePrior, View};
use crate::materials::MaterialParams;
use crate::optimizer::{OptimConfig, OptimTelemetry, StepRecord};
use crate::scene::{
    make_two_object_scene, ObjectSpec, ParticleSet, SceneConfig, SplatParticle, BACKGROUND,
    FOREGROUND,
};
use crate::sdf::{sdf_from_primitive, SdfField};
use crate::shape::ShapeSpec;
use crate::{Error, Result, Vec3};

pub const PLY_FORMAT_VERSION: u32 = 1;

/// Splat scale used when a PLY file has no scale columns.
pub const DEFAULT_PLY_SCALE: f64 = 0.005;

/// Ratio between splat scale and particle spacing assumed when deriving
/// rest volumes from a PLY file.
pub const PLY_SPLAT_RATIO: f64 = 0.5;

fn color_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Serializes particles as ASCII PLY.
pub fn ply_to_string(pset: &ParticleSet) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment pseopt particle format {PLY_FORMAT_VERSION}");
    let _ = writeln!(s, "element vertex {}", pset.len());
    for name in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {name}");
    }
    for name in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {name}");
    }
    for name in ["opacity", "scale_x", "scale_y", "scale_z"] {
        let _ = writeln!(s, "property float {name}");
    }
    s.push_str("property int object_id\nend_header\n");
    for p in &pset.particles {
        let f = |v: f64| v as f32;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {}",
            f(p.position.x),
            f(p.position.y),
            f(p.position.z),
            color_byte(p.color.x),
            color_byte(p.color.y),
            color_byte(p.color.z),
            f(p.opacity),
            f(p.scale.x),
            f(p.scale.y),
            f(p.scale.z),
            p.object_id
        );
    }
    s
}

pub fn ply_write(pset: &ParticleSet, path: &Path) -> Result<()> {
    fs::write(path, ply_to_string(pset)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq)]
enum PropKind {
    Float,
    UChar,
    Int,
}

fn prop_kind(ty: &str) -> Option<PropKind> {
    match ty {
        "float" | "float32" | "double" | "float64" => Some(PropKind::Float),
        "uchar" | "uint8" => Some(PropKind::UChar),
        "char" | "int8" | "short" | "int16" | "ushort" | "uint16" | "int" | "int32" | "uint"
        | "uint32" => Some(PropKind::Int),
        _ => None,
    }
}

fn expected_kind(name: &str) -> Option<PropKind> {
    match name {
        "x" | "y" | "z" | "opacity" | "scale_x" | "scale_y" | "scale_z" => Some(PropKind::Float),
        "red" | "green" | "blue" => Some(PropKind::UChar),
        "object_id" => Some(PropKind::Int),
        _ => None,
    }
}

/// Parses ASCII PLY text. `path` only labels errors.
///
/// Particles get identity deformation, zero velocity and affine matrix, and
/// a rest volume derived from their splat scale; masses use the default
/// material density until [`assign_materials`] is called.
pub fn ply_from_str(text: &str, path: &Path) -> Result<ParticleSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing `ply` magic".into())),
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, PropKind)> = Vec::new();
    let mut in_vertex = false;
    let mut last_line = 1;
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        last_line = n;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(err(n, format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, c] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(
                        c.parse()
                            .map_err(|_| err(n, format!("bad vertex count `{c}`")))?,
                    );
                } else if *c != "0" {
                    return Err(err(n, format!("unsupported element `{name}`")));
                }
            }
            ["property", "list", ..] => {
                return Err(err(n, "list properties are not supported".into()))
            }
            ["property", ty, name] => {
                if !in_vertex {
                    continue;
                }
                let kind =
                    prop_kind(ty).ok_or_else(|| err(n, format!("unknown property type `{ty}`")))?;
                if let Some(want) = expected_kind(name) {
                    if want != kind {
                        return Err(err(n, format!("property `{name}` has wrong type `{ty}`")));
                    }
                }
                props.push((name.to_string(), kind));
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(err(n, format!("malformed header line `{line}`"))),
        }
    }
    if !header_done {
        return Err(err(last_line, "header ends without `end_header`".into()));
    }
    let count = count.ok_or_else(|| err(last_line, "no vertex element".into()))?;
    let column = |name: &str| props.iter().position(|(p, _)| p == name);
    let (cx, cy, cz) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err(last_line, "vertex element lacks x, y, z".into())),
    };
    let rgb = [column("red"), column("green"), column("blue")];
    let scale = [column("scale_x"), column("scale_y"), column("scale_z")];
    let opacity = column("opacity");
    let object_id = column("object_id");

    let material = MaterialParams::default();
    let mut particles = Vec::with_capacity(count);
    let mut values = vec![0.0f64; props.len()];
    for k in 0..count {
        let (n, line) = lines.next().ok_or_else(|| {
            err(
                last_line + 1,
                format!("file truncated: expected {count} vertices, found {k}"),
            )
        })?;
        last_line = n;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != props.len() {
            return Err(err(
                n,
                format!("expected {} values, found {}", props.len(), tokens.len()),
            ));
        }
        for (slot, (tok, (name, kind))) in values.iter_mut().zip(tokens.iter().zip(&props)) {
            *slot = match kind {
                PropKind::Float => tok.parse::<f32>().map(f64::from).ok(),
                PropKind::UChar => tok.parse::<u8>().map(f64::from).ok(),
                PropKind::Int => tok.parse::<i64>().map(|v| v as f64).ok(),
            }
            .ok_or_else(|| err(n, format!("bad value `{tok}` for `{name}`")))?;
        }
        let x = Vec3::new(values[cx], values[cy], values[cz]);
        let s = match scale {
            [Some(a), Some(b), Some(c)] => Vec3::new(values[a], values[b], values[c]),
            _ => Vec3::repeat(DEFAULT_PLY_SCALE),
        };
        let id = match object_id {
            Some(c) => {
                let v = values[c];
                if v < 0.0 || v > u32::MAX as f64 {
                    return Err(err(n, format!("object_id {v} out of range")));
                }
                v as u32
            }
            None => FOREGROUND,
        };
        let volume0 = (s.mean() / PLY_SPLAT_RATIO).powi(3);
        let mut p = SplatParticle::at_rest(x, material.density * volume0, volume0, id);
        p.scale = s;
        if let [Some(r), Some(g), Some(b)] = rgb {
            p.color = Vec3::new(values[r], values[g], values[b]) / 255.0;
        }
        p.opacity = opacity.map_or(1.0, |c| values[c]);
        particles.push(p);
    }
    let set = ParticleSet::with_default_objects(particles, material);
    set.validate().map_err(|e| err(last_line, e.to_string()))?;
    Ok(set)
}

pub fn ply_read(path: &Path) -> Result<ParticleSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ply_from_str(&text, path)
}

/// Sets per-object materials and recomputes masses from rest volumes.
pub fn assign_materials(pset: &mut ParticleSet, materials: &BTreeMap<u32, MaterialParams>) {
    for (&id, m) in materials {
        pset.material_of_object.insert(id, *m);
    }
    for p in &mut pset.particles {
        if let Some(m) = pset.material_of_object.get(&p.object_id) {
            p.mass = m.density * p.volume0;
        }
    }
}

pub const TELEMETRY_HEADER: &str =
    "step,loss_total,loss_image,loss_ssim,loss_alpha,loss_sds,grad_norm_mean,penetration_fraction,clamp_count,wall_ms";

pub fn telemetry_row(r: &StepRecord) -> String {
    format!(
        "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?}",
        r.step,
        r.loss_total,
        r.loss_image,
        r.loss_ssim,
        r.loss_alpha,
        r.loss_sds,
        r.grad_norm_mean,
        r.penetration_fraction,
        r.clamp_count,
        r.wall_ms
    )
}

pub fn telemetry_to_string(t: &OptimTelemetry) -> String {
    let mut s = String::from(TELEMETRY_HEADER);
    s.push('\n');
    for r in &t.records {
        s.push_str(&telemetry_row(r));
        s.push('\n');
    }
    s
}

pub fn telemetry_csv(t: &OptimTelemetry, path: &Path) -> Result<()> {
    fs::write(path, telemetry_to_string(t)).map_err(|e| Error::io(path, e))
}

/// Appends telemetry rows as they are produced.
pub struct TelemetryWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = TelemetryWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(TELEMETRY_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn push(&mut self, r: &StepRecord) -> Result<()> {
        self.line(&telemetry_row(r))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn telemetry_from_str(text: &str, path: &Path) -> Result<OptimTelemetry> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == TELEMETRY_HEADER => {}
        _ => return Err(err(1, "unexpected telemetry header".into())),
    }
    let mut records = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(err(n, format!("expected 10 fields, found {}", f.len())));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| err(n, format!("bad number `{}`", f[i])))
        };
        let int = |i: usize| {
            f[i].parse::<usize>()
                .map_err(|_| err(n, format!("bad integer `{}`", f[i])))
        };
        records.push(StepRecord {
            step: int(0)?,
            loss_total: num(1)?,
            loss_image: num(2)?,
            loss_ssim: num(3)?,
            loss_alpha: num(4)?,
            loss_sds: num(5)?,
            grad_norm_mean: num(6)?,
            penetration_fraction: num(7)?,
            clamp_count: int(8)?,
            wall_ms: num(9)?,
        });
    }
    Ok(OptimTelemetry { records })
}

pub fn telemetry_read(path: &Path) -> Result<OptimTelemetry> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    telemetry_from_str(&text, path)
}

/// How the particle scene is obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSetup {
    pub foreground: ShapeSpec,
    pub background: ShapeSpec,
    pub foreground_color: Vec3,
    pub background_color: Vec3,
    pub foreground_opacity: f64,
    pub background_opacity: f64,
    pub particles_per_object: usize,
    pub overlap: f64,
    pub splat_scale: f64,
    /// Load particles from this PLY instead of sampling the shapes.
    pub input_ply: Option<PathBuf>,
    /// Background SDF; built from the background shape when unset.
    pub sdf: Option<PathBuf>,
    pub sdf_resolution: usize,
}

impl Default for SceneSetup {
    fn default() -> Self {
        SceneSetup {
            foreground: ShapeSpec::sphere(Vec3::new(0.5, 0.5, 0.5), 0.12),
            background: ShapeSpec::cuboid(Vec3::new(0.5, 0.5, 0.3), Vec3::new(0.2, 0.2, 0.1)),
            foreground_color: Vec3::new(0.9, 0.2, 0.15),
            background_color: Vec3::new(0.2, 0.3, 0.85),
            foreground_opacity: 1.0,
            background_opacity: 1.0,
            particles_per_object: 1000,
            overlap: 0.8,
            splat_scale: 0.5,
            input_ply: None,
            sdf: None,
            sdf_resolution: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub camera: Camera,
    pub target_color: Option<PathBuf>,
    pub target_alpha: Option<PathBuf>,
    pub shape_prior: Option<ShapeSpec>,
}


#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write `step_%06d.ply` every this many steps; 0 disables checkpoints.
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            checkpoint_interval: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub coordinates: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Finite-difference step as a fraction of the camera window extent.
    pub relative_step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            coordinates: 200,
            rtol: 1e-3,
            atol: 1e-8,
            relative_step: 1e-4,
        }
    }
}

/// Everything one CLI run needs. Loaded from a flat `section.key = value`
/// file; every key has a default and unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub setup: SceneSetup,
    pub foreground_material: MaterialParams,
    pub background_material: MaterialParams,
    pub optimizer: OptimConfig,
    pub losses: LossConfig,
    pub output: OutputConfig,
    pub gradcheck: GradCheckConfig,
}

fn fmt_vec(v: &Vec3) -> String {
    format!("{:?} {:?} {:?}", v.x, v.y, v.z)
}

fn fmt_opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".into(), |p| p.display().to_string())
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_vec(v: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<f64> = v
        .split_whitespace()
        .map(parse_num)
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(format!("expected three numbers, got `{v}`")),
    }
}

fn parse_pair(v: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<f64> = v
        .split_whitespace()
        .map(parse_num)
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("expected two numbers, got `{v}`")),
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_path(v: &str, base: &Path) -> PathBuf {
    let p = PathBuf::from(v);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn parse_opt_path(v: &str, base: &Path) -> Option<PathBuf> {
    (v != "none").then(|| parse_path(v, base))
}

fn parse_parsed<T: std::str::FromStr<Err = Error>>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|e: Error| e.to_string())
}

impl RunConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.scene;
        let u = &self.setup;
        let o = &self.optimizer;
        let l = &self.losses;
        let mut e = vec![
            ("scene.grid_resolution", s.grid_resolution.to_string()),
            ("scene.domain_min", fmt_vec(&s.domain_min)),
            ("scene.domain_max", fmt_vec(&s.domain_max)),
            ("scene.gravity", fmt_vec(&s.gravity)),
            (
                "scene.boundary_margin_cells",
                s.boundary_margin_cells.to_string(),
            ),
            ("scene.sdf_boundary_mode", s.sdf_boundary_mode.to_string()),
            ("scene.sdf_skin_cells", format!("{:?}", s.sdf_skin_cells)),
            ("scene.foreground", u.foreground.to_string()),
            ("scene.background", u.background.to_string()),
            ("scene.foreground_color", fmt_vec(&u.foreground_color)),
            ("scene.background_color", fmt_vec(&u.background_color)),
            (
                "scene.foreground_opacity",
                format!("{:?}", u.foreground_opacity),
            ),
            (
                "scene.background_opacity",
                format!("{:?}", u.background_opacity),
            ),
            (
                "scene.particles_per_object",
                u.particles_per_object.to_string(),
            ),
            ("scene.overlap", format!("{:?}", u.overlap)),
            ("scene.splat_scale", format!("{:?}", u.splat_scale)),
            ("scene.input_ply", fmt_opt_path(&u.input_ply)),
            ("scene.sdf", fmt_opt_path(&u.sdf)),
            ("scene.sdf_resolution", u.sdf_resolution.to_string()),
        ];
        for (name, m) in [
            ("foreground", &self.foreground_material),
            ("background", &self.background_material),
        ] {
            let keys: [&'static str; 4] = match name {
                "foreground" => [
                    "materials.foreground.youngs_modulus",
                    "materials.foreground.poisson_ratio",
                    "materials.foreground.density",
                    "materials.foreground.model",
                ],
                _ => [
                    "materials.background.youngs_modulus",
                    "materials.background.poisson_ratio",
                    "materials.background.density",
                    "materials.background.model",
                ],
            };
            e.push((keys[0], format!("{:?}", m.youngs_modulus)));
            e.push((keys[1], format!("{:?}", m.poisson_ratio)));
            e.push((keys[2], format!("{:?}", m.density)));
            e.push((keys[3], m.model.to_string()));
        }
        e.extend([
            ("optimizer.steps_K", o.steps_k.to_string()),
            ("optimizer.substeps_N", o.substeps_n.to_string()),
            (
                "optimizer.learning_rate_gamma",
                format!("{:?}", o.learning_rate),
            ),
            ("optimizer.mode", o.mode.to_string()),
            (
                "optimizer.gravity_during_opt",
                o.gravity_during_opt.to_string(),
            ),
            (
                "optimizer.gravity_during_ppps",
                o.gravity_during_ppps.to_string(),
            ),
            ("optimizer.velocity_sign", o.velocity_sign.to_string()),
            (
                "optimizer.carry_deformation",
                o.carry_deformation.to_string(),
            ),
            ("optimizer.ppps_substeps", o.ppps_substeps.to_string()),
            (
                "optimizer.ppps_dt",
                o.ppps_dt
                    .map_or_else(|| "auto".into(), |d| format!("{d:?}")),
            ),
            ("losses.lambda1", format!("{:?}", l.weights.lambda1)),
            ("losses.lambda2", format!("{:?}", l.weights.lambda2)),
            ("losses.lambda3", format!("{:?}", l.weights.lambda3)),
            ("losses.camera.view", l.camera.view.to_string()),
            ("losses.camera.width", l.camera.width.to_string()),
            ("losses.camera.height", l.camera.height.to_string()),
            (
                "losses.camera.window_min",
                format!("{:?} {:?}", l.camera.window_min[0], l.camera.window_min[1]),
            ),
            (
                "losses.camera.window_max",
                format!("{:?} {:?}", l.camera.window_max[0], l.camera.window_max[1]),
            ),
            ("losses.target_color", fmt_opt_path(&l.target_color)),
            ("losses.target_alpha", fmt_opt_path(&l.target_alpha)),
            (
                "losses.shape_prior",
                l.shape_prior
                    .as_ref()
                    .map_or_else(|| "none".into(), |s| s.to_string()),
            ),
            (
                "output.directory",
                self.output.directory.display().to_string(),
            ),
            (
                "output.checkpoint_interval",
                self.output.checkpoint_interval.to_string(),
            ),
            ("output.seed", self.output.seed.to_string()),
            ("output.wall_time", o.record_wall_time.to_string()),
            (
                "gradcheck.coordinates",
                self.gradcheck.coordinates.to_string(),
            ),
            ("gradcheck.rtol", format!("{:?}", self.gradcheck.rtol)),
            ("gradcheck.atol", format!("{:?}", self.gradcheck.atol)),
            (
                "gradcheck.relative_step",
                format!("{:?}", self.gradcheck.relative_step),
            ),
        ]);
        e
    }

    /// Sets one key. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        self.set_inner(key, value.trim(), base)
            .map_err(|m| Error::config(format!("{key}: {m}")))
    }

    fn set_inner(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        if let Some(rest) = key.strip_prefix("materials.") {
            let (which, field) = rest.split_once('.').ok_or("unknown key")?;
            if which != "foreground" && which != "background" {
                return Err("unknown key".into());
            }
            let m = if which == "foreground" {
                &mut self.foreground_material
            } else {
                &mut self.background_material
            };
            match field {
                "youngs_modulus" => m.youngs_modulus = parse_num(v)?,
                "poisson_ratio" => m.poisson_ratio = parse_num(v)?,
                "density" => m.density = parse_num(v)?,
                "model" => m.model = parse_parsed(v)?,
                _ => return Err("unknown key".into()),
            }
            return Ok(());
        }
        let s = &mut self.scene;
        let u = &mut self.setup;
        let o = &mut self.optimizer;
        let l = &mut self.losses;
        match key {
            "scene.grid_resolution" => s.grid_resolution = parse_num(v)?,
            "scene.domain_min" => s.domain_min = parse_vec(v)?,
            "scene.domain_max" => s.domain_max = parse_vec(v)?,
            "scene.gravity" => s.gravity = parse_vec(v)?,
            "scene.boundary_margin_cells" => s.boundary_margin_cells = parse_num(v)?,
            "scene.sdf_boundary_mode" => s.sdf_boundary_mode = parse_parsed(v)?,
            "scene.sdf_skin_cells" => s.sdf_skin_cells = parse_num(v)?,
            "scene.foreground" => u.foreground = parse_parsed(v)?,
            "scene.background" => u.background = parse_parsed(v)?,
            "scene.foreground_color" => u.foreground_color = parse_vec(v)?,
            "scene.background_color" => u.background_color = parse_vec(v)?,
            "scene.foreground_opacity" => u.foreground_opacity = parse_num(v)?,
            "scene.background_opacity" => u.background_opacity = parse_num(v)?,
            "scene.particles_per_object" => u.particles_per_object = parse_num(v)?,
            "scene.overlap" => u.overlap = parse_num(v)?,
            "scene.splat_scale" => u.splat_scale = parse_num(v)?,
            "scene.input_ply" => u.input_ply = parse_opt_path(v, base),
            "scene.sdf" => u.sdf = parse_opt_path(v, base),
            "scene.sdf_resolution" => u.sdf_resolution = parse_num(v)?,
            "optimizer.steps_K" => o.steps_k = parse_num(v)?,
            "optimizer.substeps_N" => o.substeps_n = parse_num(v)?,
            "optimizer.learning_rate_gamma" => o.learning_rate = parse_num(v)?,
            "optimizer.mode" => o.mode = parse_parsed(v)?,
            "optimizer.gravity_during_opt" => o.gravity_during_opt = parse_bool(v)?,
            "optimizer.gravity_during_ppps" => o.gravity_during_ppps = parse_bool(v)?,
            "optimizer.velocity_sign" => o.velocity_sign = parse_parsed(v)?,
            "optimizer.carry_deformation" => o.carry_deformation = parse_bool(v)?,
            "optimizer.ppps_substeps" => o.ppps_substeps = parse_num(v)?,
            "optimizer.ppps_dt" => {
                o.ppps_dt = if v == "auto" {
                    None
                } else {
                    Some(parse_num(v)?)
                }
            }
            "losses.lambda1" => l.weights.lambda1 = parse_num(v)?,
            "losses.lambda2" => l.weights.lambda2 = parse_num(v)?,
            "losses.lambda3" => l.weights.lambda3 = parse_num(v)?,
            "losses.camera.view" => l.camera.view = parse_parsed(v)?,
            "losses.camera.width" => l.camera.width = parse_num(v)?,
            "losses.camera.height" => l.camera.height = parse_num(v)?,
            "losses.camera.window_min" => l.camera.window_min = parse_pair(v)?,
            "losses.camera.window_max" => l.camera.window_max = parse_pair(v)?,
            "losses.target_color" => l.target_color = parse_opt_path(v, base),
            "losses.target_alpha" => l.target_alpha = parse_opt_path(v, base),
            "losses.shape_prior" => {
                l.shape_prior = if v == "none" {
                    None
                } else {
                    Some(parse_parsed(v)?)
                }
            }
            "output.directory" => self.output.directory = parse_path(v, base),
            "output.checkpoint_interval" => self.output.checkpoint_interval = parse_num(v)?,
            "output.seed" => self.output.seed = parse_num(v)?,
            "output.wall_time" => o.record_wall_time = parse_bool(v)?,
            "gradcheck.coordinates" => self.gradcheck.coordinates = parse_num(v)?,
            "gradcheck.rtol" => self.gradcheck.rtol = parse_num(v)?,
            "gradcheck.atol" => self.gradcheck.atol = parse_num(v)?,
            "gradcheck.relative_step" => self.gradcheck.relative_step = parse_num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn from_str_at(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), n) {
                return Err(err(format!("`{key}` already set on line {prev}")));
            }
            cfg.set(key, value, base).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_at(&text, path, base)
    }

    /// Applies `key=value` overrides; relative paths resolve against the
    /// working directory.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not KEY=VALUE")))?;
            self.set(k.trim(), v, Path::new(""))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (k, v) in self.entries() {
            let sec = k.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                let _ = writeln!(s, "# {sec}");
                section = sec;
            }
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.foreground_material.validate()?;
        self.background_material.validate()?;
        self.optimizer.validate()?;
        self.losses.weights.validate()?;
        self.losses.camera.validate()?;
        self.setup.foreground.validate()?;
        self.setup.background.validate()?;
        if let Some(s) = &self.losses.shape_prior {
            s.validate()?;
        }
        if self.losses.target_alpha.is_some() && self.losses.target_color.is_none() {
            return Err(Error::config(
                "losses.target_alpha requires losses.target_color",
            ));
        }
        for p in [
            &self.setup.input_ply,
            &self.setup.sdf,
            &self.losses.target_color,
            &self.losses.target_alpha,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return Err(Error::config(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn materials(&self) -> BTreeMap<u32, MaterialParams> {
        BTreeMap::from([
            (BACKGROUND, self.background_material),
            (FOREGROUND, self.foreground_material),
        ])
    }

    fn object(
        &self,
        shape: &ShapeSpec,
        material: MaterialParams,
        color: Vec3,
        opacity: f64,
    ) -> ObjectSpec {
        ObjectSpec {
            color,
            opacity,
            splat_scale: self.setup.splat_scale,
            ..ObjectSpec::new(shape.clone(), material)
        }
    }

    /// Loads or samples the initial particle set.
    pub fn build_particles(&self) -> Result<ParticleSet> {
        if let Some(path) = &self.setup.input_ply {
            let mut set = ply_read(path)?;
            assign_materials(&mut set, &self.materials());
            return Ok(set);
        }
        make_two_object_scene(
            &self.object(
                &self.setup.foreground,
                self.foreground_material,
                self.setup.foreground_color,
                self.setup.foreground_opacity,
            ),
            &self.object(
                &self.setup.background,
                self.background_material,
                self.setup.background_color,
                self.setup.background_opacity,
            ),
            self.setup.particles_per_object,
            self.setup.overlap,
            &self.scene,
            self.output.seed,
        )
    }

    /// Loads the background SDF or builds it from the background shape.
    pub fn build_sdf(&self) -> Result<SdfField> {
        match &self.setup.sdf {
            Some(p) => SdfField::load(p),
            None => Ok(sdf_from_primitive(
                &self.setup.background,
                self.setup.sdf_resolution,
                &self.scene.domain_min,
                &self.scene.domain_max,
            )),
        }
    }

    /// Target views, empty when no target image is configured.
    pub fn load_views(&self) -> Result<Vec<View>> {
        let Some(color) = &self.losses.target_color else {
            return Ok(Vec::new());
        };
        let target = RenderedImage::load_png(color, self.losses.target_alpha.as_deref())?;
        let cam = &self.losses.camera;
        if target.width() != cam.width || target.height() != cam.height {
            return Err(Error::SizeMismatch {
                expected: format!("{}x{} target", cam.width, cam.height),
                actual: format!("{}x{}", target.width(), target.height()),
            });
        }
        Ok(vec![View {
            camera: cam.clone(),
            target,
        }])
    }

    pub fn shape_prior(&self) -> Option<ShapePrior> {
        self.losses.shape_prior.clone().map(ShapePrior::new)
    }

    /// The bundled sphere-on-box scene: the foreground starts sunk into the
    /// box, the target image shows it resting on top, and a sphere prior
    /// slightly larger than the foreground and centered a little higher
    /// keeps pulling its lower cap downward.
    ///
    /// The one-cell contact skin keeps loaded contact within the half-cell
    /// penetration tolerance.
    pub fn demo() -> Self {
        let mut cfg = RunConfig::default();
        cfg.scene.sdf_skin_cells = 1.0;
        cfg.setup.splat_scale = 1.0;
        cfg.foreground_material.youngs_modulus = 5000.0;
        cfg.optimizer.steps_k = 100;
        cfg.optimizer.substeps_n = 16;
        cfg.optimizer.learning_rate = 0.04;
        cfg.losses.weights.lambda3 = 10.0;
        cfg.losses.shape_prior = Some(ShapeSpec::sphere(Vec3::new(0.5, 0.5, 0.52), 0.14));
        cfg
    }

    /// Renders the configured scene with zero overlap, i.e. the foreground
    /// resting on the background.
    pub fn render_rest_target(&self) -> Result<RenderedImage> {
        let mut rest = self.clone();
        rest.setup.overlap = 0.0;
        rest.setup.input_ply = None;
        let set = rest.build_particles()?;
        Ok(crate::losses::splat_render(&set, &self.losses.camera))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::OptimMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(name: &str) -> PathBuf {
        PathBuf::from(name)
    }

    #[test]
    fn vertex_line_matches_property_order() {
        let mut part = SplatParticle::at_rest(Vec3::new(0.5, 0.25, 0.125), 1.0, 1e-6, FOREGROUND);
        part.color = Vec3::new(1.0, 0.0, 0.0);
        part.scale = Vec3::new(0.01, 0.02, 0.03);
        let set = ParticleSet::with_default_objects(vec![part], MaterialParams::default());
        let text = ply_to_string(&set);
        assert!(text.contains("comment pseopt particle format 1\n"));
        let last = text.lines().last().unwrap();
        assert_eq!(last, "0.5 0.25 0.125 255 0 0 1 0.01 0.02 0.03 2");
    }

    #[test]
    fn empty_set_is_valid_ply() {
        let set = ParticleSet::with_default_objects(vec![], MaterialParams::default());
        let text = ply_to_string(&set);
        assert!(text.contains("element vertex 0\n"));
        assert!(text.ends_with("end_header\n"));
        assert_eq!(ply_from_str(&text, &p("e.ply")).unwrap().len(), 0);
    }

    fn random_set(n: usize, seed: u64) -> ParticleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = (0..n)
            .map(|_| {
                let x = Vec3::new(rng.random(), rng.random(), rng.random());
                let mut q =
                    SplatParticle::at_rest(x, 1e-3, 1e-6, if rng.random_bool(0.5) { 1 } else { 2 });
                q.color = Vec3::new(rng.random(), rng.random(), rng.random());
                q.opacity = rng.random();
                q.scale =
                    Vec3::new(rng.random(), rng.random(), rng.random()) * 0.01 + Vec3::repeat(1e-4);
                q
            })
            .collect();
        ParticleSet::with_default_objects(parts, MaterialParams::default())
    }

    #[test]
    fn ply_round_trip() {
        let set = random_set(1000, 5);
        let first = ply_to_string(&set);
        let back = ply_from_str(&first, &p("r.ply")).unwrap();
        assert_eq!(back.len(), 1000);
        for (a, b) in set.particles.iter().zip(&back.particles) {
            assert!((a.position - b.position).amax() < 1e-6);
            assert_eq!(a.color.map(color_byte), b.color.map(color_byte));
            assert_eq!(a.object_id, b.object_id);
            assert_eq!(b.deform_grad, crate::Mat3::identity());
            assert_eq!(b.velocity, Vec3::zeros());
        }
        assert_eq!(ply_to_string(&back), first);
    }

    #[test]
    fn minimal_ply_uses_defaults() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0.1 0.2 0.3\n0.4 0.5 0.6\n";
        let set = ply_from_str(text, &p("m.ply")).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.particles[1].opacity, 1.0);
        assert_eq!(set.particles[1].object_id, FOREGROUND);
        assert!(set.is_dynamic(0));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let truncated = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 1 1\n";
        match ply_from_str(truncated, &p("t.ply")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 10);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        let wrong_type = "ply\nformat ascii 1.0\nelement vertex 0\nproperty uchar x\nend_header\n";
        assert!(matches!(
            ply_from_str(wrong_type, &p("w.ply")),
            Err(Error::Parse { line: 4, .. })
        ));
        let bad_value = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 zero 0\n";
        assert!(matches!(
            ply_from_str(bad_value, &p("b.ply")),
            Err(Error::Parse { line: 8, .. })
        ));
        assert!(matches!(
            ply_from_str("plx\n", &p("x.ply")),
            Err(Error::Parse { line: 1, .. })
        ));
        let binary = "ply\nformat binary_little_endian 1.0\n";
        assert!(matches!(
            ply_from_str(binary, &p("y.ply")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn record(step: usize, x: f64) -> StepRecord {
        StepRecord {
            step,
            loss_total: x,
            loss_image: x / 3.0,
            loss_ssim: 0.1 + x,
            loss_alpha: 1e-300,
            loss_sds: 12345.678,
            grad_norm_mean: std::f64::consts::PI * x,
            penetration_fraction: 0.25,
            clamp_count: step * 2,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn telemetry_round_trip() {
        let empty = telemetry_to_string(&OptimTelemetry::default());
        assert_eq!(empty, format!("{TELEMETRY_HEADER}\n"));
        let t = OptimTelemetry {
            records: (0..3).map(|k| record(k, 0.7 / (k + 1) as f64)).collect(),
        };
        let text = telemetry_to_string(&t);
        assert_eq!(text.lines().count(), 4);
        let back = telemetry_from_str(&text, &p("t.csv")).unwrap();
        assert_eq!(back, t);
        assert_eq!(telemetry_to_string(&back), text);
    }

    #[test]
    fn telemetry_writer_matches_batch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = OptimTelemetry {
            records: (0..4).map(|k| record(k, k as f64)).collect(),
        };
        let mut w = TelemetryWriter::create(&path).unwrap();
        for r in &t.records {
            w.push(r).unwrap();
        }
        w.flush().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), telemetry_to_string(&t));
        assert_eq!(telemetry_read(&path).unwrap(), t);
    }

    #[test]
    fn config_defaults_and_overrides() {
        let text = "# comment\noptimizer.steps_K = 100\noptimizer.mode = gd  # trailing\nlosses.target_color = t.png\n";
        let cfg = RunConfig::from_str_at(text, &p("c.cfg"), Path::new("/base")).unwrap();
        assert_eq!(cfg.optimizer.steps_k, 100);
        assert_eq!(cfg.optimizer.mode, OptimMode::Gd);
        assert_eq!(cfg.optimizer.substeps_n, 16);
        assert_eq!(cfg.losses.weights, LossWeights::default());
        assert_eq!(cfg.losses.target_color, Some(PathBuf::from("/base/t.png")));
        let mut cfg = cfg;
        cfg.apply_overrides(&["optimizer.mode=pse", "losses.lambda3 = 0.5"])
            .unwrap();
        assert_eq!(cfg.optimizer.mode, OptimMode::Pse);
        assert_eq!(cfg.losses.weights.lambda3, 0.5);
    }

    #[test]
    fn config_rejects_unknown_and_malformed() {
        for (text, line) in [
            ("optimizer.steps_K = 1\noptimizer.stepz = 3\n", 2),
            ("scene.gravity = 0 0\n", 1),
            ("just words\n", 1),
            ("output.seed = 1\noutput.seed = 2\n", 2),
            ("materials.middle.density = 3\n", 1),
        ] {
            match RunConfig::from_str_at(text, &p("c.cfg"), Path::new("")) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.apply_overrides(&["nope"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_echo_round_trips_every_key() {
        let mut cfg = RunConfig::default();
        cfg.optimizer.ppps_dt = Some(1e-4);
        cfg.losses.shape_prior = Some(ShapeSpec::sphere(Vec3::new(0.5, 0.5, 0.5), 0.1));
        cfg.losses.target_color = Some(PathBuf::from("/abs/t.png"));
        cfg.foreground_material.youngs_modulus = 20.0;
        let text = cfg.to_text();
        let back = RunConfig::from_str_at(&text, &p("e.cfg"), Path::new("")).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.foreground_material.youngs_modulus, 20.0);
        assert_eq!(
            cfg.entries().len(),
            text.lines().filter(|l| l.contains('=')).count()
        );
    }

    #[test]
    fn demo_config_is_valid_and_round_trips() {
        let cfg = RunConfig::demo();
        cfg.validate().unwrap();
        let set = cfg.build_particles().unwrap();
        cfg.optimizer.validate_for(&set, &cfg.scene).unwrap();
        let back = RunConfig::from_str_at(&cfg.to_text(), &p("demo.cfg"), Path::new("")).unwrap();
        assert_eq!(back, cfg);
        let target = cfg.render_rest_target().unwrap();
        assert_eq!(target.width(), cfg.losses.camera.width);
    }

    #[test]
    fn config_validate_checks_files() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.losses.target_color = Some(PathBuf::from("/definitely/missing.png"));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn default_config_builds_a_scene() {
        let cfg = RunConfig::default();
        let set = cfg.build_particles().unwrap();
        assert_eq!(set.len(), 2 * cfg.setup.particles_per_object);
        let sdf = cfg.build_sdf().unwrap();
        let top = cfg.setup.background.aabb().1.z;
        assert!(sdf.sample(&Vec3::new(0.5, 0.5, top)).distance.abs() < sdf.spacing);
    }
}
