//! Grid-sampled signed distance fields for the static background object and
//! the velocity projection that turns them into an MPM boundary.
//!
//! Values are stored x-major with z varying fastest:
//! `index = (i * ny + j) * nz + k`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::shape::ShapeSpec;
use crate::{Error, Result, Vec3};

pub const PSDF_MAGIC: &[u8; 4] = b"PSDF";
pub const PSDF_VERSION: u32 = 1;

/// Velocity response at nodes inside the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Inside nodes stop completely.
    Sticky,
    /// Only the inward normal component is removed; separation is free.
    Slip,
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryMode::Sticky => "sticky",
            BoundaryMode::Slip => "slip",
        })
    }
}

impl FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sticky" => Ok(BoundaryMode::Sticky),
            "slip" => Ok(BoundaryMode::Slip),
            _ => Err(Error::config(format!("unknown boundary mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdfField {
    pub resolution: [usize; 3],
    pub spacing: f64,
    pub origin: Vec3,
    pub values: Vec<f64>,
}

/// Result of [`SdfField::sample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub distance: f64,
    pub normal: Vec3,
    /// The query lay outside the sampled box and was clamped onto it.
    pub clamped: bool,
}

fn sample_grid(lo: &Vec3, hi: &Vec3, resolution: usize) -> ([usize; 3], f64) {
    let ext = hi - lo;
    let spacing = ext.max() / resolution as f64;
    let counts = [0, 1, 2].map(|k| (ext[k] / spacing - 1e-9).ceil() as usize + 1);
    (counts, spacing)
}

impl SdfField {
    /// Field filled by evaluating `f` at every sample position.
    pub fn from_fn(
        resolution: [usize; 3],
        spacing: f64,
        origin: Vec3,
        f: impl Fn(&Vec3) -> f64,
    ) -> Self {
        let [nx, ny, nz] = resolution;
        let mut values = Vec::with_capacity(nx * ny * nz);
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let x = origin + Vec3::new(i as f64, j as f64, k as f64) * spacing;
                    values.push(f(&x));
                }
            }
        }
        SdfField {
            resolution,
            spacing,
            origin,
            values,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn sample_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Upper corner of the sampled box.
    pub fn max_corner(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                (self.resolution[0] - 1) as f64,
                (self.resolution[1] - 1) as f64,
                (self.resolution[2] - 1) as f64,
            ) * self.spacing
    }

    fn clamp_point(&self, x: &Vec3) -> (Vec3, bool) {
        let hi = self.max_corner();
        let c = x.sup(&self.origin).inf(&hi);
        (c, c != *x)
    }

    /// Trilinear interpolation; the query must already lie inside the box.
    fn interpolate(&self, x: &Vec3) -> f64 {
        let u = (x - self.origin) / self.spacing;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let n = self.resolution[k];
            let b = (u[k].floor().max(0.0) as usize).min(n.saturating_sub(2));
            base[k] = b;
            frac[k] = if n > 1 {
                (u[k] - b as f64).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        let mut acc = 0.0;
        for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
            for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                for (dk, wk) in [(0, 1.0 - frac[2]), (1, frac[2])] {
                    let w = wi * wj * wk;
                    if w != 0.0 {
                        let (i, j, k) = (
                            (base[0] + di).min(self.resolution[0] - 1),
                            (base[1] + dj).min(self.resolution[1] - 1),
                            (base[2] + dk).min(self.resolution[2] - 1),
                        );
                        acc += w * self.value_at(i, j, k);
                    }
                }
            }
        }
        acc
    }

    /// Interpolated distance and central-difference unit normal at `x`.
    ///
    /// Points outside the sampled box are clamped onto it and flagged.
    pub fn sample(&self, x: &Vec3) -> SdfSample {
        let (p, clamped) = self.clamp_point(x);
        let distance = self.interpolate(&p);
        let h = self.spacing;
        let mut grad = Vec3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let (fwd, _) = self.clamp_point(&(p + e));
            let (bwd, _) = self.clamp_point(&(p - e));
            let span = fwd[k] - bwd[k];
            if span > 0.0 {
                grad[k] = (self.interpolate(&fwd) - self.interpolate(&bwd)) / span;
            }
        }
        let n = grad.norm();
        let normal = if n > 0.0 { grad / n } else { Vec3::z() };
        SdfSample {
            distance,
            normal,
            clamped,
        }
    }

    /// Largest jump between adjacent samples relative to the spacing.
    /// A true distance field stays at or below 1.
    pub fn max_neighbor_slope(&self) -> f64 {
        let [nx, ny, nz] = self.resolution;
        let mut worst: f64 = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let v = self.value_at(i, j, k);
                    if i + 1 < nx {
                        worst = worst.max((self.value_at(i + 1, j, k) - v).abs());
                    }
                    if j + 1 < ny {
                        worst = worst.max((self.value_at(i, j + 1, k) - v).abs());
                    }
                    if k + 1 < nz {
                        worst = worst.max((self.value_at(i, j, k + 1) - v).abs());
                    }
                }
            }
        }
        worst / self.spacing
    }

    /// Serializes to the PSDF binary layout (little-endian header followed
    /// by `f32` samples).
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(PSDF_MAGIC)?;
        w.write_all(&PSDF_VERSION.to_le_bytes())?;
        for n in self.resolution {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for c in self.origin.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&self.spacing.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> std::io::Result<Self> {
        use std::io::{Error as IoError, ErrorKind};
        let bad = |msg: &str| IoError::new(ErrorKind::InvalidData, msg.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PSDF_MAGIC {
            return Err(bad("not a PSDF file"));
        }
        let mut u = [0u8; 4];
        let mut d = [0u8; 8];
        r.read_exact(&mut u)?;
        let version = u32::from_le_bytes(u);
        if version != PSDF_VERSION {
            return Err(bad(&format!("unsupported PSDF version {version}")));
        }
        let mut resolution = [0usize; 3];
        for n in &mut resolution {
            r.read_exact(&mut u)?;
            *n = u32::from_le_bytes(u) as usize;
        }
        let mut origin = Vec3::zeros();
        for k in 0..3 {
            r.read_exact(&mut d)?;
            origin[k] = f64::from_le_bytes(d);
        }
        r.read_exact(&mut d)?;
        let spacing = f64::from_le_bytes(d);
        if resolution.contains(&0) || !(spacing > 0.0) {
            return Err(bad("degenerate PSDF header"));
        }
        let count = resolution.iter().product::<usize>();
        let mut raw = vec![0u8; count * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(SdfField {
            resolution,
            spacing,
            origin,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        SdfField::read_from(std::io::BufReader::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// Exact signed distance of `shape` sampled over the box `[lo, hi]` with
/// `resolution` cells along its longest edge.
pub fn sdf_from_primitive(shape: &ShapeSpec, resolution: usize, lo: &Vec3, hi: &Vec3) -> SdfField {
    let (counts, spacing) = sample_grid(lo, hi, resolution);
    SdfField::from_fn(counts, spacing, *lo, |x| shape.signed_distance(x))
}

/// Uniform bucket grid answering exact nearest-point queries.
struct PointBuckets<'a> {
    points: &'a [Vec3],
    lo: Vec3,
    cell: f64,
    dims: [usize; 3],
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointBuckets<'a> {
    fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let dims = [0, 1, 2].map(|k| ((hi[k] - lo[k]) / cell).floor() as usize + 1);
        let mut this = PointBuckets {
            points,
            lo,
            cell,
            dims,
            start: Vec::new(),
            order: Vec::new(),
        };
        let n_buckets = dims.iter().product::<usize>();
        let mut counts = vec![0usize; n_buckets + 1];
        let keys: Vec<usize> = points
            .iter()
            .map(|p| this.flat(this.bucket_of(p)))
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for b in 0..n_buckets {
            counts[b + 1] += counts[b];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        this.start = counts;
        this.order = order;
        this
    }

    fn bucket_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let b = ((p[k] - self.lo[k]) / self.cell).floor();
            (b.max(0.0) as usize).min(self.dims[k] - 1)
        })
    }

    fn flat(&self, b: [usize; 3]) -> usize {
        (b[0] * self.dims[1] + b[1]) * self.dims[2] + b[2]
    }

    fn nearest_distance(&self, q: &Vec3) -> f64 {
        let c = self.bucket_of(q);
        let mut best_sq = f64::INFINITY;
        let max_ring = *self.dims.iter().max().unwrap();
        for ring in 0..=max_ring {
            let r = ring as isize;
            for di in -r..=r {
                for dj in -r..=r {
                    for dk in -r..=r {
                        if di.abs().max(dj.abs()).max(dk.abs()) != r {
                            continue;
                        }
                        let b = [c[0] as isize + di, c[1] as isize + dj, c[2] as isize + dk];
                        if (0..3).any(|k| b[k] < 0 || b[k] >= self.dims[k] as isize) {
                            continue;
                        }
                        let f = self.flat(b.map(|v| v as usize));
                        for &pi in &self.order[self.start[f]..self.start[f + 1]] {
                            best_sq = best_sq.min((self.points[pi] - q).norm_squared());
                        }
                    }
                }
            }
            // Unvisited buckets are at least `ring * cell` away.
            let bound = ring as f64 * self.cell;
            if best_sq <= bound * bound {
                break;
            }
        }
        best_sq.sqrt()
    }
}

/// Pseudo-SDF of a point cloud: nearest-point distance minus `offset`.
///
/// Open clouds have no reliable inside, so the sign only marks the
/// `offset`-thick shell around the points.
pub fn sdf_from_points(
    points: &[Vec3],
    resolution: usize,
    offset: f64,
    lo: &Vec3,
    hi: &Vec3,
) -> Result<SdfField> {
    if points.len() < 10 {
        return Err(Error::config(format!(
            "point-cloud SDF needs at least 10 points, got {}",
            points.len()
        )));
    }
    let (counts, spacing) = sample_grid(lo, hi, resolution);
    let buckets = PointBuckets::new(points, 2.0 * spacing);
    Ok(SdfField::from_fn(counts, spacing, *lo, |x| {
        buckets.nearest_distance(x) - offset
    }))
}

/// Boundary response for a grid velocity at signed distance `distance`.
pub fn project_velocity(v: &Vec3, distance: f64, normal: &Vec3, mode: BoundaryMode) -> Vec3 {
    if distance >= 0.0 {
        return *v;
    }
    match mode {
        BoundaryMode::Sticky => Vec3::zeros(),
        BoundaryMode::Slip => v - normal * v.dot(normal).min(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> (Vec3, Vec3) {
        (Vec3::zeros(), Vec3::repeat(1.0))
    }

    fn sphere_field(res: usize) -> (ShapeSpec, SdfField) {
        let shape = ShapeSpec::sphere(Vec3::repeat(0.5), 0.2);
        let (lo, hi) = unit_box();
        let f = sdf_from_primitive(&shape, res, &lo, &hi);
        (shape, f)
    }

    #[test]
    fn sphere_values_on_axis() {
        let (_, f) = sphere_field(64);
        let h = f.spacing;
        assert_eq!(f.resolution, [65, 65, 65]);
        assert!((f.sample(&Vec3::repeat(0.5)).distance + 0.2).abs() < 0.5 * h);
        assert!(f.sample(&Vec3::new(0.5, 0.5, 0.7)).distance.abs() < 0.5 * h);
        assert!((f.sample(&Vec3::new(0.5, 0.5, 0.9)).distance - 0.2).abs() < 0.5 * h);
        let n = f.sample(&Vec3::new(0.5, 0.5, 0.85)).normal;
        assert!((n - Vec3::z()).norm() < 1e-3);
        // Exact sample point returns the stored value.
        let s = f.sample(&f.sample_position(10, 20, 30));
        assert_eq!(s.distance, f.value_at(10, 20, 30));
        assert!(!s.clamped);
        assert!(f.sample(&Vec3::new(1.5, 0.5, 0.5)).clamped);
        assert!(f.max_neighbor_slope() <= 1.05);
    }

    #[test]
    fn box_face_center_is_on_surface() {
        let shape = ShapeSpec::cuboid(Vec3::repeat(0.5), Vec3::new(0.25, 0.125, 0.25));
        let (lo, hi) = unit_box();
        let f = sdf_from_primitive(&shape, 64, &lo, &hi);
        let top = f.sample(&Vec3::new(0.5, 0.5, 0.75));
        assert!(top.distance.abs() < 0.5 * f.spacing);
        assert!(top.normal.z > 0.99);
        assert!(f.max_neighbor_slope() <= 1.05);
    }

    #[test]
    fn interpolation_tracks_analytic_primitives() {
        let (lo, hi) = unit_box();
        let shapes = [
            ShapeSpec::sphere(Vec3::repeat(0.5), 0.2),
            ShapeSpec::cuboid(Vec3::repeat(0.5), Vec3::new(0.3, 0.1, 0.2)),
            ShapeSpec::RoundedBox {
                center: Vec3::repeat(0.5),
                half_extents: Vec3::new(0.3, 0.2, 0.2),
                radius: 0.05,
            },
            ShapeSpec::Capsule {
                a: Vec3::new(0.3, 0.4, 0.5),
                b: Vec3::new(0.7, 0.6, 0.5),
                radius: 0.1,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for shape in &shapes {
            let f = sdf_from_primitive(shape, 32, &lo, &hi);
            for _ in 0..10_000 {
                let x = Vec3::new(rng.random(), rng.random(), rng.random());
                let err = (f.sample(&x).distance - shape.signed_distance(&x)).abs();
                assert!(err <= f.spacing, "{shape} at {x}: {err}");
            }
        }
    }

    #[test]
    fn sphere_normals_within_two_degrees() {
        let (shape, f) = sphere_field(64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 2000 {
            let x = Vec3::new(rng.random(), rng.random(), rng.random());
            let r = (x - Vec3::repeat(0.5)).norm();
            if r < 4.0 * f.spacing
                || x.iter()
                    .any(|c| *c < 2.0 * f.spacing || *c > 1.0 - 2.0 * f.spacing)
            {
                continue;
            }
            let s = f.sample(&x);
            let angle = s.normal.dot(&shape.gradient(&x)).clamp(-1.0, 1.0).acos();
            assert!(angle.to_degrees() < 2.0, "{x}: {} deg", angle.to_degrees());
            checked += 1;
        }
    }

    #[test]
    fn refinement_halves_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probes: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .filter(|x| (x - Vec3::repeat(0.5)).norm() > 0.1)
            .collect();
        let max_err = |res| {
            let (shape, f) = sphere_field(res);
            probes
                .iter()
                .map(|x| (f.sample(x).distance - shape.signed_distance(x)).abs())
                .fold(0.0, f64::max)
        };
        let coarse = max_err(16);
        let fine = max_err(32);
        assert!(fine <= 0.5 * coarse, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn point_cloud_field_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..400)
            .map(|_| {
                let d = Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                );
                Vec3::repeat(0.5) + d.normalize() * 0.2
            })
            .collect();
        let (lo, hi) = unit_box();
        let f = sdf_from_points(&pts, 16, 0.02, &lo, &hi).unwrap();
        for i in 0..f.resolution[0] {
            for j in (0..f.resolution[1]).step_by(3) {
                for k in (0..f.resolution[2]).step_by(2) {
                    let x = f.sample_position(i, j, k);
                    let brute = pts
                        .iter()
                        .map(|p| (p - x).norm())
                        .fold(f64::INFINITY, f64::min);
                    assert!((f.value_at(i, j, k) - (brute - 0.02)).abs() < 1e-12);
                }
            }
        }
        let center = f.sample(&Vec3::repeat(0.5)).distance;
        assert!((center - 0.18).abs() < f.spacing, "{center}");
    }

    #[test]
    fn point_cluster_and_large_offset() {
        let p = Vec3::new(0.3, 0.6, 0.4);
        let pts = vec![p; 12];
        let (lo, hi) = unit_box();
        let f = sdf_from_points(&pts, 16, 0.0, &lo, &hi).unwrap();
        let x = Vec3::new(0.8, 0.1, 0.9);
        assert!((f.sample(&x).distance - (x - p).norm()).abs() < f.spacing);
        let neg = sdf_from_points(&pts, 16, 10.0, &lo, &hi).unwrap();
        assert!(neg.values.iter().all(|v| *v < 0.0));
        assert!(matches!(
            sdf_from_points(&[], 16, 0.0, &lo, &hi),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let n = Vec3::z();
        let v = Vec3::new(1.0, 0.0, -2.0);
        assert_eq!(project_velocity(&v, 0.1, &n, BoundaryMode::Sticky), v);
        assert_eq!(
            project_velocity(&v, -0.1, &n, BoundaryMode::Slip),
            Vec3::new(1.0, 0.0, 0.0)
        );
        let sep = Vec3::new(1.0, 0.0, 2.0);
        assert_eq!(project_velocity(&sep, -0.1, &n, BoundaryMode::Slip), sep);
        assert_eq!(
            project_velocity(&v, -0.1, &n, BoundaryMode::Sticky),
            Vec3::zeros()
        );
    }

    #[test]
    fn psdf_round_trip_is_byte_identical() {
        let (_, f) = sphere_field(16);
        let mut first = Vec::new();
        f.write_to(&mut first).unwrap();
        assert_eq!(&first[..4], b"PSDF");
        assert_eq!(first.len(), 4 + 4 + 12 + 24 + 8 + 17 * 17 * 17 * 4);
        let back = SdfField::read_from(&first[..]).unwrap();
        let mut second = Vec::new();
        back.write_to(&mut second).unwrap();
        assert_eq!(first, second);
        assert!(SdfField::read_from(&first[..first.len() - 3]).is_err());
        assert!(SdfField::read_from(&b"NOPE"[..]).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_never_speeds_up(
            v in prop::array::uniform3(-5.0..5.0f64),
            n in prop::array::uniform3(-1.0..1.0f64),
            d in -1.0..1.0f64,
        ) {
            let v = Vec3::from(v);
            let n = Vec3::from(n);
            prop_assume!(n.norm() > 1e-3);
            let n = n.normalize();
            for mode in [BoundaryMode::Sticky, BoundaryMode::Slip] {
                let once = project_velocity(&v, d, &n, mode);
                let twice = project_velocity(&once, d, &n, mode);
                prop_assert!((once - twice).norm() <= 1e-12 * (1.0 + v.norm()));
                prop_assert!(once.norm_squared() <= v.norm_squared() * (1.0 + 1e-12));
            }
        }
    }
}
