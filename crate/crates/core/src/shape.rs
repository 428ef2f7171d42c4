//! Analytic primitive solids.
//!
//! Used to build synthetic scenes, to bake background SDFs and as the
//! target geometry of the `shape_prior` score provider.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::{Error, Vec3};

/// A closed solid with an exact signed distance (negative inside).
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeSpec {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
    /// Hollow sphere of mid-surface `radius` and total wall `thickness`.
    Shell {
        center: Vec3,
        radius: f64,
        thickness: f64,
    },
    /// Box with outer `half_extents` whose edges are rounded by `radius`.
    RoundedBox {
        center: Vec3,
        half_extents: Vec3,
        radius: f64,
    },
    Capsule {
        a: Vec3,
        b: Vec3,
        radius: f64,
    },
}

fn box_distance(p: Vec3, half: Vec3) -> f64 {
    let q = p.abs() - half;
    let outside = q.map(|c| c.max(0.0)).norm();
    let inside = q.max().min(0.0);
    outside + inside
}

fn box_gradient(p: Vec3, half: Vec3) -> Vec3 {
    let q = p.abs() - half;
    let sign = p.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
    let outside = q.map(|c| c.max(0.0));
    let n = outside.norm();
    if n > 0.0 {
        return sign.component_mul(&outside) / n;
    }
    let axis = q.imax();
    let mut g = Vec3::zeros();
    g[axis] = sign[axis];
    g
}

fn radial_unit(d: Vec3) -> Vec3 {
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vec3::z()
    }
}

impl ShapeSpec {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        ShapeSpec::Sphere { center, radius }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3) -> Self {
        ShapeSpec::Box {
            center,
            half_extents,
        }
    }

    pub fn center(&self) -> Vec3 {
        match *self {
            ShapeSpec::Sphere { center, .. }
            | ShapeSpec::Box { center, .. }
            | ShapeSpec::Shell { center, .. }
            | ShapeSpec::RoundedBox { center, .. } => center,
            ShapeSpec::Capsule { a, b, .. } => (a + b) * 0.5,
        }
    }

    /// Returns a copy moved so that its center sits at `center`.
    pub fn with_center(&self, center: Vec3) -> Self {
        let mut s = self.clone();
        let delta = center - self.center();
        match &mut s {
            ShapeSpec::Sphere { center: c, .. }
            | ShapeSpec::Box { center: c, .. }
            | ShapeSpec::Shell { center: c, .. }
            | ShapeSpec::RoundedBox { center: c, .. } => *c += delta,
            ShapeSpec::Capsule { a, b, .. } => {
                *a += delta;
                *b += delta;
            }
        }
        s
    }

    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        match *self {
            ShapeSpec::Sphere { center, radius } => (x - center).norm() - radius,
            ShapeSpec::Box {
                center,
                half_extents,
            } => box_distance(x - center, half_extents),
            ShapeSpec::Shell {
                center,
                radius,
                thickness,
            } => ((x - center).norm() - radius).abs() - 0.5 * thickness,
            ShapeSpec::RoundedBox {
                center,
                half_extents,
                radius,
            } => box_distance(x - center, half_extents.add_scalar(-radius)) - radius,
            ShapeSpec::Capsule { a, b, radius } => {
                let pa = x - a;
                let ba = b - a;
                let h = (pa.dot(&ba) / ba.norm_squared()).clamp(0.0, 1.0);
                (pa - ba * h).norm() - radius
            }
        }
    }

    /// Unit gradient of [`signed_distance`](Self::signed_distance).
    ///
    /// On the medial set (sphere center, box ridges) one of the one-sided
    /// gradients is returned.
    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match *self {
            ShapeSpec::Sphere { center, .. } => radial_unit(x - center),
            ShapeSpec::Box {
                center,
                half_extents,
            } => box_gradient(x - center, half_extents),
            ShapeSpec::Shell { center, radius, .. } => {
                let d = x - center;
                let side = if d.norm() < radius { -1.0 } else { 1.0 };
                radial_unit(d) * side
            }
            ShapeSpec::RoundedBox {
                center,
                half_extents,
                radius,
            } => box_gradient(x - center, half_extents.add_scalar(-radius)),
            ShapeSpec::Capsule { a, b, .. } => {
                let pa = x - a;
                let ba = b - a;
                let h = (pa.dot(&ba) / ba.norm_squared()).clamp(0.0, 1.0);
                radial_unit(pa - ba * h)
            }
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.signed_distance(x) < 0.0
    }

    pub fn volume(&self) -> f64 {
        match *self {
            ShapeSpec::Sphere { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            ShapeSpec::Box { half_extents, .. } => 8.0 * half_extents.product(),
            ShapeSpec::Shell {
                radius, thickness, ..
            } => {
                let outer = radius + 0.5 * thickness;
                let inner = (radius - 0.5 * thickness).max(0.0);
                4.0 / 3.0 * PI * (outer.powi(3) - inner.powi(3))
            }
            ShapeSpec::RoundedBox {
                half_extents,
                radius,
                ..
            } => {
                let l = (half_extents.add_scalar(-radius)) * 2.0;
                l.product()
                    + 2.0 * radius * (l.x * l.y + l.y * l.z + l.z * l.x)
                    + PI * radius * radius * l.sum()
                    + 4.0 / 3.0 * PI * radius.powi(3)
            }
            ShapeSpec::Capsule { a, b, radius } => {
                PI * radius * radius * (b - a).norm() + 4.0 / 3.0 * PI * radius.powi(3)
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        match *self {
            ShapeSpec::Sphere { center, radius } => {
                (center.add_scalar(-radius), center.add_scalar(radius))
            }
            ShapeSpec::Shell {
                center,
                radius,
                thickness,
            } => {
                let r = radius + 0.5 * thickness;
                (center.add_scalar(-r), center.add_scalar(r))
            }
            ShapeSpec::Box {
                center,
                half_extents,
            }
            | ShapeSpec::RoundedBox {
                center,
                half_extents,
                ..
            } => (center - half_extents, center + half_extents),
            ShapeSpec::Capsule { a, b, radius } => {
                (a.inf(&b).add_scalar(-radius), a.sup(&b).add_scalar(radius))
            }
        }
    }

    pub(crate) fn validate(&self) -> Result<(), Error> {
        let ok = match *self {
            ShapeSpec::Sphere { radius, .. } => radius > 0.0,
            ShapeSpec::Box { half_extents, .. } => half_extents.min() > 0.0,
            ShapeSpec::Shell {
                radius, thickness, ..
            } => radius > 0.0 && thickness > 0.0 && thickness < 2.0 * radius,
            ShapeSpec::RoundedBox {
                half_extents,
                radius,
                ..
            } => radius >= 0.0 && half_extents.min() > radius,
            ShapeSpec::Capsule { radius, a, b } => radius > 0.0 && (b - a).norm() > 0.0,
        };
        if ok && self.center().iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::config(format!("degenerate shape {self}")))
        }
    }

    /// Rejection-samples `count` points uniformly inside the solid.
    pub fn sample_interior<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Vec3> {
        let (lo, hi) = self.aabb();
        let extent = hi - lo;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let p = lo
                + Vec3::new(
                    rng.random::<f64>() * extent.x,
                    rng.random::<f64>() * extent.y,
                    rng.random::<f64>() * extent.z,
                );
            if self.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

impl fmt::Display for ShapeSpec {
    /// Compact textual form, parsed back by [`FromStr`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeSpec::Sphere { center: c, radius } => {
                write!(f, "sphere {} {} {} {}", c.x, c.y, c.z, radius)
            }
            ShapeSpec::Box {
                center: c,
                half_extents: h,
            } => write!(f, "box {} {} {} {} {} {}", c.x, c.y, c.z, h.x, h.y, h.z),
            ShapeSpec::Shell {
                center: c,
                radius,
                thickness,
            } => write!(f, "shell {} {} {} {} {}", c.x, c.y, c.z, radius, thickness),
            ShapeSpec::RoundedBox {
                center: c,
                half_extents: h,
                radius,
            } => write!(
                f,
                "rounded_box {} {} {} {} {} {} {}",
                c.x, c.y, c.z, h.x, h.y, h.z, radius
            ),
            ShapeSpec::Capsule { a, b, radius } => write!(
                f,
                "capsule {} {} {} {} {} {} {}",
                a.x, a.y, a.z, b.x, b.y, b.z, radius
            ),
        }
    }
}

impl FromStr for ShapeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let mut words = s.split_whitespace();
        let kind = words
            .next()
            .ok_or_else(|| Error::config("empty shape description"))?;
        let nums = words
            .map(|w| {
                w.parse::<f64>()
                    .map_err(|_| Error::config(format!("bad number `{w}` in shape `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let want = |n: usize| -> Result<(), Error> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "shape `{kind}` takes {n} numbers, got {}",
                    nums.len()
                )))
            }
        };
        let v = |i: usize| Vec3::new(nums[i], nums[i + 1], nums[i + 2]);
        let shape = match kind {
            "sphere" => {
                want(4)?;
                ShapeSpec::Sphere {
                    center: v(0),
                    radius: nums[3],
                }
            }
            "box" => {
                want(6)?;
                ShapeSpec::Box {
                    center: v(0),
                    half_extents: v(3),
                }
            }
            "shell" => {
                want(5)?;
                ShapeSpec::Shell {
                    center: v(0),
                    radius: nums[3],
                    thickness: nums[4],
                }
            }
            "rounded_box" => {
                want(7)?;
                ShapeSpec::RoundedBox {
                    center: v(0),
                    half_extents: v(3),
                    radius: nums[6],
                }
            }
            "capsule" => {
                want(7)?;
                ShapeSpec::Capsule {
                    a: v(0),
                    b: v(3),
                    radius: nums[6],
                }
            }
            other => return Err(Error::config(format!("unknown shape kind `{other}`"))),
        };
        shape.validate()?;
        Ok(shape)
    }
}
