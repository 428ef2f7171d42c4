//! Physics-guided optimization of Gaussian-splat particles.
//!
//! Loss gradients on particle centers are injected as initial velocities
//! of an MLS-MPM simulation. A short burst of substeps then turns them into
//! position updates that respect elasticity and a static background
//! boundary given as a signed distance field.
//!
//! # Modules
//!
//! - [`scene`]: particles, objects, domain configuration, synthetic scenes
//! - [`materials`]: constitutive models (Kirchhoff stress)
//! - [`mpm`]: particle-to-grid, grid update, grid-to-particle substeps
//! - [`sdf`]: background signed distance fields and boundary projection
//! - [`losses`]: splat renderer, image loss, score providers
//! - [`optimizer`]: the physics-in-the-loop step and its baselines
//! - [`metrics`]: penetration, conservation, PSNR, SSIM
//! - [`io`]: PLY, run configuration, telemetry CSV

// `!(x > 0.0)` is used on purpose so that NaN fails validation; indexed
// loops mirror the per-axis formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod io;
pub mod losses;
pub mod materials;
pub mod metrics;
pub mod mpm;
pub mod optimizer;
pub mod scene;
pub mod sdf;
pub mod shape;

pub use error::{Error, Result};
pub use losses::{Camera, LossGradient, LossWeights, RenderedImage, ScoreProvider, ShapePrior};
pub use materials::{ConstitutiveModel, MaterialParams};
pub use metrics::{Image, MetricReport};
pub use mpm::{GridState, MpmSolver, SubstepParams};
pub use optimizer::{OptimConfig, OptimMode, OptimTelemetry, StepRecord};
pub use scene::{Mobility, ParticleSet, SceneConfig, SplatParticle};
pub use sdf::{BoundaryMode, SdfField};
pub use shape::ShapeSpec;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
