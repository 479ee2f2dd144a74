//! Geometry-quality evaluation of radiance-field density volumes.
//!
//! A density volume is scored by how well the colors it implies at each
//! vertex, gathered from calibrated images through the volume's own
//! transmittance, are explained by a low-degree spherical-harmonics fit.
//! Surfaces in the right place see slowly varying color; misplaced ones mix
//! colors from different surface points and leave a larger residual.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod chamfer;
pub mod cli;
pub mod error;
pub mod fields;
pub mod geom;
pub mod io;
pub mod metric;
pub mod observation;
pub mod sh;
pub mod synth;

pub use error::{Error, Result};
pub use fields::DensityVolume;
pub use geom::{Color, EvalConfig, Vec3};
pub use metric::{compute_mrc, imrc, MetricReport, ResidualGrid};
pub use observation::CameraModel;
