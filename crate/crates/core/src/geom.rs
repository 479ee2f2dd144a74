//! Shared value types: points, directions, colors, grid indexing and the
//! evaluation configuration.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or direction in world space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn component_mul(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn min_element(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector parallel to `self`.
    pub fn normalize(self) -> Result<Vec3> {
        normalize(self)
    }
}

/// L2 normalization. Fails on the zero vector (and on non-finite input).
pub fn normalize(v: Vec3) -> Result<Vec3> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    Ok(v / n)
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// RGB triple. Observed colors live in [0,1]; reconstructions and residuals
/// are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Color {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Color {
    pub const BLACK: Color = Color::new(0.0, 0.0, 0.0);

    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub const fn gray(v: f64) -> Self {
        Self::new(v, v, v)
    }

    /// Mean of the squared channels.
    pub fn mean_square(self) -> f64 {
        (self.r * self.r + self.g * self.g + self.b * self.b) / 3.0
    }

    pub fn max_abs(self) -> f64 {
        self.r.abs().max(self.g.abs()).max(self.b.abs())
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }

    pub fn clamp01(self) -> Color {
        Color::new(
            self.r.clamp(0.0, 1.0),
            self.g.clamp(0.0, 1.0),
            self.b.clamp(0.0, 1.0),
        )
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }
}

impl Add for Color {
    type Output = Color;
    fn add(self, o: Color) -> Color {
        Color::new(self.r + o.r, self.g + o.g, self.b + o.b)
    }
}

impl AddAssign for Color {
    fn add_assign(&mut self, o: Color) {
        self.r += o.r;
        self.g += o.g;
        self.b += o.b;
    }
}

impl Sub for Color {
    type Output = Color;
    fn sub(self, o: Color) -> Color {
        Color::new(self.r - o.r, self.g - o.g, self.b - o.b)
    }
}

impl SubAssign for Color {
    fn sub_assign(&mut self, o: Color) {
        self.r -= o.r;
        self.g -= o.g;
        self.b -= o.b;
    }
}

impl Mul<f64> for Color {
    type Output = Color;
    fn mul(self, s: f64) -> Color {
        Color::new(self.r * s, self.g * s, self.b * s)
    }
}

impl Mul<Color> for f64 {
    type Output = Color;
    fn mul(self, c: Color) -> Color {
        c * self
    }
}

/// Integer vertex coordinates on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridIndex {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
}

impl GridIndex {
    pub const fn new(ix: usize, iy: usize, iz: usize) -> Self {
        Self { ix, iy, iz }
    }

    /// Inverse of [`linear_index`]; `linear` must be below the vertex count.
    pub fn from_linear(linear: usize, res: [usize; 3]) -> Self {
        let ix = linear % res[0];
        let rest = linear / res[0];
        Self::new(ix, rest % res[1], rest / res[1])
    }
}

/// x-fastest linearization `ix + Nx * (iy + Ny * iz)`.
pub fn linear_index(idx: GridIndex, res: [usize; 3]) -> Result<usize> {
    if idx.ix >= res[0] || idx.iy >= res[1] || idx.iz >= res[2] {
        return Err(Error::OutOfBounds {
            ix: idx.ix,
            iy: idx.iy,
            iz: idx.iz,
            res,
        });
    }
    Ok(idx.ix + res[0] * (idx.iy + res[1] * idx.iz))
}

pub const DEFAULT_SH_DEGREE: usize = 2;
pub const MAX_SH_DEGREE: usize = 4;

/// Knobs of the metric computation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub sh_degree: usize,
    /// World-space march step; `None` means half the smallest voxel edge.
    pub ray_step: Option<f64>,
    pub skip_alpha_eps: f64,
    pub min_confidence_eps: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sh_degree: DEFAULT_SH_DEGREE,
            ray_step: None,
            skip_alpha_eps: 1e-7,
            min_confidence_eps: 1e-6,
        }
    }
}

impl EvalConfig {
    pub fn with_degree(mut self, degree: usize) -> Self {
        self.sh_degree = degree;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::UnsupportedDegree(self.sh_degree));
        }
        if let Some(step) = self.ray_step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "ray step must be positive, got {step}"
                )));
            }
        }
        if !(self.skip_alpha_eps >= 0.0) || !(self.min_confidence_eps >= 0.0) {
            return Err(Error::InvalidConfig("thresholds must be non-negative".into()));
        }
        Ok(())
    }

    /// The march step for a grid whose smallest voxel edge is `min_edge`.
    pub fn step_for(&self, min_edge: f64) -> f64 {
        self.ray_step.unwrap_or(0.5 * min_edge)
    }
}
