//! Density volumes and the ray quadrature used for rendering weights and
//! camera-facing transmittance.

use crate::error::{Error, Result};
use crate::geom::{linear_index, normalize, GridIndex, Vec3};

/// Accumulated optical depth beyond which transmittance is reported as 0.
/// `exp(-64)` is far below any confidence threshold the pipeline uses.
pub const OPTICAL_DEPTH_CUTOFF: f64 = 64.0;

/// Anything that can be sampled for a non-negative density.
pub trait DensityField: Sync {
    fn density(&self, p: Vec3) -> f64;

    /// World-space box outside of which the density is zero, if any.
    fn bounds(&self) -> Option<(Vec3, Vec3)>;
}

/// Vertex-sampled density grid over an axis-aligned world box.
///
/// `resolution[i]` counts vertices, so each axis has `resolution[i] - 1`
/// cells. Values are stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVolume {
    resolution: [usize; 3],
    bbox_min: Vec3,
    bbox_max: Vec3,
    data: Vec<f32>,
}

impl DensityVolume {
    /// Builds a volume, rejecting negative or non-finite densities.
    pub fn new(resolution: [usize; 3], bbox_min: Vec3, bbox_max: Vec3, data: Vec<f32>) -> Result<Self> {
        let vol = Self::unchecked(resolution, bbox_min, bbox_max, data)?;
        if let Some((i, v)) = vol.data.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "density {v} at linear index {i} is not a finite non-negative value"
            )));
        }
        Ok(vol)
    }

    /// Builds a volume, clamping negative densities to zero. Returns the
    /// number of clamped entries. Non-finite values are still rejected.
    pub fn with_clamping(
        resolution: [usize; 3],
        bbox_min: Vec3,
        bbox_max: Vec3,
        mut data: Vec<f32>,
    ) -> Result<(Self, usize)> {
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite density {v} at linear index {i}")));
        }
        let mut clamped = 0;
        for v in data.iter_mut().filter(|v| **v < 0.0) {
            *v = 0.0;
            clamped += 1;
        }
        Ok((Self::unchecked(resolution, bbox_min, bbox_max, data)?, clamped))
    }

    /// All-zero volume.
    pub fn zeros(resolution: [usize; 3], bbox_min: Vec3, bbox_max: Vec3) -> Result<Self> {
        let n = resolution.iter().product();
        Self::unchecked(resolution, bbox_min, bbox_max, vec![0.0; n])
    }

    fn unchecked(resolution: [usize; 3], bbox_min: Vec3, bbox_max: Vec3, data: Vec<f32>) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig(format!(
                "resolution {resolution:?} needs at least 2 vertices per axis"
            )));
        }
        if !(bbox_min.is_finite() && bbox_max.is_finite())
            || !(bbox_min.x < bbox_max.x && bbox_min.y < bbox_max.y && bbox_min.z < bbox_max.z)
        {
            return Err(Error::InvalidConfig(format!(
                "bbox min {bbox_min:?} must be below max {bbox_max:?} on every axis"
            )));
        }
        let n: usize = resolution.iter().product();
        if data.len() != n {
            return Err(Error::InvalidConfig(format!(
                "data length {} does not match resolution {resolution:?} ({n})",
                data.len()
            )));
        }
        Ok(Self {
            resolution,
            bbox_min,
            bbox_max,
            data,
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox_min(&self) -> Vec3 {
        self.bbox_min
    }

    pub fn bbox_max(&self) -> Vec3 {
        self.bbox_max
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn num_vertices(&self) -> usize {
        self.data.len()
    }

    /// Edge lengths of one cell.
    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bbox_max - self.bbox_min;
        Vec3::new(
            e.x / (self.resolution[0] - 1) as f64,
            e.y / (self.resolution[1] - 1) as f64,
            e.z / (self.resolution[2] - 1) as f64,
        )
    }

    pub fn min_voxel_edge(&self) -> f64 {
        self.voxel_size().min_element()
    }

    /// Half the voxel edge; anisotropic grids use the mean of the per-axis
    /// half edges.
    pub fn half_voxel(&self) -> f64 {
        let s = self.voxel_size();
        (s.x + s.y + s.z) / 6.0
    }

    pub fn bbox_diagonal(&self) -> f64 {
        (self.bbox_max - self.bbox_min).norm()
    }

    pub fn vertex_position(&self, idx: GridIndex) -> Vec3 {
        let s = self.voxel_size();
        self.bbox_min + Vec3::new(idx.ix as f64 * s.x, idx.iy as f64 * s.y, idx.iz as f64 * s.z)
    }

    pub fn get(&self, idx: GridIndex) -> Result<f32> {
        Ok(self.data[linear_index(idx, self.resolution)?])
    }

    #[inline]
    fn at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data[ix + self.resolution[0] * (iy + self.resolution[1] * iz)] as f64
    }

    pub fn max_density(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn min_density(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.bbox_min.x
            && p.y >= self.bbox_min.y
            && p.z >= self.bbox_min.z
            && p.x <= self.bbox_max.x
            && p.y <= self.bbox_max.y
            && p.z <= self.bbox_max.z
    }

    /// Same grid and box, new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.resolution, self.bbox_min, self.bbox_max, data)
    }
}

impl DensityField for DensityVolume {
    fn density(&self, p: Vec3) -> f64 {
        sample_density(self, p)
    }

    fn bounds(&self) -> Option<(Vec3, Vec3)> {
        Some((self.bbox_min, self.bbox_max))
    }
}

#[inline]
fn cell_coord(g: f64, n: usize) -> (usize, f64) {
    // Snap coordinates that are a rounding error away from a vertex.
    let r = g.round();
    let g = if (g - r).abs() < 1e-9 { r } else { g };
    let i = (g.floor() as usize).min(n - 2);
    (i, g - i as f64)
}

/// Trilinear interpolation of vertex values on a grid over `[bmin, bmax]`;
/// `at(ix, iy, iz)` reads one vertex. Zero outside the box.
pub fn trilinear_with(
    res: [usize; 3],
    bmin: Vec3,
    bmax: Vec3,
    p: Vec3,
    at: impl Fn(usize, usize, usize) -> f64,
) -> f64 {
    if p.x < bmin.x || p.y < bmin.y || p.z < bmin.z || p.x > bmax.x || p.y > bmax.y || p.z > bmax.z {
        return 0.0;
    }
    let e = bmax - bmin;
    let g = p - bmin;
    let (ix, fx) = cell_coord(g.x / e.x * (res[0] - 1) as f64, res[0]);
    let (iy, fy) = cell_coord(g.y / e.y * (res[1] - 1) as f64, res[1]);
    let (iz, fz) = cell_coord(g.z / e.z * (res[2] - 1) as f64, res[2]);

    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(at(ix, iy, iz), at(ix + 1, iy, iz), fx);
    let c10 = lerp(at(ix, iy + 1, iz), at(ix + 1, iy + 1, iz), fx);
    let c01 = lerp(at(ix, iy, iz + 1), at(ix + 1, iy, iz + 1), fx);
    let c11 = lerp(at(ix, iy + 1, iz + 1), at(ix + 1, iy + 1, iz + 1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

/// Trilinear reconstruction of the vertex densities; zero outside the box.
pub fn sample_density(vol: &DensityVolume, p: Vec3) -> f64 {
    trilinear_with(vol.resolution, vol.bbox_min, vol.bbox_max, p, |x, y, z| vol.at(x, y, z)).max(0.0)
}

/// Parametric interval `[t0, t1]` where `origin + t * dir` lies in the box,
/// or `None` if the line misses it.
pub fn intersect_box(origin: Vec3, dir: Vec3, bmin: Vec3, bmax: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let (o, d, lo, hi) = (origin[axis], dir[axis], bmin[axis], bmax[axis]);
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo - o) / d, (hi - o) / d);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Transmittance from `v` toward the camera center `o_k`, estimated with
/// midpoint samples of width `step` starting at `v`. The path is truncated
/// where it leaves the field's bounds; the last interval uses its true
/// length. Returns 1 for a zero-length path and 0 once the optical depth
/// passes [`OPTICAL_DEPTH_CUTOFF`].
pub fn transmittance_to_camera<F: DensityField + ?Sized>(field: &F, v: Vec3, o_k: Vec3, step: f64) -> f64 {
    debug_assert!(step > 0.0);
    let len = v.distance(o_k);
    if len == 0.0 {
        return 1.0;
    }
    let dir = (o_k - v) / len;
    let (a, b) = match field.bounds() {
        Some((lo, hi)) => match intersect_box(v, dir, lo, hi) {
            Some((t0, t1)) => (t0.max(0.0), t1.min(len)),
            None => return 1.0,
        },
        None => (0.0, len),
    };
    if b <= a {
        return 1.0;
    }

    let mut tau = 0.0;
    let mut i = 0usize;
    loop {
        let s0 = a + i as f64 * step;
        if s0 >= b {
            break;
        }
        let s1 = (s0 + step).min(b);
        let mid = 0.5 * (s0 + s1);
        tau += field.density(v + dir * mid) * (s1 - s0);
        if tau > OPTICAL_DEPTH_CUTOFF {
            return 0.0;
        }
        i += 1;
    }
    (-tau).exp().clamp(0.0, 1.0)
}

/// A ray `origin + t * direction` restricted to `[t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// The direction is normalized on construction.
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        Ok(Self {
            origin,
            direction: normalize(direction)?,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Clips `[t_near, t_far]` to the given box. `None` if nothing is left.
    pub fn clipped_to(&self, bmin: Vec3, bmax: Vec3) -> Option<Ray> {
        let (t0, t1) = intersect_box(self.origin, self.direction, bmin, bmax)?;
        let (n, f) = (self.t_near.max(t0), self.t_far.min(t1));
        (n <= f).then_some(Ray {
            t_near: n,
            t_far: f,
            ..*self
        })
    }
}

/// One quadrature node of the rendering sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub t: f64,
    pub sigma: f64,
    pub delta: f64,
    /// Transmittance accumulated over all preceding samples.
    pub transmittance_before: f64,
    pub alpha: f64,
}

impl RaySample {
    /// Rendering weight `T * alpha`.
    pub fn weight(&self) -> f64 {
        self.transmittance_before * self.alpha
    }
}

/// Lazy sample sequence produced by [`march_ray`].
#[derive(Debug, Clone)]
pub struct RayMarch<'a, F: ?Sized> {
    field: &'a F,
    ray: Ray,
    step: f64,
    index: usize,
    prev_t: f64,
    optical_depth: f64,
}

impl<F: DensityField + ?Sized> Iterator for RayMarch<'_, F> {
    type Item = RaySample;

    fn next(&mut self) -> Option<RaySample> {
        let t = self.ray.t_near + self.index as f64 * self.step;
        if t > self.ray.t_far || self.ray.t_near > self.ray.t_far {
            return None;
        }
        let delta = if self.index == 0 { 0.0 } else { t - self.prev_t };
        let sigma = self.field.density(self.ray.at(t));
        let transmittance_before = (-self.optical_depth).exp();
        let alpha = 1.0 - (-sigma * delta).exp();
        self.optical_depth += sigma * delta;
        self.prev_t = t;
        self.index += 1;
        Some(RaySample {
            t,
            sigma,
            delta,
            transmittance_before,
            alpha,
        })
    }
}

impl<F: ?Sized> RayMarch<'_, F> {
    /// Optical depth accumulated over the samples produced so far.
    pub fn optical_depth(&self) -> f64 {
        self.optical_depth
    }
}

/// Uniform samples at `t_near, t_near + step, ...` up to `t_far`, with the
/// first interval length fixed to zero. Empty when `t_near > t_far`.
pub fn march_ray<F: DensityField + ?Sized>(field: &F, ray: Ray, step: f64) -> RayMarch<'_, F> {
    debug_assert!(step > 0.0);
    RayMarch {
        field,
        ray,
        step,
        index: 0,
        prev_t: ray.t_near,
        optical_depth: 0.0,
    }
}
