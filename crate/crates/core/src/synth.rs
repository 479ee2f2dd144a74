//! Analytic scenes with known density and band-limited color, the volumes
//! baked from them, their renderings, and controlled geometric damage.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{march_ray, DensityField, DensityVolume, Ray, OPTICAL_DEPTH_CUTOFF};
use crate::geom::{Color, GridIndex, Vec3};
use crate::observation::{CameraModel, ImageBuffer, Intrinsics, Pose};

/// Opacity scale: `SIGMA_PER_WIDTH / smoothing` is the density inside.
pub const SIGMA_PER_WIDTH: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box with edges and corners rounded by `rounding`.
    Box { center: Vec3, half: Vec3, rounding: f64 },
}

impl Shape {
    /// Signed distance, negative inside.
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { center, half, rounding } => {
                let d = p - center;
                let h = half - Vec3::splat(rounding);
                let q = Vec3::new(d.x.abs() - h.x, d.y.abs() - h.y, d.z.abs() - h.z);
                q.max(Vec3::ZERO).norm() + q.x.max(q.y).max(q.z).min(0.0) - rounding
            }
        }
    }

    /// Closest surface point and outward normal. Inside the core of a box
    /// the face is the one whose plane is nearest along its own axis.
    pub fn surface(&self, p: Vec3) -> (Vec3, Vec3) {
        match *self {
            Shape::Sphere { center, radius } => {
                let n = (p - center).normalize().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
                (center + n * radius, n)
            }
            Shape::Box { center, half, rounding } => {
                let d = p - center;
                let h = half - Vec3::splat(rounding);
                let core = Vec3::new(d.x.clamp(-h.x, h.x), d.y.clamp(-h.y, h.y), d.z.clamp(-h.z, h.z));
                if let Ok(n) = (d - core).normalize() {
                    return (center + core + n * rounding, n);
                }
                let q = [d.x.abs() - half.x, d.y.abs() - half.y, d.z.abs() - half.z];
                let axis = (0..3).fold(0, |best, k| if q[k] > q[best] { k } else { best });
                let mut s = [
                    d.x.clamp(-half.x, half.x),
                    d.y.clamp(-half.y, half.y),
                    d.z.clamp(-half.z, half.z),
                ];
                let sign = if d[axis] < 0.0 { -1.0 } else { 1.0 };
                s[axis] = sign * half.to_array()[axis];
                let mut n = [0.0; 3];
                n[axis] = sign;
                (center + Vec3::from_array(s), Vec3::from_array(n))
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Shape::Box { half, rounding, .. } => {
                let h = half - Vec3::splat(rounding);
                let pi = std::f64::consts::PI;
                8.0 * (h.x * h.y + h.y * h.z + h.z * h.x)
                    + 2.0 * pi * rounding * 2.0 * (h.x + h.y + h.z)
                    + 4.0 * pi * rounding * rounding
            }
        }
    }
}

/// How density falls off around the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// Full density inside, linear ramp one smoothing width wide centered
    /// on the surface.
    Solid,
    /// Tent of half-width `smoothing` around the surface, zero elsewhere.
    Shell,
}

/// Surface color as a function of position and outgoing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Appearance {
    Constant(Color),
    /// Two tones on a checker partition of the surface.
    Checker { a: Color, b: Color },
    /// Checker tones plus `k1 (n.d) + k2 (n.d)^2` per channel.
    Glossy { a: Color, b: Color, k1: Color, k2: Color },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Empty,
    LambertianSphere,
    TexturedSphere,
    TexturedCube,
    GlossySphere,
    SphereShell,
}

impl SceneKind {
    pub const ALL: [SceneKind; 6] = [
        SceneKind::Empty,
        SceneKind::LambertianSphere,
        SceneKind::TexturedSphere,
        SceneKind::TexturedCube,
        SceneKind::GlossySphere,
        SceneKind::SphereShell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Empty => "empty",
            SceneKind::LambertianSphere => "lambertian-sphere",
            SceneKind::TexturedSphere => "textured-sphere",
            SceneKind::TexturedCube => "textured-cube",
            SceneKind::GlossySphere => "glossy-sphere",
            SceneKind::SphereShell => "sphere-shell",
        }
    }

    pub fn parse(s: &str) -> Option<SceneKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

pub const SPHERE_RADIUS: f64 = 0.55;
pub const CUBE_HALF: f64 = 0.45;
pub const CUBE_ROUNDING: f64 = 0.1;
const SPHERE_CELLS: (f64, f64) = (16.0, 8.0);
const CUBE_CELL: f64 = 0.2;

const TONE_A: Color = Color::new(0.9, 0.6, 0.2);
const TONE_B: Color = Color::new(0.15, 0.3, 0.8);

/// Closed-form scene inside `[bbox_min, bbox_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub kind: SceneKind,
    pub shape: Option<Shape>,
    pub profile: Profile,
    pub appearance: Appearance,
    /// Width of the density ramp in world units.
    pub smoothing: f64,
    pub sigma_max: f64,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
}

impl AnalyticScene {
    /// Scene of the given kind in `[-1, 1]^3` with an explicit ramp width.
    pub fn new(kind: SceneKind, smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0) {
            return Err(Error::InvalidConfig(format!("smoothing must be positive, got {smoothing}")));
        }
        let sphere = Shape::Sphere {
            center: Vec3::ZERO,
            radius: SPHERE_RADIUS,
        };
        let checker = Appearance::Checker { a: TONE_A, b: TONE_B };
        let (shape, profile, appearance) = match kind {
            SceneKind::Empty => (None, Profile::Solid, Appearance::Constant(Color::BLACK)),
            SceneKind::LambertianSphere => (Some(sphere), Profile::Solid, Appearance::Constant(Color::new(0.8, 0.5, 0.3))),
            SceneKind::TexturedSphere => (Some(sphere), Profile::Solid, checker),
            SceneKind::TexturedCube => (
                Some(Shape::Box {
                    center: Vec3::ZERO,
                    half: Vec3::splat(CUBE_HALF),
                    rounding: CUBE_ROUNDING,
                }),
                Profile::Solid,
                checker,
            ),
            SceneKind::GlossySphere => (
                Some(sphere),
                Profile::Solid,
                Appearance::Glossy {
                    a: Color::new(0.6, 0.45, 0.15),
                    b: Color::new(0.15, 0.2, 0.55),
                    k1: Color::new(0.2, 0.2, 0.15),
                    k2: Color::new(0.15, 0.15, 0.2),
                },
            ),
            SceneKind::SphereShell => (Some(sphere), Profile::Shell, checker),
        };
        Ok(Self {
            kind,
            shape,
            profile,
            appearance,
            smoothing,
            sigma_max: SIGMA_PER_WIDTH / smoothing,
            bbox_min: Vec3::splat(-1.0),
            bbox_max: Vec3::splat(1.0),
        })
    }

    /// Scene whose ramp is one voxel edge of a `resolution`^3 grid.
    pub fn for_resolution(kind: SceneKind, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidConfig(format!("resolution must be at least 2, got {resolution}")));
        }
        Self::new(kind, 2.0 / (resolution - 1) as f64)
    }

    pub fn sdf(&self, p: Vec3) -> Option<f64> {
        self.shape.map(|s| s.sdf(p))
    }

    fn pattern(&self, s: Vec3, n: Vec3) -> bool {
        match self.shape {
            Some(Shape::Sphere { .. }) => {
                let theta = n.z.clamp(-1.0, 1.0).acos();
                let phi = n.y.atan2(n.x) + std::f64::consts::PI;
                let i = (phi / std::f64::consts::TAU * SPHERE_CELLS.0).floor() as i64;
                let j = (theta / std::f64::consts::PI * SPHERE_CELLS.1).floor() as i64;
                (i + j).rem_euclid(2) == 0
            }
            Some(Shape::Box { center, .. }) => {
                let d = s - center;
                let k = (d.x / CUBE_CELL).floor() as i64 + (d.y / CUBE_CELL).floor() as i64 + (d.z / CUBE_CELL).floor() as i64;
                k.rem_euclid(2) == 0
            }
            None => true,
        }
    }

    /// Color leaving the surface near `p` toward unit direction `d`.
    pub fn color(&self, p: Vec3, d: Vec3) -> Color {
        let Some(shape) = self.shape else {
            return Color::BLACK;
        };
        let (s, n) = shape.surface(p);
        match self.appearance {
            Appearance::Constant(c) => c,
            Appearance::Checker { a, b } => {
                if self.pattern(s, n) {
                    a
                } else {
                    b
                }
            }
            Appearance::Glossy { a, b, k1, k2 } => {
                let base = if self.pattern(s, n) { a } else { b };
                let x = n.dot(d);
                let ch = |t: f64, l: f64, q: f64| t + l * x + q * x * x;
                Color::new(ch(base.r, k1.r, k2.r), ch(base.g, k1.g, k2.g), ch(base.b, k1.b, k2.b)).clamp01()
            }
        }
    }

    /// Sphere-traces `ray` to where the density can first be non-zero.
    pub fn first_density(&self, ray: &Ray) -> Option<f64> {
        let shape = self.shape?;
        let band = self.smoothing;
        let mut t = ray.t_near;
        while t <= ray.t_far {
            let d = shape.sdf(ray.at(t));
            if d <= 1.01 * band {
                return Some(t);
            }
            t += d - band;
        }
        None
    }

    /// `n` points uniformly distributed over the analytic surface.
    pub fn surface_points(&self, n: usize, seed: u64) -> Result<Vec<Vec3>> {
        let Some(shape) = self.shape else {
            return Err(Error::EmptyCloud);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| match shape {
                Shape::Sphere { center, radius } => {
                    let z: f64 = rng.gen_range(-1.0..1.0);
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let s = (1.0 - z * z).sqrt();
                    center + Vec3::new(s * a.cos(), s * a.sin(), z) * radius
                }
                Shape::Box { center, half, rounding } => center + rounded_box_point(&mut rng, half, rounding),
            })
            .collect())
    }
}

// Area-uniform point on a rounded box centered at the origin: flat faces,
// quarter-cylinder edges and sphere-octant corners.
fn rounded_box_point(rng: &mut ChaCha8Rng, half: Vec3, r: f64) -> Vec3 {
    let h = (half - Vec3::splat(r)).to_array();
    let pi = std::f64::consts::PI;
    let faces = [h[1] * h[2], h[0] * h[2], h[0] * h[1]].map(|a| 8.0 * a);
    let edges = h.map(|l| 4.0 * pi * r * l);
    let corners = 4.0 * pi * r * r;
    let total = faces.iter().sum::<f64>() + edges.iter().sum::<f64>() + corners;
    let sign = |rng: &mut ChaCha8Rng| if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let mut u = rng.gen::<f64>() * total;
    let mut q = [0.0; 3];
    for k in 0..3 {
        if u < faces[k] {
            for j in 0..3 {
                q[j] = if h[j] > 0.0 { rng.gen_range(-h[j]..h[j]) } else { 0.0 };
            }
            q[k] = sign(rng) * (h[k] + r);
            return Vec3::from_array(q);
        }
        u -= faces[k];
    }
    for k in 0..3 {
        if u < edges[k] {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let phi = rng.gen_range(0.0..pi / 2.0);
            q[k] = if h[k] > 0.0 { rng.gen_range(-h[k]..h[k]) } else { 0.0 };
            q[a] = sign(rng) * (h[a] + r * phi.cos());
            q[b] = sign(rng) * (h[b] + r * phi.sin());
            return Vec3::from_array(q);
        }
        u -= edges[k];
    }
    let z: f64 = rng.gen_range(-1.0..1.0);
    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    let d = [s * a.cos(), s * a.sin(), z];
    for k in 0..3 {
        q[k] = d[k].signum() * (h[k] + r * d[k].abs());
    }
    Vec3::from_array(q)
}

impl DensityField for AnalyticScene {
    fn density(&self, p: Vec3) -> f64 {
        let Some(d) = self.sdf(p) else {
            return 0.0;
        };
        let w = self.smoothing;
        let f = match self.profile {
            Profile::Solid => (0.5 - d / w).clamp(0.0, 1.0),
            Profile::Shell => (1.0 - d.abs() / w).clamp(0.0, 1.0),
        };
        self.sigma_max * f
    }

    fn bounds(&self) -> Option<(Vec3, Vec3)> {
        Some((self.bbox_min, self.bbox_max))
    }
}

/// Samples the scene density at every vertex of a `resolution`^3 grid over
/// the scene box.
pub fn bake_volume(scene: &AnalyticScene, resolution: usize) -> Result<DensityVolume> {
    if resolution < 16 {
        return Err(Error::InvalidConfig(format!("resolution must be at least 16, got {resolution}")));
    }
    let vol = DensityVolume::zeros([resolution; 3], scene.bbox_min, scene.bbox_max)?;
    let data = (0..vol.num_vertices())
        .into_par_iter()
        .map(|i| scene.density(vol.vertex_position(GridIndex::from_linear(i, vol.resolution()))) as f32)
        .collect();
    vol.with_data(data)
}

/// Renders one camera: per-pixel quadrature of the analytic density with the
/// analytic color, black background.
pub fn render_view(scene: &AnalyticScene, cam: &CameraModel, step: f64) -> Result<ImageBuffer> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("render step must be positive, got {step}")));
    }
    let (w, h) = (cam.width, cam.height);
    let pixels = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let dir = cam.pixel_direction((i % w) as f64, (i / w) as f64);
            let ray = Ray {
                origin: cam.origin(),
                direction: dir,
                t_near: 0.0,
                t_far: f64::INFINITY,
            };
            let Some(mut ray) = ray.clipped_to(scene.bbox_min, scene.bbox_max) else {
                return Color::BLACK;
            };
            match scene.first_density(&ray) {
                Some(t) => ray.t_near = t,
                None => return Color::BLACK,
            }
            let mut acc = Color::BLACK;
            let mut march = march_ray(scene, ray, step);
            while let Some(s) = march.next() {
                let wgt = s.weight();
                if wgt > 0.0 {
                    acc += scene.color(ray.at(s.t), -dir) * wgt;
                }
                if march.optical_depth() > OPTICAL_DEPTH_CUTOFF {
                    break;
                }
            }
            acc.clamp01()
        })
        .collect();
    ImageBuffer::new(w, h, pixels)
}

pub fn render_views(scene: &AnalyticScene, cams: &[CameraModel], step: f64) -> Result<Vec<ImageBuffer>> {
    cams.iter().map(|c| render_view(scene, c, step)).collect()
}

/// The same cameras carrying renderings of `scene`.
pub fn with_rendered_images(scene: &AnalyticScene, cams: &[CameraModel], step: f64) -> Result<Vec<CameraModel>> {
    render_views(scene, cams, step)?
        .into_iter()
        .zip(cams)
        .map(|(img, c)| c.with_image(Arc::new(img)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Perturbation {
    /// Max filter over the voxel ball of this radius.
    Dilate { radius: usize },
    /// Min filter over the voxel ball of this radius.
    Erode { radius: usize },
    /// Whole-voxel shift with zero fill.
    Translate { offset: [i64; 3] },
    /// Gaussian blobs in empty space; `radius` is the blob sigma in voxels.
    Floaters { count: usize, radius: f64, seed: u64 },
}

impl Perturbation {
    pub fn name(&self) -> String {
        match self {
            Perturbation::Dilate { radius } => format!("dilate-{radius}"),
            Perturbation::Erode { radius } => format!("erode-{radius}"),
            Perturbation::Translate { offset } => format!("translate-{}-{}-{}", offset[0], offset[1], offset[2]),
            Perturbation::Floaters { count, .. } => format!("floaters-{count}"),
        }
    }

    /// Dilate 2, erode 2, translate 2 along x, and 5 floaters.
    pub fn standard_set(seed: u64) -> Vec<Perturbation> {
        vec![
            Perturbation::Dilate { radius: 2 },
            Perturbation::Erode { radius: 2 },
            Perturbation::Translate { offset: [2, 0, 0] },
            Perturbation::Floaters {
                count: 5,
                radius: 2.0,
                seed,
            },
        ]
    }
}

fn ball_offsets(radius: usize) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let mut out = Vec::new();
    for z in -r..=r {
        for y in -r..=r {
            for x in -r..=r {
                if x * x + y * y + z * z <= r * r {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn morph(vol: &DensityVolume, radius: usize, pick: fn(f32, f32) -> f32) -> Vec<f32> {
    let res = vol.resolution();
    let data = vol.data();
    let offsets = ball_offsets(radius);
    (0..vol.num_vertices())
        .into_par_iter()
        .map(|i| {
            let g = GridIndex::from_linear(i, res);
            let mut acc = data[i];
            for o in &offsets {
                let (x, y, z) = (g.ix as i64 + o[0], g.iy as i64 + o[1], g.iz as i64 + o[2]);
                if x < 0 || y < 0 || z < 0 || x >= res[0] as i64 || y >= res[1] as i64 || z >= res[2] as i64 {
                    continue;
                }
                acc = pick(acc, data[x as usize + res[0] * (y as usize + res[1] * z as usize)]);
            }
            acc
        })
        .collect()
}

/// Applies one geometric perturbation.
pub fn apply_perturbation(vol: &DensityVolume, p: &Perturbation) -> Result<DensityVolume> {
    let res = vol.resolution();
    match *p {
        Perturbation::Dilate { radius } | Perturbation::Erode { radius } if radius == 0 => {
            Err(Error::InvalidConfig("perturbation radius must be positive".into()))
        }
        Perturbation::Dilate { radius } => vol.with_data(morph(vol, radius, f32::max)),
        Perturbation::Erode { radius } => {
            let data = morph(vol, radius, f32::min);
            if data.iter().all(|&v| v == 0.0) {
                return Err(Error::DegeneratePerturbation(format!(
                    "erosion by {radius} voxels removes the whole field"
                )));
            }
            vol.with_data(data)
        }
        Perturbation::Translate { offset } => {
            if offset == [0, 0, 0] {
                return Err(Error::InvalidConfig("translation must be non-zero".into()));
            }
            let src = vol.data();
            let mut data = vec![0.0f32; src.len()];
            for (i, out) in data.iter_mut().enumerate() {
                let g = GridIndex::from_linear(i, res);
                let (x, y, z) = (g.ix as i64 - offset[0], g.iy as i64 - offset[1], g.iz as i64 - offset[2]);
                if x >= 0 && y >= 0 && z >= 0 && x < res[0] as i64 && y < res[1] as i64 && z < res[2] as i64 {
                    *out = src[x as usize + res[0] * (y as usize + res[1] * z as usize)];
                }
            }
            vol.with_data(data)
        }
        Perturbation::Floaters { count, radius, seed } => add_floaters(vol, count, radius, seed),
    }
}

/// Extra voxels beyond the clearance within which a floater must have some
/// existing density, so that it sits in front of the object in some views.
pub const FLOATER_REACH: usize = 6;

// Blob centers sit on vertices whose ball of radius `3 + 3 sigma` voxels is
// empty but whose ball `FLOATER_REACH` voxels larger is not. A blob that
// only ever projects onto background would see constant black and be
// invisible to any photometric measure.
fn add_floaters(vol: &DensityVolume, count: usize, sigma: f64, seed: u64) -> Result<DensityVolume> {
    if count == 0 || !(sigma > 0.0) {
        return Err(Error::InvalidConfig("floaters need a positive count and radius".into()));
    }
    let res = vol.resolution();
    let amplitude = vol.max_density().max(1.0);
    let extent = (3.0 * sigma).ceil() as i64;
    let clearance = 3 + extent;
    let reach = clearance + FLOATER_REACH as i64;
    let offsets = ball_offsets(reach as usize);
    let mut data = vol.data().to_vec();
    let original = vol.data();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = extent as usize + 1;
    if res.iter().any(|&n| n <= 2 * margin) {
        return Err(Error::DegeneratePerturbation("volume too small for floaters".into()));
    }
    let at = |x: i64, y: i64, z: i64| -> Option<usize> {
        (x >= 0 && y >= 0 && z >= 0 && x < res[0] as i64 && y < res[1] as i64 && z < res[2] as i64)
            .then(|| x as usize + res[0] * (y as usize + res[1] * z as usize))
    };
    let admissible = |c: [i64; 3]| {
        let mut near = false;
        for o in &offsets {
            let Some(i) = at(c[0] + o[0], c[1] + o[1], c[2] + o[2]) else {
                continue;
            };
            if original[i] != 0.0 {
                if o[0] * o[0] + o[1] * o[1] + o[2] * o[2] <= clearance * clearance {
                    return false;
                }
                near = true;
            }
        }
        near
    };
    let mut placed: Vec<[i64; 3]> = Vec::new();
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > 20_000 {
            return Err(Error::DegeneratePerturbation(format!(
                "could not place {count} floaters in empty space"
            )));
        }
        let c = [
            rng.gen_range(margin..res[0] - margin) as i64,
            rng.gen_range(margin..res[1] - margin) as i64,
            rng.gen_range(margin..res[2] - margin) as i64,
        ];
        let apart = placed.iter().all(|p| {
            let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] > (2 * extent + 1) * (2 * extent + 1)
        });
        if !(apart && admissible(c)) {
            continue;
        }
        for z in -extent..=extent {
            for y in -extent..=extent {
                for x in -extent..=extent {
                    let r2 = (x * x + y * y + z * z) as f64;
                    if r2 > (extent * extent) as f64 {
                        continue;
                    }
                    if let Some(i) = at(c[0] + x, c[1] + y, c[2] + z) {
                        let v = amplitude * (-0.5 * r2 / (sigma * sigma)).exp() as f32;
                        data[i] = data[i].max(v);
                    }
                }
            }
        }
        placed.push(c);
    }
    vol.with_data(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RigKind {
    /// Evenly spaced on a horizontal circle around the target.
    Ring,
    /// Spread over the upper hemisphere (z >= target z).
    Hemisphere,
    /// Spread over the whole sphere.
    Sphere,
}

impl RigKind {
    pub fn parse(s: &str) -> Option<RigKind> {
        match s {
            "ring" => Some(RigKind::Ring),
            "hemisphere" => Some(RigKind::Hemisphere),
            "sphere" => Some(RigKind::Sphere),
            _ => None,
        }
    }
}

/// Image size and horizontal field of view shared by all rig cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl Default for Sensor {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            fov_deg: 50.0,
        }
    }
}

impl Sensor {
    pub fn intrinsics(&self) -> Intrinsics {
        let f = 0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        }
    }
}

/// `count` cameras at distance `radius` from `target`, all looking at it,
/// with black placeholder images.
pub fn camera_rig(kind: RigKind, count: usize, radius: f64, target: Vec3, sensor: Sensor) -> Result<Vec<CameraModel>> {
    if count < 2 {
        return Err(Error::InvalidConfig(format!("a rig needs at least 2 cameras, got {count}")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("rig radius must be positive, got {radius}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let image = Arc::new(ImageBuffer::filled(sensor.width, sensor.height, Color::BLACK));
    (0..count)
        .map(|i| {
            let u = (i as f64 + 0.5) / count as f64;
            let dir = match kind {
                RigKind::Ring => {
                    let a = i as f64 * std::f64::consts::TAU / count as f64;
                    Vec3::new(a.cos(), a.sin(), 0.0)
                }
                RigKind::Hemisphere | RigKind::Sphere => {
                    // Stay clear of the poles where the up vector degenerates.
                    let z = match kind {
                        RigKind::Hemisphere => 0.95 * (1.0 - u),
                        _ => 0.95 * (1.0 - 2.0 * u),
                    };
                    let s = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    Vec3::new(s * a.cos(), s * a.sin(), z)
                }
            };
            let eye = target + dir * radius;
            let pose = Pose::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0))?;
            Ok(CameraModel::new(format!("cam_{i:03}"), sensor.intrinsics(), pose, image.clone()))
        })
        .collect()
}

/// Everything `synth` produces for one scene.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: AnalyticScene,
    pub volume: DensityVolume,
    pub cameras: Vec<CameraModel>,
    pub variants: Vec<(Perturbation, DensityVolume)>,
    pub surface: Vec<Vec3>,
}

/// Knobs of [`generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub resolution: usize,
    /// Ramp width of the scene the images are rendered from; `None` uses
    /// one voxel edge at `resolution`.
    pub image_smoothing: Option<f64>,
    pub rig: RigKind,
    pub cameras: usize,
    pub rig_radius: f64,
    pub sensor: Sensor,
    pub seed: u64,
    pub surface_points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            resolution: 96,
            image_smoothing: None,
            rig: RigKind::Hemisphere,
            cameras: 24,
            rig_radius: 3.0,
            sensor: Sensor::default(),
            seed: 0,
            surface_points: 20_000,
        }
    }
}

/// Images rendered from the scene at `smoothing`, with a step of a quarter
/// of the ramp width.
pub fn rendered_rig(kind: SceneKind, smoothing: f64, cfg: &SynthConfig) -> Result<Vec<CameraModel>> {
    let scene = AnalyticScene::new(kind, smoothing)?;
    let cams = camera_rig(cfg.rig, cfg.cameras, cfg.rig_radius, Vec3::ZERO, cfg.sensor)?;
    with_rendered_images(&scene, &cams, smoothing / 4.0)
}

/// Ground-truth volume, rendered cameras, the standard perturbations that
/// fit at this resolution, and a surface point cloud for one scene kind.
pub fn generate(kind: SceneKind, cfg: &SynthConfig) -> Result<GeneratedScene> {
    let scene = AnalyticScene::for_resolution(kind, cfg.resolution)?;
    let volume = bake_volume(&scene, cfg.resolution)?;
    let cameras = rendered_rig(kind, cfg.image_smoothing.unwrap_or(scene.smoothing), cfg)?;
    let variants = if kind == SceneKind::Empty {
        Vec::new()
    } else {
        let mut out = Vec::new();
        for p in Perturbation::standard_set(cfg.seed) {
            match apply_perturbation(&volume, &p) {
                Ok(v) => out.push((p, v)),
                Err(Error::DegeneratePerturbation(msg)) => log::warn!("skipping {}: {msg}", p.name()),
                Err(e) => return Err(e),
            }
        }
        out
    };
    let surface = match scene.shape {
        Some(_) => scene.surface_points(cfg.surface_points, cfg.seed)?,
        None => Vec::new(),
    };
    Ok(GeneratedScene {
        scene,
        volume,
        cameras,
        variants,
        surface,
    })
}

#[derive(Serialize)]
struct SceneMeta<'a> {
    scene: &'a AnalyticScene,
    resolution: usize,
    rig: RigKind,
    cameras: usize,
    seed: u64,
    variants: Vec<(String, Perturbation)>,
}

/// Writes `volume.json`, `cameras.json` + `images/`, `variants/<name>/`,
/// `gt.ply` and `scene.json` under `dir`.
pub fn write_scene_dir(g: &GeneratedScene, cfg: &SynthConfig, dir: &std::path::Path) -> Result<()> {
    use crate::io;
    std::fs::create_dir_all(dir)?;
    io::save_volume(&g.volume, &dir.join("volume.json"))?;
    io::save_cameras(&g.cameras, &dir.join("cameras.json"))?;
    for (p, v) in &g.variants {
        io::save_volume(v, &dir.join("variants").join(p.name()).join("volume.json"))?;
    }
    if !g.surface.is_empty() {
        io::write_ply(&dir.join("gt.ply"), &g.surface, &[], io::PlyFormat::BinaryLittleEndian)?;
    }
    let meta = SceneMeta {
        scene: &g.scene,
        resolution: cfg.resolution,
        rig: cfg.rig,
        cameras: cfg.cameras,
        seed: cfg.seed,
        variants: g.variants.iter().map(|(p, _)| (p.name(), *p)).collect(),
    };
    std::fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::project;

    fn ring(n: usize, sensor: Sensor) -> Vec<CameraModel> {
        camera_rig(RigKind::Ring, n, 3.0, Vec3::ZERO, sensor).unwrap()
    }

    #[test]
    fn empty_scene_bakes_to_zero_and_renders_black() {
        let s = AnalyticScene::for_resolution(SceneKind::Empty, 16).unwrap();
        let v = bake_volume(&s, 16).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        let sensor = Sensor {
            width: 24,
            height: 24,
            fov_deg: 50.0,
        };
        for img in render_views(&s, &ring(3, sensor), 0.05).unwrap() {
            assert!(img.pixels().iter().all(|&c| c == Color::BLACK));
        }
        assert!(bake_volume(&s, 15).is_err());
    }

    #[test]
    fn shell_density_is_confined_to_band() {
        let s = AnalyticScene::for_resolution(SceneKind::SphereShell, 32).unwrap();
        let v = bake_volume(&s, 32).unwrap();
        let mut nonzero = 0;
        for i in 0..v.num_vertices() {
            let p = v.vertex_position(GridIndex::from_linear(i, v.resolution()));
            if v.data()[i] > 0.0 {
                nonzero += 1;
                assert!((p.norm() - SPHERE_RADIUS).abs() < s.smoothing);
            }
        }
        assert!(nonzero > 100);
    }

    #[test]
    fn baked_volume_resamples_exactly_at_vertices() {
        let s = AnalyticScene::for_resolution(SceneKind::TexturedCube, 20).unwrap();
        let v = bake_volume(&s, 20).unwrap();
        for i in (0..v.num_vertices()).step_by(37) {
            let p = v.vertex_position(GridIndex::from_linear(i, v.resolution()));
            assert_eq!(v.density(p), v.data()[i] as f64);
        }
    }

    #[test]
    fn colors_stay_in_unit_cube() {
        for kind in SceneKind::ALL {
            let s = AnalyticScene::new(kind, 0.02).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..2000 {
                let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let Ok(d) = d.normalize() else { continue };
                let c = s.color(p, d);
                assert!(c.r >= 0.0 && c.r <= 1.0 && c.g >= 0.0 && c.g <= 1.0 && c.b >= 0.0 && c.b <= 1.0);
            }
        }
        // Glossy coefficients need no clamping on the front hemisphere.
        if let Appearance::Glossy { a, b, k1, k2 } = AnalyticScene::new(SceneKind::GlossySphere, 0.02).unwrap().appearance {
            for t in [a, b] {
                for x in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                    let c = t + k1 * x + k2 * (x * x);
                    assert!(c.r >= 0.0 && c.g >= 0.0 && c.b >= 0.0 && c.r <= 1.0 && c.g <= 1.0 && c.b <= 1.0);
                }
            }
        }
    }

    #[test]
    fn box_surface_projection() {
        let b = Shape::Box {
            center: Vec3::ZERO,
            half: Vec3::splat(0.5),
            rounding: 0.0,
        };
        let (s, n) = b.surface(Vec3::new(0.52, 0.1, -0.2));
        assert_eq!(s, Vec3::new(0.5, 0.1, -0.2));
        assert_eq!(n, Vec3::new(1.0, 0.0, 0.0));
        let (s, n) = b.surface(Vec3::new(0.1, -0.1, -0.45));
        assert_eq!(s, Vec3::new(0.1, -0.1, -0.5));
        assert_eq!(n, Vec3::new(0.0, 0.0, -1.0));
        assert!((b.sdf(Vec3::new(0.0, 0.0, 0.7)) - 0.2).abs() < 1e-15);
        assert!((b.sdf(Vec3::ZERO) + 0.5).abs() < 1e-15);

        let r = Shape::Box {
            center: Vec3::splat(0.1),
            half: Vec3::splat(0.5),
            rounding: 0.2,
        };
        // Corner of the rounded box along the diagonal.
        let corner = Vec3::splat(0.1 + 0.3 + 0.2 / 3f64.sqrt());
        assert!(r.sdf(corner).abs() < 1e-12);
        let (s, n) = r.surface(corner + Vec3::splat(0.05));
        assert!((s - corner).norm() < 1e-12);
        assert!((n - Vec3::splat(1.0 / 3f64.sqrt())).norm() < 1e-12);
        assert!((r.sdf(Vec3::new(0.1, 0.1, 0.7)) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn opaque_lambertian_sphere_renders_its_color() {
        let sensor = Sensor {
            width: 64,
            height: 64,
            fov_deg: 40.0,
        };
        let s = AnalyticScene::new(SceneKind::LambertianSphere, 0.01).unwrap();
        let Appearance::Constant(c) = s.appearance else { unreachable!() };
        let cams = ring(3, sensor);
        let imgs = render_views(&s, &cams, 0.004).unwrap();
        let pixel_angle = (0.5 * sensor.fov_deg.to_radians()).tan() / (0.5 * sensor.width as f64);
        for (cam, img) in cams.iter().zip(&imgs) {
            let o = cam.origin();
            let dist = o.norm();
            let pix = pixel_angle * dist;
            let mut fg = 0;
            for y in 0..sensor.height {
                for x in 0..sensor.width {
                    let d = cam.pixel_direction(x as f64, y as f64);
                    // Distance from the sphere center to the pixel's ray.
                    let b = (o - d * o.dot(d)).norm();
                    let px = img.get(x, y);
                    if b < SPHERE_RADIUS - 2.0 * s.smoothing {
                        fg += 1;
                        assert!((px - c).max_abs() < 1e-6, "{px:?}");
                    }
                    // Silhouette within one pixel of the analytic circle.
                    let inside = px.r > 0.5 * c.r;
                    if (b - SPHERE_RADIUS).abs() > pix {
                        assert_eq!(inside, b < SPHERE_RADIUS, "({x},{y}) b={b}");
                    }
                }
            }
            assert!(fg > 500);
        }
    }

    #[test]
    fn perturbation_basics() {
        let s = AnalyticScene::for_resolution(SceneKind::TexturedSphere, 24).unwrap();
        let v = bake_volume(&s, 24).unwrap();
        let d = apply_perturbation(&v, &Perturbation::Dilate { radius: 1 }).unwrap();
        let de = apply_perturbation(&d, &Perturbation::Erode { radius: 1 }).unwrap();
        for i in 0..v.num_vertices() {
            assert!(d.data()[i] >= v.data()[i]);
            assert!(de.data()[i] >= 0.0);
            // Closing of a convex body only adds density.
            assert!(de.data()[i] >= v.data()[i]);
        }
        let changed = (0..v.num_vertices()).filter(|&i| de.data()[i] != v.data()[i]).count();
        assert!(changed < v.num_vertices() / 100, "{changed}");

        let t1 = apply_perturbation(&v, &Perturbation::Translate { offset: [1, 0, 0] }).unwrap();
        let t11 = apply_perturbation(&t1, &Perturbation::Translate { offset: [1, 0, 0] }).unwrap();
        let t2 = apply_perturbation(&v, &Perturbation::Translate { offset: [2, 0, 0] }).unwrap();
        assert_eq!(t11, t2);
        assert_eq!(t2.get(GridIndex::new(13, 12, 12)).unwrap(), v.get(GridIndex::new(11, 12, 12)).unwrap());

        assert!(matches!(
            apply_perturbation(&v, &Perturbation::Erode { radius: 20 }),
            Err(Error::DegeneratePerturbation(_))
        ));
        assert!(apply_perturbation(&v, &Perturbation::Dilate { radius: 0 }).is_err());
    }

    #[test]
    fn floaters_are_seeded_and_in_empty_space() {
        let s = AnalyticScene::for_resolution(SceneKind::TexturedSphere, 48).unwrap();
        let v = bake_volume(&s, 48).unwrap();
        let p = Perturbation::Floaters {
            count: 5,
            radius: 1.5,
            seed: 3,
        };
        let a = apply_perturbation(&v, &p).unwrap();
        assert_eq!(a, apply_perturbation(&v, &p).unwrap());
        let q = Perturbation::Floaters {
            count: 5,
            radius: 1.5,
            seed: 4,
        };
        let b = apply_perturbation(&v, &q).unwrap();
        assert_ne!(a, b);
        let h = v.min_voxel_edge();
        let mut added = 0;
        for i in 0..v.num_vertices() {
            if a.data()[i] != v.data()[i] {
                added += 1;
                assert_eq!(v.data()[i], 0.0);
                let pos = v.vertex_position(GridIndex::from_linear(i, v.resolution()));
                assert!(pos.norm() - SPHERE_RADIUS > 3.0 * h, "{}", pos.norm());
            }
        }
        assert!(added >= 5 * 7);
    }

    #[test]
    fn rigs() {
        let sensor = Sensor::default();
        let cams = camera_rig(RigKind::Ring, 4, 3.0, Vec3::ZERO, sensor).unwrap();
        for (i, c) in cams.iter().enumerate() {
            let a = i as f64 * std::f64::consts::FRAC_PI_2;
            assert!((c.origin() - Vec3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.0)).norm() < 1e-12);
        }
        let target = Vec3::new(0.1, -0.2, 0.3);
        for kind in [RigKind::Ring, RigKind::Hemisphere, RigKind::Sphere] {
            let cams = camera_rig(kind, 17, 2.5, target, sensor).unwrap();
            for c in &cams {
                let (u, v) = project(c, target).unwrap();
                assert!((u - c.intrinsics.cx).abs() < 1e-9 && (v - c.intrinsics.cy).abs() < 1e-9);
                assert!(((c.origin() - target).norm() - 2.5).abs() < 1e-12);
                if kind == RigKind::Hemisphere {
                    assert!(c.origin().z >= target.z);
                }
            }
        }
        assert!(camera_rig(RigKind::Ring, 1, 3.0, Vec3::ZERO, sensor).is_err());
    }

    #[test]
    fn rounded_box_sampling_is_area_uniform() {
        let s = AnalyticScene::new(SceneKind::TexturedCube, 0.02).unwrap();
        let Some(shape) = s.shape else { unreachable!() };
        let pts = s.surface_points(40_000, 5).unwrap();
        // Fraction on the flat part of the +z face against its area share.
        let h = CUBE_HALF - CUBE_ROUNDING;
        let flat = pts.iter().filter(|p| (p.z - CUBE_HALF).abs() < 1e-12).count() as f64 / pts.len() as f64;
        let expect = 4.0 * h * h / shape.area();
        assert!((flat - expect).abs() < 4.0 * (expect * (1.0 - expect) / pts.len() as f64).sqrt());
    }

    #[test]
    fn surface_points_lie_on_surface() {
        for kind in [SceneKind::TexturedSphere, SceneKind::TexturedCube] {
            let s = AnalyticScene::new(kind, 0.02).unwrap();
            for p in s.surface_points(500, 2).unwrap() {
                assert!(s.sdf(p).unwrap().abs() < 1e-12);
            }
        }
        assert!(AnalyticScene::new(SceneKind::Empty, 0.02).unwrap().surface_points(5, 0).is_err());
    }
}
