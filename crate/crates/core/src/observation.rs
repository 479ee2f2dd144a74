//! Pinhole cameras, observation images and per-point observation gathering.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{transmittance_to_camera, DensityField, DensityVolume};
use crate::geom::{normalize, Color, EvalConfig, Vec3};

/// Row-major RGB image with channels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<Color>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<Color>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidConfig(format!(
                "image of {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, c: Color) -> Self {
        Self {
            width,
            height,
            pixels: vec![c; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Color] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Color {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Color) {
        self.pixels[y * self.width + x] = c;
    }
}

/// Bilinear blend of the four pixels around `(u, v)`; integer coordinates
/// address pixel centers. The caller keeps `(u, v)` inside the image.
pub fn sample_bilinear(img: &ImageBuffer, u: f64, v: f64) -> Color {
    debug_assert!(u >= 0.0 && v >= 0.0 && u <= (img.width - 1) as f64 && v <= (img.height - 1) as f64);
    let split = |c: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let c = c.clamp(0.0, (n - 1) as f64);
        let i = (c.floor() as usize).min(n - 2);
        (i, i + 1, c - i as f64)
    };
    let (x0, x1, fx) = split(u, img.width);
    let (y0, y1, fy) = split(v, img.height);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    pub fn from_matrix(k: [[f64; 3]; 3]) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("intrinsics: {msg}")));
        if k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
            return bad("expected [[fx,0,cx],[0,fy,cy],[0,0,1]]");
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return bad("focal lengths must be positive");
        }
        Ok(Self {
            fx: k[0][0],
            fy: k[1][1],
            cx: k[0][2],
            cy: k[1][2],
        })
    }
}

/// Rigid camera-to-world transform. Camera space looks along +z with x to
/// the right and y down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Row-major rotation; columns are the camera axes in world space.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

pub const ROTATION_TOLERANCE: f64 = 1e-6;

impl Pose {
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3, tol: f64) -> Result<Self> {
        check_rotation(&rotation, tol).map_err(Error::InvalidConfig)?;
        Ok(Self { rotation, translation })
    }

    /// Camera at `eye` looking at `target`, with `up` hinting the image's
    /// upward direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let z = normalize(target - eye)?;
        let x = normalize(z.cross(up)).or_else(|_| normalize(z.cross(Vec3::new(0.0, 1.0, 0.0))))?;
        let y = z.cross(x);
        let rotation = [[x.x, y.x, z.x], [x.y, y.y, z.y], [x.z, y.z, z.z]];
        Ok(Self {
            rotation,
            translation: eye,
        })
    }

    pub fn from_matrix(m: [[f64; 4]; 4], tol: f64) -> Result<Self> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidConfig("cam_to_world: last row must be [0,0,0,1]".into()));
        }
        let rotation = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        Self::new(rotation, Vec3::new(m[0][3], m[1][3], m[2][3]), tol)
    }

    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn to_world(&self, p: Vec3) -> Vec3 {
        self.rotate(p) + self.translation
    }

    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        )
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = p - self.translation;
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * d.x + r[1][0] * d.y + r[2][0] * d.z,
            r[0][1] * d.x + r[1][1] * d.y + r[2][1] * d.z,
            r[0][2] * d.x + r[1][2] * d.y + r[2][2] * d.z,
        )
    }
}

/// Checks `R^T R = I` elementwise within `tol` and `det R = +1`.
pub fn check_rotation(r: &[[f64; 3]; 3], tol: f64) -> std::result::Result<(), String> {
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err("rotation has non-finite entries".into());
    }
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > tol {
                return Err(format!("rotation is not orthonormal (column dot {i},{j} = {dot})"));
            }
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (det - 1.0).abs() > tol.max(1e-9) * 3.0 {
        return Err(format!("rotation determinant is {det}, expected +1"));
    }
    Ok(())
}

/// A calibrated view: intrinsics, pose and the observed image.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub image: Arc<ImageBuffer>,
}

impl CameraModel {
    pub fn new(id: impl Into<String>, intrinsics: Intrinsics, pose: Pose, image: Arc<ImageBuffer>) -> Self {
        Self {
            id: id.into(),
            width: image.width(),
            height: image.height(),
            intrinsics,
            pose,
            image,
        }
    }

    /// Camera center `o_k` in world space.
    pub fn origin(&self) -> Vec3 {
        self.pose.translation
    }

    /// Same camera with a different image (dimensions must match).
    pub fn with_image(&self, image: Arc<ImageBuffer>) -> Result<Self> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::Camera {
                id: self.id.clone(),
                msg: format!(
                    "image is {}x{}, camera expects {}x{}",
                    image.width(),
                    image.height(),
                    self.width,
                    self.height
                ),
            });
        }
        Ok(Self { image, ..self.clone() })
    }

    /// World-space unit direction of the ray through pixel `(u, v)`.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        let d = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        self.pose.rotate(d / d.norm())
    }

    /// Camera-space depth (z) of a world point.
    pub fn depth_of(&self, p: Vec3) -> f64 {
        self.pose.to_camera(p).z
    }
}

/// Continuous pixel coordinates of `v`, or `None` when it is behind the
/// camera or projects outside `[0, w-1] x [0, h-1]`.
pub fn project(cam: &CameraModel, v: Vec3) -> Option<(f64, f64)> {
    let p = cam.pose.to_camera(v);
    if !(p.z > 0.0) {
        return None;
    }
    let k = &cam.intrinsics;
    let u = k.fx * p.x / p.z + k.cx;
    let w = k.fy * p.y / p.z + k.cy;
    let inside = u >= 0.0 && w >= 0.0 && u <= (cam.width - 1) as f64 && w <= (cam.height - 1) as f64;
    inside.then_some((u, w))
}

/// Unit direction from `v` toward the camera center.
pub fn view_direction(cam: &CameraModel, v: Vec3) -> Result<Vec3> {
    normalize(cam.origin() - v)
}

/// One sample of a point's appearance from one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub color: Color,
    /// Unit vector pointing from the point toward the camera.
    pub direction: Vec3,
    pub confidence: f64,
}

/// Observations of one point, in camera order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    observations: Vec<Observation>,
    sum_confidence: f64,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Observation) {
        self.sum_confidence += obs.confidence;
        self.observations.push(obs);
    }

    pub fn as_slice(&self) -> &[Observation] {
        &self.observations
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn sum_confidence(&self) -> f64 {
        self.sum_confidence
    }

    /// Observations whose confidence exceeds `min_conf`.
    pub fn count_above(&self, min_conf: f64) -> usize {
        self.observations.iter().filter(|o| o.confidence > min_conf).count()
    }
}

impl FromIterator<Observation> for ObservationSet {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        let mut set = ObservationSet::new();
        for o in iter {
            set.push(o);
        }
        set
    }
}

impl<'a> IntoIterator for &'a ObservationSet {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;
    fn into_iter(self) -> Self::IntoIter {
        self.iter()
    }
}

/// Collects `<color, direction, confidence>` for `v` from every camera that
/// sees it. Cameras that do not see `v` are omitted, which downstream is the
/// same as a zero confidence.
pub fn gather_observations(v: Vec3, cams: &[CameraModel], vol: &DensityVolume, cfg: &EvalConfig) -> ObservationSet {
    gather_observations_in(v, cams, vol, cfg.step_for(vol.min_voxel_edge()))
}

/// [`gather_observations`] over any density field with an explicit step.
pub fn gather_observations_in<F: DensityField + ?Sized>(
    v: Vec3,
    cams: &[CameraModel],
    field: &F,
    step: f64,
) -> ObservationSet {
    let mut set = ObservationSet::new();
    for cam in cams {
        let Some((u, w)) = project(cam, v) else {
            continue;
        };
        let Ok(direction) = view_direction(cam, v) else {
            continue;
        };
        set.push(Observation {
            color: sample_bilinear(&cam.image, u, w),
            direction,
            confidence: transmittance_to_camera(field, v, cam.origin(), step),
        });
    }
    set
}
