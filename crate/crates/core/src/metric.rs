//! Mean residual color over a density volume, its decibel form, and
//! diagnostic depth / residual renderings.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{march_ray, trilinear_with, DensityVolume, Ray};
use crate::geom::{EvalConfig, GridIndex, Vec3};
use crate::observation::{gather_observations_in, CameraModel, ObservationSet};
use crate::sh::fit_weighted_sequential;

/// Per-vertex numerator and denominator of the residual ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrid {
    resolution: [usize; 3],
    numerators: Vec<f64>,
    denominators: Vec<f64>,
}

impl ResidualGrid {
    pub fn zeros(resolution: [usize; 3]) -> Self {
        let n = resolution.iter().product();
        Self {
            resolution,
            numerators: vec![0.0; n],
            denominators: vec![0.0; n],
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn numerators(&self) -> &[f64] {
        &self.numerators
    }

    pub fn denominators(&self) -> &[f64] {
        &self.denominators
    }

    pub fn set(&mut self, linear: usize, numerator: f64, denominator: f64) {
        self.numerators[linear] = numerator;
        self.denominators[linear] = denominator;
    }

    /// Weighted mean squared residual at one vertex (0 where unweighted).
    pub fn ratio(&self, linear: usize) -> f64 {
        let d = self.denominators[linear];
        if d > 0.0 {
            self.numerators[linear] / d
        } else {
            0.0
        }
    }

    pub fn ratios(&self) -> Vec<f64> {
        (0..self.numerators.len()).map(|i| self.ratio(i)).collect()
    }
}

/// Summary of one metric evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub mrc: f64,
    /// `-10 log10(mrc)`; `+inf` when `mrc == 0`, see `imrc_infinite`.
    pub imrc_db: f64,
    pub imrc_infinite: bool,
    pub sh_degree: usize,
    pub resolution: [usize; 3],
    pub ray_step: f64,
    pub voxels_evaluated: usize,
    pub voxels_skipped_low_alpha: usize,
    pub voxels_skipped_no_observation: usize,
}

/// What happened at one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoxelTerms {
    SkippedLowAlpha,
    NoObservation,
    Evaluated { numerator: f64, denominator: f64 },
}

impl VoxelTerms {
    pub fn terms(self) -> (f64, f64) {
        match self {
            VoxelTerms::Evaluated { numerator, denominator } => (numerator, denominator),
            _ => (0.0, 0.0),
        }
    }
}

/// Opacity of a vertex over half a voxel, `1 - exp(-sigma * delta_v)`.
pub fn vertex_alpha(vol: &DensityVolume, linear: usize) -> f64 {
    1.0 - (-(vol.data()[linear] as f64) * vol.half_voxel()).exp()
}

fn residual_terms(obs: &ObservationSet, alpha: f64, degree: usize, min_conf: f64) -> VoxelTerms {
    match fit_weighted_sequential(obs.as_slice(), degree, min_conf) {
        Ok(fit) => {
            let mut numerator = 0.0;
            let mut denominator = 0.0;
            for (o, r) in obs.iter().zip(&fit.residuals) {
                let w = o.confidence * alpha;
                numerator += w * r.mean_square();
                denominator += w;
            }
            VoxelTerms::Evaluated { numerator, denominator }
        }
        Err(_) => VoxelTerms::NoObservation,
    }
}

/// Residual-ratio terms of one vertex: `sum_k T_k alpha_v |c~_k|^2` and
/// `sum_k T_k alpha_v`, with the squared residual averaged over RGB.
pub fn voxel_residual_terms(
    idx: GridIndex,
    vol: &DensityVolume,
    cams: &[CameraModel],
    cfg: &EvalConfig,
) -> Result<VoxelTerms> {
    cfg.validate()?;
    let linear = crate::geom::linear_index(idx, vol.resolution())?;
    let step = cfg.step_for(vol.min_voxel_edge());
    Ok(vertex_terms(vol, cams, cfg, step, &[cfg.sh_degree], linear)[0])
}

fn vertex_terms(
    vol: &DensityVolume,
    cams: &[CameraModel],
    cfg: &EvalConfig,
    step: f64,
    degrees: &[usize],
    linear: usize,
) -> Vec<VoxelTerms> {
    let alpha = vertex_alpha(vol, linear);
    if alpha <= cfg.skip_alpha_eps {
        return vec![VoxelTerms::SkippedLowAlpha; degrees.len()];
    }
    let v = vol.vertex_position(GridIndex::from_linear(linear, vol.resolution()));
    let obs = gather_observations_in(v, cams, vol, step);
    degrees
        .iter()
        .map(|&d| residual_terms(&obs, alpha, d, cfg.min_confidence_eps))
        .collect()
}

/// `-10 log10(mrc)`. Zero maps to `+inf`; negative or NaN input is an error.
pub fn imrc(mrc: f64) -> Result<f64> {
    if !(mrc >= 0.0) {
        return Err(Error::InvalidConfig(format!("mean residual color must be non-negative, got {mrc}")));
    }
    if mrc == 0.0 {
        return Ok(f64::INFINITY);
    }
    // `+ 0.0` turns the -0 of mrc == 1 into +0.
    Ok(-10.0 * mrc.log10() + 0.0)
}

/// Sum of numerators over sum of denominators, accumulated in slice order.
pub fn mrc_from_terms(terms: &[VoxelTerms]) -> Result<f64> {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for t in terms {
        let (n, d) = t.terms();
        num += n;
        den += d;
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateField);
    }
    Ok(num / den)
}

/// Mean residual color over all vertices of `vol`.
///
/// Vertices are processed in parallel on the current rayon pool; the final
/// sums run sequentially in linear-index order, so the result does not
/// depend on the thread count.
pub fn compute_mrc(vol: &DensityVolume, cams: &[CameraModel], cfg: &EvalConfig) -> Result<(MetricReport, ResidualGrid)> {
    let mut all = compute_mrc_for_degrees(vol, cams, cfg, &[cfg.sh_degree])?;
    Ok(all.remove(0))
}

/// [`compute_mrc`] for several SH degrees at once, sharing the observation
/// gathering (the expensive part) across degrees. `cfg.sh_degree` is
/// ignored.
pub fn compute_mrc_for_degrees(
    vol: &DensityVolume,
    cams: &[CameraModel],
    cfg: &EvalConfig,
    degrees: &[usize],
) -> Result<Vec<(MetricReport, ResidualGrid)>> {
    for &d in degrees {
        cfg.clone().with_degree(d).validate()?;
    }
    if cams.is_empty() {
        return Err(Error::InvalidConfig("at least one camera is required".into()));
    }
    let step = cfg.step_for(vol.min_voxel_edge());
    let per_vertex: Vec<Vec<VoxelTerms>> = (0..vol.num_vertices())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| vertex_terms(vol, cams, cfg, step, degrees, i))
        .collect();

    degrees
        .iter()
        .enumerate()
        .map(|(k, &degree)| {
            let mut grid = ResidualGrid::zeros(vol.resolution());
            let (mut num, mut den) = (0.0f64, 0.0f64);
            let (mut evaluated, mut low_alpha, mut no_obs) = (0, 0, 0);
            for (i, terms) in per_vertex.iter().enumerate() {
                match terms[k] {
                    VoxelTerms::SkippedLowAlpha => low_alpha += 1,
                    VoxelTerms::NoObservation => no_obs += 1,
                    VoxelTerms::Evaluated { numerator, denominator } => {
                        evaluated += 1;
                        num += numerator;
                        den += denominator;
                        grid.set(i, numerator, denominator);
                    }
                }
            }
            if !(den > 0.0) {
                return Err(Error::DegenerateField);
            }
            let mrc = num / den;
            let db = imrc(mrc)?;
            Ok((
                MetricReport {
                    mrc,
                    imrc_db: db,
                    imrc_infinite: db.is_infinite(),
                    sh_degree: degree,
                    resolution: vol.resolution(),
                    ray_step: step,
                    voxels_evaluated: evaluated,
                    voxels_skipped_low_alpha: low_alpha,
                    voxels_skipped_no_observation: no_obs,
                },
                grid,
            ))
        })
        .collect()
}

/// Single-channel float image; `background` marks pixels whose total ray
/// weight stayed below [`BACKGROUND_WEIGHT`].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub background: Vec<bool>,
}

pub const BACKGROUND_WEIGHT: f64 = 1e-4;

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_background(&self, x: usize, y: usize) -> bool {
        self.background[y * self.width + x]
    }

    /// Largest non-background value.
    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.background)
            .filter(|(_, &b)| !b)
            .map(|(v, _)| *v)
            .fold(0.0, f64::max)
    }
}

/// Renders `sum_i w_i * f(sample)` for every pixel of `cam`, where `w_i` are
/// the quadrature weights of the density volume.
fn render_accumulate(
    vol: &DensityVolume,
    cam: &CameraModel,
    step: f64,
    f: impl Fn(Vec3) -> f64 + Sync,
) -> Result<GrayImage> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("render step must be positive, got {step}")));
    }
    let (w, h) = (cam.width, cam.height);
    let pixels: Vec<(f64, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let dir = cam.pixel_direction(x, y);
            let ray = Ray {
                origin: cam.origin(),
                direction: dir,
                t_near: 0.0,
                t_far: f64::INFINITY,
            };
            let Some(ray) = ray.clipped_to(vol.bbox_min(), vol.bbox_max()) else {
                return (0.0, true);
            };
            let (mut acc, mut total) = (0.0, 0.0);
            for s in march_ray(vol, ray, step) {
                let wgt = s.weight();
                if wgt > 0.0 {
                    acc += wgt * f(ray.at(s.t));
                    total += wgt;
                }
            }
            (acc, total < BACKGROUND_WEIGHT)
        })
        .collect();
    let (values, background) = pixels.into_iter().unzip();
    Ok(GrayImage {
        width: w,
        height: h,
        values,
        background,
    })
}

/// Expected termination depth per pixel, measured along the camera's
/// optical axis (camera-space z).
pub fn render_depth(vol: &DensityVolume, cam: &CameraModel, step: f64) -> Result<GrayImage> {
    render_accumulate(vol, cam, step, |p| cam.pose.to_camera(p).z.max(0.0))
}

/// Ray-accumulated per-vertex residual ratio, trilinearly interpolated.
pub fn render_residual(grid: &ResidualGrid, vol: &DensityVolume, cam: &CameraModel, step: f64) -> Result<GrayImage> {
    if grid.resolution() != vol.resolution() {
        return Err(Error::InvalidConfig(format!(
            "residual grid {:?} does not match volume {:?}",
            grid.resolution(),
            vol.resolution()
        )));
    }
    let ratios = grid.ratios();
    let res = vol.resolution();
    let (lo, hi) = (vol.bbox_min(), vol.bbox_max());
    render_accumulate(vol, cam, step, |p| {
        trilinear_with(res, lo, hi, p, |x, y, z| ratios[x + res[0] * (y + res[1] * z)]).max(0.0)
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geom::Color;
    use crate::observation::{ImageBuffer, Intrinsics, Pose, ROTATION_TOLERANCE};

    fn ring(n: usize, images: impl Fn(usize) -> ImageBuffer) -> Vec<CameraModel> {
        (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                let eye = Vec3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.7);
                let pose = Pose::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0)).unwrap();
                let k = Intrinsics {
                    fx: 40.0,
                    fy: 40.0,
                    cx: 23.5,
                    cy: 23.5,
                };
                CameraModel::new(format!("{i}"), k, pose, Arc::new(images(i)))
            })
            .collect()
    }

    fn ball(res: usize, radius: f64, sigma: f32) -> DensityVolume {
        let vol = DensityVolume::zeros([res; 3], Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
        let data = (0..vol.num_vertices())
            .map(|i| {
                let p = vol.vertex_position(GridIndex::from_linear(i, vol.resolution()));
                if p.norm() <= radius {
                    sigma
                } else {
                    0.0
                }
            })
            .collect();
        vol.with_data(data).unwrap()
    }

    fn noise_image(seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..48 * 48)
            .map(|_| Color::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        ImageBuffer::new(48, 48, px).unwrap()
    }

    #[test]
    fn empty_vertex_is_skipped() {
        let vol = DensityVolume::zeros([8; 3], Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
        let cams = ring(4, |_| ImageBuffer::filled(48, 48, Color::gray(0.5)));
        let t = voxel_residual_terms(GridIndex::new(3, 3, 3), &vol, &cams, &EvalConfig::default()).unwrap();
        assert_eq!(t, VoxelTerms::SkippedLowAlpha);
        assert_eq!(t.terms(), (0.0, 0.0));
    }

    #[test]
    fn ratio_example() {
        let terms = [
            VoxelTerms::SkippedLowAlpha,
            VoxelTerms::Evaluated {
                numerator: 0.02,
                denominator: 2.0,
            },
            VoxelTerms::NoObservation,
        ];
        assert!((mrc_from_terms(&terms).unwrap() - 0.01).abs() < 1e-18);
        assert!(matches!(
            mrc_from_terms(&[VoxelTerms::SkippedLowAlpha]),
            Err(Error::DegenerateField)
        ));
    }

    #[test]
    fn imrc_examples() {
        assert_eq!(imrc(0.01).unwrap(), 20.0);
        assert_eq!(imrc(1.0).unwrap().to_bits(), 0.0f64.to_bits());
        assert!((imrc(10f64.powf(-1.564)).unwrap() - 15.64).abs() < 1e-9);
        assert_eq!(imrc(0.0).unwrap(), f64::INFINITY);
        assert!(imrc(-1e-3).is_err());
        assert!(imrc(f64::NAN).is_err());
    }

    #[test]
    fn constant_images_give_zero_mrc() {
        let vol = ball(12, 0.5, 30.0);
        let cams = ring(8, |_| ImageBuffer::filled(48, 48, Color::new(0.3, 0.6, 0.9)));
        let (report, grid) = compute_mrc(&vol, &cams, &EvalConfig::default()).unwrap();
        assert!(report.mrc < 1e-20, "mrc = {}", report.mrc);
        assert_eq!(
            report.voxels_evaluated + report.voxels_skipped_low_alpha + report.voxels_skipped_no_observation,
            vol.num_vertices()
        );
        assert!(report.voxels_evaluated > 0);
        assert!(grid.denominators().iter().all(|&d| d >= 0.0));
        assert!(grid.numerators().iter().all(|&n| n >= 0.0));
    }

    #[test]
    fn empty_volume_is_degenerate() {
        let vol = DensityVolume::zeros([6; 3], Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
        let cams = ring(4, |_| ImageBuffer::filled(48, 48, Color::gray(0.5)));
        assert!(matches!(
            compute_mrc(&vol, &cams, &EvalConfig::default()),
            Err(Error::DegenerateField)
        ));
        assert!(compute_mrc(&vol, &[], &EvalConfig::default()).is_err());
    }

    #[test]
    fn unseeing_camera_does_not_change_mrc() {
        let vol = ball(12, 0.5, 30.0);
        let mut cams = ring(6, |i| noise_image(i as u64));
        let (a, _) = compute_mrc(&vol, &cams, &EvalConfig::default()).unwrap();
        // Looks away from the scene: every vertex is behind it.
        let pose = Pose::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 6.0), Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let mut extra = cams[0].clone();
        extra.pose = pose;
        cams.push(extra);
        let (b, _) = compute_mrc(&vol, &cams, &EvalConfig::default()).unwrap();
        assert_eq!(a.mrc.to_bits(), b.mrc.to_bits());
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let vol = ball(14, 0.6, 20.0);
        let cams = ring(7, |i| noise_image(100 + i as u64));
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| compute_mrc(&vol, &cams, &EvalConfig::default()).unwrap())
        };
        let (a, ga) = run(1);
        let (b, gb) = run(5);
        assert_eq!(a.mrc.to_bits(), b.mrc.to_bits());
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn multi_degree_matches_single_degree() {
        let vol = ball(10, 0.6, 20.0);
        let cams = ring(10, |i| noise_image(7 * i as u64));
        let cfg = EvalConfig::default();
        let all = compute_mrc_for_degrees(&vol, &cams, &cfg, &[0, 2]).unwrap();
        for (k, d) in [0, 2].into_iter().enumerate() {
            let (single, _) = compute_mrc(&vol, &cams, &cfg.clone().with_degree(d)).unwrap();
            assert_eq!(all[k].0, single);
        }
    }

    fn forward_camera(size: usize) -> CameraModel {
        let pose = Pose::new([[1., 0., 0.], [0., 1., 0.], [0., 0., 1.]], Vec3::ZERO, ROTATION_TOLERANCE).unwrap();
        let c = (size - 1) as f64 / 2.0;
        let k = Intrinsics { fx: 30.0, fy: 30.0, cx: c, cy: c };
        CameraModel::new("fwd", k, pose, Arc::new(ImageBuffer::filled(size, size, Color::BLACK)))
    }

    // Opaque for z >= z0 on a 0.1 grid spanning z in [1, 5].
    fn slab(z0: f64) -> DensityVolume {
        let vol = DensityVolume::zeros([21, 21, 41], Vec3::new(-1.0, -1.0, 1.0), Vec3::new(1.0, 1.0, 5.0)).unwrap();
        let data = (0..vol.num_vertices())
            .map(|i| {
                let p = vol.vertex_position(GridIndex::from_linear(i, vol.resolution()));
                if p.z >= z0 - 1e-9 {
                    1e4
                } else {
                    0.0
                }
            })
            .collect();
        vol.with_data(data).unwrap()
    }

    #[test]
    fn depth_of_empty_volume_is_background() {
        let vol = DensityVolume::zeros([8; 3], Vec3::new(-1.0, -1.0, 1.0), Vec3::new(1.0, 1.0, 3.0)).unwrap();
        let img = render_depth(&vol, &forward_camera(16), 0.05).unwrap();
        assert!(img.background.iter().all(|&b| b));
        assert!(render_depth(&vol, &forward_camera(16), 0.0).is_err());
    }

    #[test]
    fn depth_of_slab() {
        let step = 0.1;
        let cam = forward_camera(21);
        let near = render_depth(&slab(2.0), &cam, step).unwrap();
        let far = render_depth(&slab(3.0), &cam, step).unwrap();
        let mut covered = 0;
        for y in 0..21 {
            for x in 0..21 {
                if near.is_background(x, y) {
                    continue;
                }
                covered += 1;
                assert!((near.get(x, y) - 2.0).abs() <= step, "({x},{y}) {}", near.get(x, y));
                assert!(!far.is_background(x, y));
                assert!(far.get(x, y) > near.get(x, y));
            }
        }
        assert!(covered > 100);
        assert!(!near.is_background(10, 10));
    }

    #[test]
    fn residual_render_of_zero_grid_is_black() {
        let vol = slab(2.0);
        let grid = ResidualGrid::zeros(vol.resolution());
        let img = render_residual(&grid, &vol, &forward_camera(16), 0.1).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
        let wrong = ResidualGrid::zeros([2, 2, 2]);
        assert!(render_residual(&wrong, &vol, &forward_camera(16), 0.1).is_err());
    }

    #[test]
    fn residual_render_is_non_negative() {
        let vol = ball(12, 0.5, 30.0);
        let cams = ring(6, |i| noise_image(40 + i as u64));
        let (_, grid) = compute_mrc(&vol, &cams, &EvalConfig::default()).unwrap();
        let img = render_residual(&grid, &vol, &cams[0], 0.05).unwrap();
        assert!(img.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!(img.max_value() > 0.0);
    }
}
