//! Desk-scale experiment driver: SH-degree and resolution sweeps and the
//! ground-truth-versus-perturbation ordering suite.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::chamfer::{best_cd, PointCloud};
use crate::error::{Error, Result};
use crate::fields::DensityVolume;
use crate::geom::EvalConfig;
use crate::io;
use crate::metric::compute_mrc_for_degrees;
use crate::observation::CameraModel;
use crate::synth::{apply_perturbation, bake_volume, rendered_rig, AnalyticScene, Perturbation, SceneKind, SynthConfig};

/// Ground truth, variants and observations of a scene directory written by
/// `synth` (or laid out the same way by hand).
#[derive(Debug, Clone)]
pub struct SceneDir {
    pub volume: DensityVolume,
    pub cameras: Vec<CameraModel>,
    pub variants: Vec<(String, DensityVolume)>,
    pub gt_points: Option<PointCloud>,
}

impl SceneDir {
    pub fn load(dir: &Path) -> Result<Self> {
        let volume = io::load_volume(&dir.join("volume.json"))?;
        let cameras = io::load_cameras(&dir.join("cameras.json"))?;
        let mut variants = Vec::new();
        let vdir = dir.join("variants");
        if vdir.is_dir() {
            let mut names: Vec<PathBuf> = std::fs::read_dir(&vdir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("volume.json").is_file())
                .collect();
            names.sort();
            for p in names {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                variants.push((name, io::load_volume(&p.join("volume.json"))?));
            }
        }
        let ply = dir.join("gt.ply");
        let gt_points = if ply.is_file() {
            Some(PointCloud::new(io::read_ply(&ply)?.vertices))
        } else {
            None
        };
        Ok(Self {
            volume,
            cameras,
            variants,
            gt_points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeRow {
    pub degree: usize,
    pub imrc_db: f64,
    pub mrc: f64,
}

/// IMRC of one volume at each SH degree.
pub fn sweep_sh_degree(vol: &DensityVolume, cams: &[CameraModel], cfg: &EvalConfig, degrees: &[usize]) -> Result<Vec<DegreeRow>> {
    Ok(compute_mrc_for_degrees(vol, cams, cfg, degrees)?
        .into_iter()
        .map(|(r, _)| DegreeRow {
            degree: r.sh_degree,
            imrc_db: r.imrc_db,
            mrc: r.mrc,
        })
        .collect())
}

pub fn sweep_sh_degree_dir(dir: &Path, cfg: &EvalConfig, degrees: &[usize]) -> Result<Vec<DegreeRow>> {
    let vol = io::load_volume(&dir.join("volume.json"))?;
    let cams = io::load_cameras(&dir.join("cameras.json"))?;
    sweep_sh_degree(&vol, &cams, cfg, degrees)
}

/// How the ground truth compared against a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Better,
    Tie,
    Worse,
    /// The variant has no evaluable vertex.
    Undefined,
}

impl Verdict {
    /// Higher IMRC is better.
    pub fn from_imrc(gt: f64, other: f64) -> Verdict {
        match gt.partial_cmp(&other) {
            Some(Ordering::Greater) => Verdict::Better,
            Some(Ordering::Equal) => Verdict::Tie,
            _ => Verdict::Worse,
        }
    }

    /// Lower CD is better.
    pub fn from_cd(gt: f64, other: f64) -> Verdict {
        Verdict::from_imrc(other, gt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResult {
    pub variant: String,
    pub degree: usize,
    pub imrc_gt: f64,
    pub imrc_variant: Option<f64>,
    pub drop_db: Option<f64>,
    pub imrc_verdict: Verdict,
    pub cd_gt: Option<f64>,
    pub cd_variant: Option<f64>,
    pub cd_verdict: Option<Verdict>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub degrees: Vec<usize>,
    pub pairs: Vec<PairResult>,
    pub all_pass: bool,
}

/// Chamfer settings for the ordering suite. Thresholds are searched over
/// `[lo_frac, hi_frac]` times each volume's maximum density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdOptions {
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
    pub lo_frac: f64,
    pub hi_frac: f64,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            tol: 1e-3,
            seed: 0,
            lo_frac: 1e-3,
            hi_frac: 0.999,
        }
    }
}

/// Default threshold bracket for a volume.
pub fn threshold_range(vol: &DensityVolume, lo_frac: f64, hi_frac: f64) -> (f64, f64) {
    let m = vol.max_density() as f64;
    (lo_frac * m, hi_frac * m)
}

fn volume_cd(vol: &DensityVolume, gt: &PointCloud, opt: &CdOptions) -> Result<f64> {
    let (lo, hi) = threshold_range(vol, opt.lo_frac, opt.hi_frac);
    if !(lo > 0.0) {
        return Err(Error::NoSurface { lo, hi });
    }
    Ok(best_cd(vol, gt, opt.samples, lo, hi, opt.tol, opt.seed)?.best_cd)
}

/// Compares the ground truth against every variant at every degree. CD is
/// added when `gt_points` and `cd` are both given.
pub fn ordering(
    gt: &DensityVolume,
    variants: &[(String, DensityVolume)],
    cams: &[CameraModel],
    cfg: &EvalConfig,
    degrees: &[usize],
    gt_points: Option<&PointCloud>,
    cd: Option<&CdOptions>,
) -> Result<OrderingReport> {
    let imrc_of = |v: &DensityVolume| -> Result<Vec<f64>> {
        Ok(compute_mrc_for_degrees(v, cams, cfg, degrees)?
            .into_iter()
            .map(|(r, _)| r.imrc_db)
            .collect())
    };
    let chamfer = match (gt_points, cd) {
        (Some(p), Some(o)) => Some((p, o)),
        _ => None,
    };
    let gt_imrc = imrc_of(gt)?;
    let gt_cd = chamfer.map(|(p, o)| volume_cd(gt, p, o)).transpose()?;

    let mut pairs = Vec::new();
    for (name, vol) in variants {
        let v_imrc = match imrc_of(vol) {
            Ok(v) => Some(v),
            Err(Error::DegenerateField) => {
                log::warn!("{name}: no vertex carries residual weight");
                None
            }
            Err(e) => return Err(e),
        };
        let v_cd = match chamfer {
            Some((p, o)) => match volume_cd(vol, p, o) {
                Ok(cd) => Some(cd),
                Err(Error::NoSurface { .. }) => Some(f64::INFINITY),
                Err(e) => return Err(e),
            },
            None => None,
        };
        for (k, &degree) in degrees.iter().enumerate() {
            let v = v_imrc.as_ref().map(|v| v[k]);
            let imrc_verdict = v.map_or(Verdict::Undefined, |v| Verdict::from_imrc(gt_imrc[k], v));
            let cd_verdict = gt_cd.zip(v_cd).map(|(a, b)| Verdict::from_cd(a, b));
            pairs.push(PairResult {
                variant: name.clone(),
                degree,
                imrc_gt: gt_imrc[k],
                imrc_variant: v,
                drop_db: v.map(|v| gt_imrc[k] - v),
                imrc_verdict,
                cd_gt: gt_cd,
                cd_variant: v_cd,
                cd_verdict,
                pass: imrc_verdict == Verdict::Better && cd_verdict.is_none_or(|v| v == Verdict::Better),
            });
        }
    }
    let all_pass = pairs.iter().all(|p| p.pass);
    Ok(OrderingReport {
        degrees: degrees.to_vec(),
        pairs,
        all_pass,
    })
}

/// [`ordering`] over a scene directory. Needs at least three variants.
pub fn ordering_suite(dir: &Path, cfg: &EvalConfig, degrees: &[usize], cd: Option<&CdOptions>) -> Result<OrderingReport> {
    let scene = SceneDir::load(dir)?;
    if scene.variants.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "{}: ordering needs at least 3 variants, found {}",
            dir.display(),
            scene.variants.len()
        )));
    }
    ordering(
        &scene.volume,
        &scene.variants,
        &scene.cameras,
        cfg,
        degrees,
        scene.gt_points.as_ref(),
        cd,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionRow {
    pub resolution: usize,
    pub vertices: usize,
    pub imrc_db: f64,
    /// `None` when the perturbation cannot be realized at this resolution
    /// (floaters that do not fit) or leaves nothing to evaluate.
    pub variants: Vec<(String, Option<f64>)>,
    pub ordering_preserved: bool,
    /// Wall time of the ground-truth evaluation; only filled when asked for,
    /// since it makes the output run-dependent.
    pub seconds: Option<f64>,
}

/// Evaluates `kind` at each resolution: the scene is rebuilt with a
/// one-voxel ramp, baked, and observed through `rig` cameras rendered from
/// that same scene. Perturbations are applied to each baked volume.
pub fn sweep_resolution(
    kind: SceneKind,
    resolutions: &[usize],
    rig: &SynthConfig,
    cfg: &EvalConfig,
    perturbations: &[Perturbation],
    timings: bool,
) -> Result<Vec<ResolutionRow>> {
    let mut rows = Vec::new();
    for &res in resolutions {
        let scene = AnalyticScene::for_resolution(kind, res)?;
        let vol = bake_volume(&scene, res)?;
        let cams = rendered_rig(kind, scene.smoothing, rig)?;
        let start = Instant::now();
        let gt = compute_mrc_for_degrees(&vol, &cams, cfg, &[cfg.sh_degree])?.remove(0).0.imrc_db;
        let seconds = timings.then(|| start.elapsed().as_secs_f64());
        let mut variants = Vec::new();
        for p in perturbations {
            let pv = match apply_perturbation(&vol, p) {
                Ok(v) => v,
                Err(Error::DegeneratePerturbation(msg)) => {
                    log::warn!("{} at {res}: {msg}", p.name());
                    variants.push((p.name(), None));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let db = match compute_mrc_for_degrees(&pv, &cams, cfg, &[cfg.sh_degree]) {
                Ok(mut r) => Some(r.remove(0).0.imrc_db),
                Err(Error::DegenerateField) => None,
                Err(e) => return Err(e),
            };
            variants.push((p.name(), db));
        }
        let ordering_preserved = variants.iter().all(|(_, db)| db.is_none_or(|d| gt > d));
        rows.push(ResolutionRow {
            resolution: res,
            vertices: vol.num_vertices(),
            imrc_db: gt,
            variants,
            ordering_preserved,
            seconds,
        });
    }
    Ok(rows)
}

fn db(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:.3}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

pub fn degrees_markdown(rows: &[DegreeRow]) -> String {
    let mut s = String::from("| degree | IMRC (dB) | MRC |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(s, "| {} | {} | {:.6e} |", r.degree, db(r.imrc_db), r.mrc);
    }
    s
}

pub fn ordering_markdown(rep: &OrderingReport) -> String {
    let mut s = String::from(
        "| variant | degree | IMRC gt | IMRC variant | drop (dB) | CD gt | CD variant | result |\n|---|---|---|---|---|---|---|---|\n",
    );
    for p in &rep.pairs {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            p.variant,
            p.degree,
            db(p.imrc_gt),
            p.imrc_variant.map_or_else(|| "-".into(), db),
            p.drop_db.map_or_else(|| "-".into(), db),
            opt(p.cd_gt),
            opt(p.cd_variant),
            if p.pass { "pass" } else { "FAIL" }
        );
    }
    s
}

pub fn resolution_markdown(rows: &[ResolutionRow]) -> String {
    let mut s = String::from("| resolution | vertices | IMRC (dB) | variants | ordering | seconds |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let vars: Vec<String> = r
            .variants
            .iter()
            .map(|(n, v)| format!("{n} {}", v.map_or_else(|| "-".into(), db)))
            .collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            r.resolution,
            r.vertices,
            db(r.imrc_db),
            vars.join(", "),
            if r.ordering_preserved { "kept" } else { "BROKEN" },
            r.seconds.map_or_else(|| "-".into(), |t| format!("{t:.2}"))
        );
    }
    s
}

/// A list of rows as a JSON document body.
#[derive(Debug, Serialize)]
pub struct Rows<'a, T> {
    pub rows: &'a [T],
}

/// Writes `<name>.md` and `<name>.json` under `dir`.
pub fn write_table<T: Serialize>(dir: &Path, name: &str, markdown: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.md")), markdown)?;
    io::write_json(value, &dir.join(format!("{name}.json")))
}
