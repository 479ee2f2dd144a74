//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, CdOptions, Rows};
use crate::chamfer::{best_cd, marching_cubes, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{EvalConfig, DEFAULT_SH_DEGREE};
use crate::io;
use crate::metric::{self, GrayImage};
use crate::synth::{self, Perturbation, RigKind, SceneKind, Sensor, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "imrc", version, about = "Density-volume geometry evaluation by residual color")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "IMRC_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean residual color of a volume against calibrated images.
    Imrc(ImrcArgs),
    /// Best Chamfer distance over iso-surface thresholds.
    Chamfer(ChamferArgs),
    /// Marching-cubes mesh at one threshold.
    Mc(McArgs),
    /// Depth or residual diagnostic images.
    Render(RenderArgs),
    /// Write a synthetic scene directory.
    Synth(SynthArgs),
    /// Sweeps and ordering tables.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, default_value_t = DEFAULT_SH_DEGREE)]
    sh_degree: usize,
    /// March step in world units (default: half a voxel edge).
    #[arg(long)]
    ray_step: Option<f64>,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            sh_degree: self.sh_degree,
            ray_step: self.ray_step,
            ..EvalConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct ImrcArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    #[command(flatten)]
    eval: EvalArgs,
    /// Report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-vertex residual ratios as a volume header + raw file.
    #[arg(long)]
    residual_grid: Option<PathBuf>,
    /// Also write depth and residual images for every camera here.
    #[arg(long)]
    render_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ChamferArgs {
    #[arg(long)]
    volume: PathBuf,
    /// Ground-truth point cloud (PLY).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lower threshold (default: 0.001 x max density).
    #[arg(long)]
    lo: Option<f64>,
    /// Upper threshold (default: 0.999 x max density).
    #[arg(long)]
    hi: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Write ASCII instead of binary little-endian.
    #[arg(long)]
    ascii: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RenderMode {
    Depth,
    Residual,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long, value_enum)]
    mode: RenderMode,
    #[command(flatten)]
    eval: EvalArgs,
    /// Output directory for `<camera id>.png`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RigArgs {
    /// Number of cameras.
    #[arg(long, default_value_t = 24)]
    cameras: usize,
    /// ring, hemisphere or sphere.
    #[arg(long, default_value = "hemisphere", value_parser = parse_rig)]
    rig: RigKind,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 160)]
    image_size: usize,
}

impl RigArgs {
    fn config(&self, resolution: usize, image_resolution: Option<usize>, seed: u64) -> Result<SynthConfig> {
        let image_smoothing = match image_resolution {
            Some(r) if r < 2 => return Err(Error::InvalidConfig(format!("image resolution must be at least 2, got {r}"))),
            Some(r) => Some(2.0 / (r as f64 - 1.0)),
            None => None,
        };
        Ok(SynthConfig {
            resolution,
            image_smoothing,
            rig: self.rig,
            cameras: self.cameras,
            sensor: Sensor {
                width: self.image_size,
                height: self.image_size,
                ..Sensor::default()
            },
            seed,
            ..SynthConfig::default()
        })
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_scene)]
    scene: SceneKind,
    #[arg(long, default_value_t = 96)]
    resolution: usize,
    #[command(flatten)]
    rig: RigArgs,
    /// Render the images from the scene as smoothed for this resolution
    /// instead of the volume's own.
    #[arg(long)]
    image_resolution: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// IMRC of a scene directory at several SH degrees.
    Degrees {
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        degrees: Vec<usize>,
        #[arg(long)]
        ray_step: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground truth versus every variant of a scene directory.
    Ordering {
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        degrees: Vec<usize>,
        #[arg(long)]
        ray_step: Option<f64>,
        /// Also compare Chamfer distances against gt.ply.
        #[arg(long)]
        chamfer: bool,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-bake an analytic scene at several resolutions.
    Resolution {
        #[arg(long, value_parser = parse_scene)]
        scene: SceneKind,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        resolutions: Vec<usize>,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        rig: RigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the standard perturbations.
        #[arg(long)]
        no_variants: bool,
        /// Record wall times (makes the output run-dependent).
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_scene(s: &str) -> std::result::Result<SceneKind, String> {
    SceneKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = SceneKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown scene '{s}' (expected one of: {})", names.join(", "))
    })
}

fn parse_rig(s: &str) -> std::result::Result<RigKind, String> {
    RigKind::parse(s).ok_or_else(|| format!("unknown rig '{s}' (expected ring, hemisphere or sphere)"))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        2
                    } else {
                        0
                    }
                }
                _ => {
                    eprintln!("error[usage]: {}", one_line(&e.render().to_string()));
                    2
                }
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(msg: &str) -> String {
    let first = msg
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    first.strip_prefix("error: ").unwrap_or(first).to_string()
}

fn execute(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Imrc(a) => cmd_imrc(a),
        Command::Chamfer(a) => cmd_chamfer(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Render(a) => cmd_render(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(b) => cmd_bench(b),
    }
}

fn cmd_imrc(a: ImrcArgs) -> Result<()> {
    let vol = io::load_volume(&a.volume)?;
    let cams = io::load_cameras(&a.cameras)?;
    let cfg = a.eval.config();
    let (report, grid) = metric::compute_mrc(&vol, &cams, &cfg)?;
    log::info!("imrc {:.4} dB over {} vertices", report.imrc_db, report.voxels_evaluated);
    emit(&io::to_json_string(&report)?, a.out.as_deref())?;
    if let Some(p) = &a.residual_grid {
        let ratios: Vec<f32> = grid.ratios().into_iter().map(|r| r as f32).collect();
        io::save_volume(&vol.with_data(ratios)?, p)?;
    }
    if let Some(dir) = &a.render_dir {
        let step = cfg.step_for(vol.min_voxel_edge());
        for cam in &cams {
            write_gray(&metric::render_depth(&vol, cam, step)?, &dir.join(format!("{}_depth.png", cam.id)))?;
            write_gray(
                &metric::render_residual(&grid, &vol, cam, step)?,
                &dir.join(format!("{}_residual.png", cam.id)),
            )?;
        }
    }
    Ok(())
}

/// Grayscale PNG scaled so the largest foreground value is white;
/// background stays black.
fn write_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let max = img.max_value();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let bytes: Vec<u8> = img
        .values
        .iter()
        .zip(&img.background)
        .map(|(&v, &bg)| if bg { 0 } else { (v * scale).round().clamp(0.0, 255.0) as u8 })
        .collect();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer matches dimensions")
        .save(path)?;
    Ok(())
}

fn cmd_chamfer(a: ChamferArgs) -> Result<()> {
    let vol = io::load_volume(&a.volume)?;
    let gt = PointCloud::new(io::read_ply(&a.gt)?.vertices);
    let (dlo, dhi) = bench::threshold_range(&vol, 1e-3, 0.999);
    let lo = a.lo.unwrap_or(dlo);
    let hi = a.hi.unwrap_or(dhi);
    let res = best_cd(&vol, &gt, a.samples, lo, hi, a.tol, a.seed)?;
    log::info!("best cd {:.6} at threshold {:.6}", res.best_cd, res.best_threshold);
    emit(&io::to_json_string(&res)?, a.out.as_deref())
}

fn cmd_mc(a: McArgs) -> Result<()> {
    if !(a.threshold > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold must be positive, got {}", a.threshold)));
    }
    let vol = io::load_volume(&a.volume)?;
    let mesh = marching_cubes(&vol, a.threshold)?;
    if mesh.is_empty() {
        log::warn!("threshold {} gives an empty mesh", a.threshold);
    }
    let format = if a.ascii {
        io::PlyFormat::Ascii
    } else {
        io::PlyFormat::BinaryLittleEndian
    };
    io::write_ply(&a.out, &mesh.vertices, &mesh.triangles, format)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let vol = io::load_volume(&a.volume)?;
    let cams = io::load_cameras(&a.cameras)?;
    let cfg = a.eval.config();
    let step = cfg.step_for(vol.min_voxel_edge());
    let grid = match a.mode {
        RenderMode::Residual => Some(metric::compute_mrc(&vol, &cams, &cfg)?.1),
        RenderMode::Depth => None,
    };
    for cam in &cams {
        let img = match &grid {
            Some(g) => metric::render_residual(g, &vol, cam, step)?,
            None => metric::render_depth(&vol, cam, step)?,
        };
        write_gray(&img, &a.out.join(format!("{}.png", cam.id)))?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = a.rig.config(a.resolution, a.image_resolution, a.seed)?;
    let g = synth::generate(a.scene, &cfg)?;
    synth::write_scene_dir(&g, &cfg, &a.out)?;
    log::info!("wrote {} ({} variants)", a.out.display(), g.variants.len());
    Ok(())
}

fn cmd_bench(b: BenchCommand) -> Result<()> {
    match b {
        BenchCommand::Degrees {
            scene_dir,
            degrees,
            ray_step,
            out,
        } => {
            let cfg = EvalConfig {
                ray_step,
                ..EvalConfig::default()
            };
            let rows = bench::sweep_sh_degree_dir(&scene_dir, &cfg, &degrees)?;
            bench::write_table(&out, "degrees", &bench::degrees_markdown(&rows), &Rows { rows: &rows })
        }
        BenchCommand::Ordering {
            scene_dir,
            degrees,
            ray_step,
            chamfer,
            samples,
            tol,
            seed,
            out,
        } => {
            let cfg = EvalConfig {
                ray_step,
                ..EvalConfig::default()
            };
            let cd = CdOptions {
                samples,
                tol,
                seed,
                ..CdOptions::default()
            };
            let rep = bench::ordering_suite(&scene_dir, &cfg, &degrees, chamfer.then_some(&cd))?;
            bench::write_table(&out, "ordering", &bench::ordering_markdown(&rep), &rep)
        }
        BenchCommand::Resolution {
            scene,
            resolutions,
            eval,
            rig,
            seed,
            no_variants,
            timings,
            out,
        } => {
            let cfg = rig.config(0, None, seed)?;
            let perturbations = if no_variants || scene == SceneKind::Empty {
                Vec::new()
            } else {
                Perturbation::standard_set(seed)
            };
            let rows = bench::sweep_resolution(scene, &resolutions, &cfg, &eval.config(), &perturbations, timings)?;
            bench::write_table(&out, "resolution", &bench::resolution_markdown(&rows), &Rows { rows: &rows })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["imrc", "imrc", "--volume", "v.json"]), 2);
        assert_eq!(run(["imrc", "frobnicate"]), 2);
        assert_eq!(run(["imrc", "imrc", "--volume", "v.json", "--cameras", "c.json", "--bogus"]), 2);
        assert_eq!(run(["imrc", "synth", "--scene", "teapot", "--out", "x"]), 2);
        assert_eq!(run(["imrc", "--threads", "0", "mc", "--volume", "v", "--threshold", "1", "--out", "o"]), 2);
    }

    #[test]
    fn help_and_version_exit_0() {
        assert_eq!(run(["imrc", "--help"]), 0);
        assert_eq!(run(["imrc", "--version"]), 0);
    }

    #[test]
    fn missing_input_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let v = dir.path().join("nope.json");
        let out = dir.path().join("m.ply");
        let code = run([
            "imrc",
            "mc",
            "--volume",
            v.to_str().unwrap(),
            "--threshold",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn one_line_strips_clap_prefix() {
        assert_eq!(one_line("error: unexpected argument '--x' found\n\nUsage: imrc"), "unexpected argument '--x' found");
    }

    fn arg(p: &Path) -> String {
        p.to_str().unwrap().to_string()
    }

    fn ok(args: &[&str]) {
        let mut v = vec!["imrc"];
        v.extend_from_slice(args);
        assert_eq!(run(v.clone()), 0, "{v:?}");
    }

    #[test]
    fn synth_output_feeds_every_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let scene = arg(&d.join("scene"));
        ok(&["synth", "--scene", "textured-sphere", "--resolution", "32", "--cameras", "10", "--image-size", "64", "--out", &scene]);
        for f in ["volume.json", "volume.raw", "cameras.json", "gt.ply", "scene.json", "images/cam_000.png"] {
            assert!(d.join("scene").join(f).is_file(), "{f}");
        }
        let vol = format!("{scene}/volume.json");
        let cams = format!("{scene}/cameras.json");

        let report = arg(&d.join("r.json"));
        let grid = arg(&d.join("grid/residual.json"));
        ok(&["imrc", "--volume", &vol, "--cameras", &cams, "--sh-degree", "2", "--out", &report, "--residual-grid", &grid]);
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(json["schema"], 1);
        assert!(json["imrc_db"].as_f64().unwrap() > 0.0);
        assert_eq!(io::load_volume(Path::new(&grid)).unwrap().resolution(), [32, 32, 32]);

        let cd = arg(&d.join("cd.json"));
        ok(&["chamfer", "--volume", &vol, "--gt", &format!("{scene}/gt.ply"), "--tol", "0.001", "--samples", "5000", "--out", &cd]);
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cd).unwrap()).unwrap();
        let b = json["bracket"].as_array().unwrap();
        assert!(b[1].as_f64().unwrap() - b[0].as_f64().unwrap() <= 1e-3);

        let mesh = d.join("m.ply");
        ok(&["mc", "--volume", &vol, "--threshold", "100", "--out", &arg(&mesh)]);
        assert!(!io::read_ply(&mesh).unwrap().faces.is_empty());

        for mode in ["depth", "residual"] {
            let out = d.join(mode);
            ok(&["render", "--volume", &vol, "--cameras", &cams, "--mode", mode, "--out", &arg(&out)]);
            assert!(out.join("cam_000.png").is_file());
        }

        let b1 = d.join("b1");
        let b2 = d.join("b2");
        for b in [&b1, &b2] {
            ok(&["bench", "ordering", "--scene-dir", &scene, "--degrees", "1,2", "--out", &arg(b)]);
        }
        assert_eq!(std::fs::read(b1.join("ordering.json")).unwrap(), std::fs::read(b2.join("ordering.json")).unwrap());
        assert_eq!(std::fs::read(b1.join("ordering.md")).unwrap(), std::fs::read(b2.join("ordering.md")).unwrap());
        ok(&["bench", "degrees", "--scene-dir", &scene, "--degrees", "0,1", "--out", &arg(&b1)]);
        assert!(b1.join("degrees.md").is_file());
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let scene = arg(&d.join("s"));
        ok(&["synth", "--scene", "empty", "--resolution", "16", "--cameras", "4", "--image-size", "16", "--out", &scene]);
        // Nothing to evaluate in an empty scene.
        let code = run([
            "imrc",
            "imrc",
            "--volume",
            &format!("{scene}/volume.json"),
            "--cameras",
            &format!("{scene}/cameras.json"),
        ]);
        assert_eq!(code, 1);
        let code = run([
            "imrc",
            "imrc",
            "--volume",
            &format!("{scene}/volume.json"),
            "--cameras",
            &format!("{scene}/cameras.json"),
            "--sh-degree",
            "7",
        ]);
        assert_eq!(code, 1);
    }
}
