use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use crownforge::config::{RunConfig, CONFIG_ENV};
use crownforge::eval_report::{evaluate_batch, lambda_sweep, list_cases, signed_distance_dump, sweep_csv, SweepCase};
use crownforge::losses::{borrowed_curvature, chamfer_l1, chamfer_l2, cmpl, LossConfig};
use crownforge::margin::{extract_margin_detailed, MarginCurve};
use crownforge::mesh::io::{read_ply_file, write_ply_file};
use crownforge::mesh::{estimate_curvature, load_mesh, MeshFormat, TriMesh};
use crownforge::metrics::{margin_hausdorff, mesh_crown_metrics, pia};
use crownforge::pipeline::{generate_points, run_pipeline_to_dir, write_margin, write_mesh, write_points, NORMAL_NEIGHBORS};
use crownforge::pointops::estimate_normals;
use crownforge::postprocess::trim_crown;
use crownforge::surface_recon::reconstruct;
use crownforge::synth::{make_scene, SceneBundle, SceneSpec, TemplateClass, ToothClass};
use crownforge::{Error, LabeledPointCloud};

const EXIT_VALIDATION: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "crownforge", version, about = "Dental crown generation and evaluation toolkit")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key overrides.
#[derive(Args)]
struct ConfigArgs {
    /// key=value config file
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    f_score_tau: Option<f64>,
    #[arg(long, global = true)]
    sample_count: Option<usize>,
    /// Comma-separated; the first seed drives sampling and network weights
    #[arg(long, global = true)]
    seeds: Option<String>,
    #[arg(long, global = true)]
    smoothing: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> crownforge::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("resolution", self.resolution.map(|v| v.to_string())),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("f_score_tau", self.f_score_tau.map(|v| v.to_string())),
            ("sample_count", self.sample_count.map(|v| v.to_string())),
            ("seeds", self.seeds.clone()),
            ("smoothing", self.smoothing.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract the cervical margin from a labeled scan
    Margin {
        #[arg(long)]
        ios: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trim a watertight crown along a margin
    Trim {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        margin: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Poisson reconstruction of a point cloud; normals are estimated when absent
    Recon {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss value of a predicted cloud against a ground-truth cloud or mesh
    Loss {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_parser = ["cmpl", "chamfer-l1", "chamfer-l2"], default_value = "cmpl")]
        kind: String,
    },
    /// Crown metrics of a predicted mesh against ground truth
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, requires = "lateral")]
        medial: Option<PathBuf>,
        #[arg(long, requires = "medial")]
        lateral: Option<PathBuf>,
        #[arg(long, requires = "gt_margin")]
        pred_margin: Option<PathBuf>,
        #[arg(long, requires = "pred_margin")]
        gt_margin: Option<PathBuf>,
    },
    /// Network forward pass: margin plus generated crown points
    Forward {
        #[arg(long)]
        ios: PathBuf,
        #[arg(long, default_value = "molar")]
        template: TemplateClass,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic scene bundles
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bundles for seeds seed..seed+count, one subdirectory each
        #[arg(long)]
        count: Option<u64>,
        /// Canonical spec of this class instead of a randomized one
        #[arg(long)]
        class: Option<ToothClass>,
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Full crown generation into an output directory
    Pipeline {
        #[arg(long)]
        ios: PathBuf,
        #[arg(long, default_value = "molar")]
        template: TemplateClass,
        #[arg(long)]
        out: PathBuf,
    },
    /// Batch evaluation and report artifacts
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// One CSV row per case plus per-class means
    Batch {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
    /// Per-vertex signed distance of a crown to a reference mesh
    SignedDistance {
        #[arg(long)]
        crown: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss and metrics of fixed predictions over curvature weights
    LambdaSweep {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4")]
        lambdas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_ply_mesh(path: &Path) -> crownforge::Result<TriMesh> {
    load_mesh(path, MeshFormat::Ply)
}

fn load_cloud(path: &Path) -> crownforge::Result<LabeledPointCloud> {
    LabeledPointCloud::from_ply(&read_ply_file(path)?)
}

/// A PLY with faces becomes its vertices annotated with estimated curvature.
fn load_gt_cloud(path: &Path) -> crownforge::Result<LabeledPointCloud> {
    let data = read_ply_file(path)?;
    if data.element("face").is_some_and(|f| f.count > 0) {
        let mesh = load_ply_mesh(path)?;
        let mut cloud = LabeledPointCloud::new(mesh.vertices.clone());
        cloud.curvature = Some(estimate_curvature(&mesh)?);
        cloud.margin_flags = LabeledPointCloud::from_ply(&data)?.margin_flags;
        return Ok(cloud);
    }
    LabeledPointCloud::from_ply(&data)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Margin { ios, out } => {
            let ex = extract_margin_detailed(&load_ply_mesh(&ios)?, cfg.smoothing)?;
            for w in &ex.warnings {
                log::warn!("{w}");
            }
            write_margin(&ex.curve, &out, &cfg)?;
            println!("margin.length_mm={}", ex.curve.length());
        }
        Command::Trim { mesh, margin, out } => {
            let t = trim_crown(&load_ply_mesh(&mesh)?, &MarginCurve::load(&margin)?)?;
            for w in &t.warnings {
                log::warn!("{w}");
            }
            write_mesh(&t.mesh, &out, &cfg)?;
            println!("removed_faces={}", t.removed_faces);
        }
        Command::Recon { points, out } => {
            let cloud = load_cloud(&points)?;
            let normals = match cloud.normals {
                Some(n) => n,
                None => estimate_normals(&cloud.points, NORMAL_NEIGHBORS)?,
            };
            let mesh = reconstruct(&cloud.points, &normals, cfg.resolution, cfg.sigma)?;
            write_mesh(&mesh, &out, &cfg)?;
            println!("faces={}", mesh.faces.len());
        }
        Command::Loss { pred, gt, kind } => {
            let pred = load_cloud(&pred)?.points;
            let value = match kind.as_str() {
                "chamfer-l1" => chamfer_l1(&pred, &load_cloud(&gt)?.points, false)?.value,
                "chamfer-l2" => chamfer_l2(&pred, &load_cloud(&gt)?.points, false)?.value,
                _ => {
                    let gt = load_gt_cloud(&gt)?;
                    let k = borrowed_curvature(&pred, &gt)?;
                    let loss = LossConfig {
                        lambda: cfg.lambda,
                        use_squared: false,
                        margin_weight_enabled: gt.margin_flags.is_some(),
                    };
                    cmpl(&pred, &gt, &k, &loss, false)?.value
                }
            };
            print!("{}", cfg.header(""));
            println!("{kind}={value}");
        }
        Command::Metrics { pred, gt, medial, lateral, pred_margin, gt_margin } => {
            let (pred, gt) = (load_ply_mesh(&pred)?, load_ply_mesh(&gt)?);
            let m = mesh_crown_metrics(&pred, &gt, cfg.f_score_tau, cfg.sample_count, cfg.seed())?;
            print!("{}", cfg.header(""));
            println!("cd_l2={}\nfidelity={}\nhausdorff={}\nf_score={}\nthreshold_used={}", m.cd_l2, m.fidelity, m.hausdorff, m.f_score, m.threshold_used);
            if let (Some(a), Some(b)) = (medial, lateral) {
                let (a, b) = (load_ply_mesh(&a)?, load_ply_mesh(&b)?);
                println!("medial_area_difference={}", (pia(&pred, &a)? - pia(&gt, &a)?).abs());
                println!("lateral_area_difference={}", (pia(&pred, &b)? - pia(&gt, &b)?).abs());
            }
            if let (Some(a), Some(b)) = (pred_margin, gt_margin) {
                println!("margin_hausdorff={}", margin_hausdorff(&MarginCurve::load(&a)?, &MarginCurve::load(&b)?));
            }
        }
        Command::Forward { ios, template, out } => {
            let (_, points) = generate_points(&load_ply_mesh(&ios)?, template, &cfg)?;
            write_points(&points, &out, &cfg)?;
            println!("points={}", points.len());
        }
        Command::Synth { out, seed, count, class, jitter, overlap } => {
            let seeds: Vec<u64> = match count {
                Some(n) => (seed..seed + n).collect(),
                None => vec![seed],
            };
            for s in seeds {
                let mut spec = match class {
                    Some(c) => SceneSpec { seed: s, ..SceneSpec::canonical(c) },
                    None => SceneSpec::randomized(s),
                };
                if let Some(j) = jitter {
                    spec.noise.jitter = j;
                }
                if overlap.is_some() {
                    spec.neighbors.overlap = overlap;
                }
                let dir = if count.is_some() { out.join(format!("case{s:04}")) } else { out.clone() };
                make_scene(&spec)?.save(&dir)?;
                println!("{}", dir.display());
            }
        }
        Command::Pipeline { ios, template, out } => {
            let run = run_pipeline_to_dir(&load_ply_mesh(&ios)?, template, &cfg, &out)?;
            for w in &run.warnings {
                log::warn!("{w}");
            }
            println!("{}", out.join("crown.ply").display());
        }
        Command::Eval { command } => return eval(command, &cfg),
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(command: EvalCommand, cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    match command {
        EvalCommand::Batch { cases, pred, out, workers } => {
            let report = evaluate_batch(&cases, &pred, cfg, workers)?;
            write_text(&out, &report.to_csv(cfg))?;
            for (c, why) in &report.failed {
                eprintln!("failed case {c}: {why}");
            }
            if !report.is_complete() {
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        EvalCommand::SignedDistance { crown, reference, out } => {
            let crown = load_ply_mesh(&crown)?;
            let dump = signed_distance_dump(&crown, &load_ply_mesh(&reference)?)?;
            if !dump.signed {
                log::warn!("reference is not watertight; distances are unsigned");
            }
            write_ply_file(&out, &dump.to_ply(&crown, Some(cfg)))?;
        }
        EvalCommand::LambdaSweep { cases, pred, lambdas, out } => {
            let mut sweep = Vec::new();
            for case in list_cases(&cases)? {
                let crown = pred.join(&case).join("crown.ply");
                if !crown.is_file() {
                    bail!(Error::MissingCase(case));
                }
                let bundle = SceneBundle::load(&cases.join(&case))?;
                sweep.push(SweepCase::from_meshes(&load_ply_mesh(&crown)?, &bundle.gt_crown, cfg.sample_count, cfg.seed())?);
            }
            write_text(&out, &sweep_csv(&lambda_sweep(&sweep, &lambdas)?, cfg))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidArgument(_)) => EXIT_VALIDATION,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
