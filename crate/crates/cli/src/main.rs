use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mapeval::classic::{EntropyFormula, DEFAULT_MME_RADIUS_M};
use mapeval::geometry::apply_transform;
use mapeval::io::{export_error_map, read_cloud, write_cloud};
use mapeval::perturb::{perturb, synth_scene, PerturbMode, PerturbSpec, SceneKind, SceneSpec};
use mapeval::pipeline::{error_distances, evaluate, EvaluationConfig, Metric};
use mapeval::registration::{icp_point_to_plane, IcpParams, IcpResult, DEFAULT_TAU_M};
use mapeval::report::{write_report, IcpSummary};
use mapeval::voxel::{DEFAULT_COMPONENTS, DEFAULT_MIN_POINTS, DEFAULT_VOXEL_SIZE_M};
use mapeval::{PointCloud, RigidTransform};

/// Evaluate point cloud maps against ground truth.
///
/// Every flag can also be set through an environment variable named
/// MAPEVAL_<FLAG>, e.g. MAPEVAL_VOXEL_SIZE=2.0.
#[derive(Parser)]
#[command(name = "mapeval", version)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "MAPEVAL_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align the estimated map to ground truth with point-to-plane ICP.
    Register(RegisterArgs),
    /// Compute all metrics and write the report bundle.
    Evaluate(EvaluateArgs),
    /// Add Gaussian noise or outliers to a cloud.
    Perturb(PerturbArgs),
    /// Time each pipeline stage.
    Bench(BenchArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Inputs {
    /// Ground-truth cloud (.ply or .pcd).
    #[arg(long, env = "MAPEVAL_GT")]
    gt: PathBuf,
    /// Estimated cloud (.ply or .pcd).
    #[arg(long, env = "MAPEVAL_EST")]
    est: PathBuf,
}

#[derive(Args)]
struct IcpArgs {
    /// Initial pose: a file of 16 row-major values, or the values themselves
    /// separated by commas or spaces. Identity when omitted.
    #[arg(long, env = "MAPEVAL_INIT_POSE")]
    init_pose: Option<String>,
    #[arg(long, env = "MAPEVAL_MAX_ITERATIONS", default_value_t = 50)]
    max_iterations: usize,
    /// Pairs farther apart are ignored during alignment, meters.
    #[arg(long, env = "MAPEVAL_MAX_CORRESPONDENCE_DISTANCE", default_value_t = 1.0)]
    max_correspondence_distance: f64,
}

impl IcpArgs {
    fn params(&self) -> IcpParams {
        IcpParams {
            max_iterations: self.max_iterations,
            max_correspondence_distance: self.max_correspondence_distance,
            ..IcpParams::default()
        }
    }
}

#[derive(Args)]
struct MetricArgs {
    /// Correspondence threshold, meters.
    #[arg(long, env = "MAPEVAL_TAU", default_value_t = DEFAULT_TAU_M)]
    tau: f64,
    /// Voxel edge length, meters.
    #[arg(long, env = "MAPEVAL_VOXEL_SIZE", default_value_t = DEFAULT_VOXEL_SIZE_M)]
    voxel_size: f64,
    /// Neighborhood radius for MME, meters.
    #[arg(long, env = "MAPEVAL_MME_RADIUS", default_value_t = DEFAULT_MME_RADIUS_M)]
    mme_radius: f64,
    /// Voxels with fewer points are discarded.
    #[arg(long, env = "MAPEVAL_MIN_VOXEL_POINTS", default_value_t = DEFAULT_MIN_POINTS)]
    min_voxel_points: usize,
    /// Mixture components for the 3-sigma bound.
    #[arg(long, env = "MAPEVAL_GMM_K", default_value_t = DEFAULT_COMPONENTS)]
    gmm_k: usize,
    #[arg(long, env = "MAPEVAL_SEED", default_value_t = 0)]
    seed: u64,
    /// Comma-separated metrics to skip: ac, com, cd, mme, awd, scs, w_bound.
    #[arg(long, env = "MAPEVAL_SKIP", value_delimiter = ',')]
    skip: Vec<Metric>,
    /// Per-point entropy used by MME.
    #[arg(long, env = "MAPEVAL_MME_FORMULA", value_enum, default_value_t = MmeFormula::Gaussian)]
    mme_formula: MmeFormula,
}

#[derive(Clone, Copy, ValueEnum)]
enum MmeFormula {
    Gaussian,
    SmallestEigenvalue,
}

impl MetricArgs {
    fn config(&self) -> EvaluationConfig {
        EvaluationConfig {
            tau_m: self.tau,
            voxel_size_m: self.voxel_size,
            mme_radius_m: self.mme_radius,
            min_voxel_points: self.min_voxel_points,
            gmm_k: self.gmm_k,
            seed: self.seed,
            skip: self.skip.clone(),
            entropy_formula: match self.mme_formula {
                MmeFormula::Gaussian => EntropyFormula::Gaussian,
                MmeFormula::SmallestEigenvalue => EntropyFormula::SmallestEigenvalue,
            },
        }
    }
}

#[derive(Args)]
struct RegisterArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    icp: IcpArgs,
    /// Output directory.
    #[arg(long, env = "MAPEVAL_OUT", default_value = "mapeval-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    metrics: MetricArgs,
    /// Align the estimate with ICP before evaluating.
    #[arg(long, env = "MAPEVAL_REGISTER")]
    register: bool,
    #[command(flatten)]
    icp: IcpArgs,
    /// Output directory.
    #[arg(long, env = "MAPEVAL_OUT", default_value = "mapeval-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Noise,
    Outlier,
}

#[derive(Args)]
struct PerturbArgs {
    /// Input cloud.
    #[arg(long, env = "MAPEVAL_INPUT")]
    input: PathBuf,
    #[arg(long, env = "MAPEVAL_MODE", value_enum)]
    mode: Mode,
    /// Fraction of points affected, in [0, 1].
    #[arg(long, env = "MAPEVAL_FRACTION")]
    fraction: f64,
    /// Standard deviation of the displacement, cm.
    #[arg(long, env = "MAPEVAL_SIGMA_CM")]
    sigma_cm: f64,
    #[arg(long, env = "MAPEVAL_SEED", default_value_t = 0)]
    seed: u64,
    /// Output cloud (.ply or .pcd).
    #[arg(long, env = "MAPEVAL_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    metrics: MetricArgs,
    #[command(flatten)]
    icp: IcpArgs,
    /// Number of timed runs; per-stage medians are reported.
    #[arg(long, env = "MAPEVAL_REPEATS", default_value_t = 3)]
    repeats: usize,
    /// Also write the timing JSON to this file.
    #[arg(long, env = "MAPEVAL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    BoxRoom,
    PlanarSheet,
    Corridor,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = "MAPEVAL_KIND", value_enum, default_value_t = Kind::BoxRoom)]
    kind: Kind,
    /// Extents along x, y, z in meters.
    #[arg(long, env = "MAPEVAL_EXTENTS", value_delimiter = ',', default_values_t = [30.0, 7.0, 4.0])]
    extents: Vec<f64>,
    /// Points per square meter.
    #[arg(long, env = "MAPEVAL_DENSITY", default_value_t = 1000.0)]
    density: f64,
    #[arg(long, env = "MAPEVAL_SEED", default_value_t = 0)]
    seed: u64,
    /// Output cloud (.ply or .pcd).
    #[arg(long, env = "MAPEVAL_OUT")]
    out: PathBuf,
}

fn load(path: &Path) -> Result<PointCloud> {
    let loaded = read_cloud(path).with_context(|| format!("cannot read {}", path.display()))?;
    if loaded.dropped > 0 {
        log::warn!("{}: dropped {} non-finite points", path.display(), loaded.dropped);
    }
    if loaded.cloud.is_empty() {
        bail!("{}: cloud has no finite points", path.display());
    }
    Ok(loaded.cloud)
}

fn parse_pose(text: &str) -> Result<RigidTransform> {
    let values: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad pose value `{t}`")))
        .collect::<Result<_>>()?;
    let values: [f64; 16] = values
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("pose needs 16 values, got {}", v.len()))?;
    Ok(RigidTransform::from_row_major(&values)?)
}

fn init_pose(arg: Option<&str>) -> Result<RigidTransform> {
    match arg {
        None => Ok(RigidTransform::identity()),
        Some(s) if Path::new(s).is_file() => {
            let text = fs::read_to_string(s).with_context(|| format!("cannot read pose file {s}"))?;
            parse_pose(&text).with_context(|| format!("pose file {s}"))
        }
        Some(s) => parse_pose(s).context("--init-pose"),
    }
}

/// Four lines of four values, 17 significant digits each.
fn format_pose(t: &RigidTransform) -> String {
    let m = t.to_row_major();
    m.chunks(4)
        .map(|row| row.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

fn icp_summary(r: &IcpResult) -> IcpSummary {
    IcpSummary {
        iterations: r.iterations,
        converged: r.converged,
        mean_residual_m: r.mean_residual,
        correspondences: r.correspondences,
        pose: r.transform.to_row_major(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn run_icp(gt: &PointCloud, est: &PointCloud, icp: &IcpArgs) -> Result<(IcpResult, f64)> {
    let init = init_pose(icp.init_pose.as_deref())?;
    let start = Instant::now();
    let result = icp_point_to_plane(est, gt, &init, &icp.params()).context("registration failed")?;
    let elapsed = start.elapsed().as_secs_f64();
    if !result.converged {
        log::warn!("ICP stopped after {} iterations without converging", result.iterations);
    }
    Ok((result, elapsed))
}

fn cmd_register(args: &RegisterArgs) -> Result<()> {
    let gt = load(&args.inputs.gt)?;
    let est = load(&args.inputs.est)?;
    let (result, elapsed) = run_icp(&gt, &est, &args.icp)?;
    create_dir(&args.out)?;
    let ext = args.inputs.est.extension().and_then(|e| e.to_str()).unwrap_or("ply");
    let aligned_path = args.out.join(format!("aligned.{ext}"));
    write_cloud(&aligned_path, &apply_transform(&result.transform, &est))?;
    write_text(&args.out.join("pose.txt"), &format_pose(&result.transform))?;
    let stats = json!({
        "iterations": result.iterations,
        "converged": result.converged,
        "mean_residual_m": result.mean_residual,
        "correspondences": result.correspondences,
        "objective_history": result.objective_history,
        "runtime_s": elapsed,
        "pose": result.transform.to_row_major(),
    });
    write_text(&args.out.join("icp.json"), &serde_json::to_string_pretty(&stats)?)?;
    println!(
        "ICP: {} iterations, converged = {}, mean residual {:.6} m\n{}",
        result.iterations,
        result.converged,
        result.mean_residual,
        format_pose(&result.transform)
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let gt = load(&args.inputs.gt)?;
    let mut est = load(&args.inputs.est)?;
    let config = args.metrics.config();
    config.validate()?;
    let mut registration = None;
    if args.register {
        let (result, elapsed) = run_icp(&gt, &est, &args.icp)?;
        est = apply_transform(&result.transform, &est);
        registration = Some((icp_summary(&result), elapsed));
    }
    let mut evaluation = evaluate(&gt, &est, &config)?;
    if let Some((summary, elapsed)) = registration {
        evaluation.report.runtimes_s.registration = Some(elapsed);
        evaluation.report.diagnostics.icp = Some(summary);
    }
    evaluation.report.validate()?;

    create_dir(&args.out)?;
    write_report(&evaluation.report, &args.out)?;
    let distances = match evaluation.est_to_gt.take() {
        Some(d) => d,
        None => error_distances(&gt, &est)?,
    };
    let map = export_error_map(&est, &distances, config.tau_m)?;
    write_cloud(args.out.join("error_map.ply"), &map)?;

    print!("{}", evaluation.report.summary_table());
    for w in &evaluation.report.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs) -> Result<()> {
    let cloud = load(&args.input)?;
    let spec = PerturbSpec {
        mode: match args.mode {
            Mode::Noise => PerturbMode::Noise,
            Mode::Outlier => PerturbMode::Outlier,
        },
        fraction: args.fraction,
        sigma_cm: args.sigma_cm,
        seed: args.seed,
    };
    let out = perturb(&cloud, &spec)?;
    write_cloud(&args.out, &out)?;
    println!(
        "perturbed {} of {} points -> {}",
        spec.affected_count(cloud.len()),
        cloud.len(),
        args.out.display()
    );
    Ok(())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.repeats == 0 {
        bail!("--repeats must be positive");
    }
    let gt = load(&args.inputs.gt)?;
    let est = load(&args.inputs.est)?;
    let config = args.metrics.config();
    config.validate()?;

    let stages = ["registration", "ac", "cd", "mme", "voxelization", "awd", "scs"];
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); stages.len()];
    let mut runs = Vec::new();
    for _ in 0..args.repeats {
        let registration = match run_icp(&gt, &est, &args.icp) {
            Ok((_, t)) => Some(t),
            Err(e) => {
                log::warn!("registration not timed: {e:#}");
                None
            }
        };
        let t = evaluate(&gt, &est, &config)?.timings;
        let row = [registration, t.ac, t.cd, t.mme, t.voxelization, t.awd, t.scs];
        for (s, v) in samples.iter_mut().zip(row) {
            s.extend(v);
        }
        runs.push(
            stages
                .iter()
                .zip(row)
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect::<serde_json::Map<_, _>>(),
        );
    }
    let medians: serde_json::Map<_, _> = stages
        .iter()
        .zip(samples.iter_mut())
        .map(|(k, s)| (k.to_string(), json!(median(s))))
        .collect();
    let report = json!({
        "threads": rayon::current_num_threads(),
        "n_gt": gt.len(),
        "n_est": est.len(),
        "repeats": args.repeats,
        "stages_s": medians,
        "runs": runs,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        write_text(path, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let kind = match args.kind {
        Kind::BoxRoom => SceneKind::BoxRoom,
        Kind::PlanarSheet => SceneKind::PlanarSheet,
        Kind::Corridor => SceneKind::Corridor,
    };
    let extents: [f64; 3] = args
        .extents
        .clone()
        .try_into()
        .map_err(|_| anyhow::anyhow!("--extents takes three values"))?;
    let cloud = synth_scene(&SceneSpec::new(kind, extents, args.density, args.seed))?;
    write_cloud(&args.out, &cloud)?;
    println!("{} points -> {}", cloud.len(), args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("cannot configure thread pool")?;
    }
    match &cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_text_round_trips_exactly() {
        let t = RigidTransform::from_axis_angle(
            &mapeval::Vec3::new(0.3, -0.2, 0.9).normalize(),
            0.7,
            mapeval::Vec3::new(1.0 / 3.0, -2.5, 1e-7),
        );
        let back = parse_pose(&format_pose(&t)).unwrap();
        // from_row_major re-projects onto SO(3); the values already lie on it.
        let (da, dt) = back.distance_to(&t);
        assert!(da < 1e-15 && dt < 1e-15);
        for line in format_pose(&t).lines() {
            assert_eq!(line.split_whitespace().count(), 4);
        }
    }

    #[test]
    fn pose_parse_errors() {
        assert!(parse_pose("1 0 0").is_err());
        assert!(parse_pose(&"x ".repeat(16)).is_err());
        let identity = "1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1";
        assert_eq!(parse_pose(identity).unwrap(), RigidTransform::identity());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
