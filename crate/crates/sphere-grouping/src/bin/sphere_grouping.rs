//! Experiment driver: margin bounds, gradient checks, the 1-D toy descent,
//! synthetic scene generation, training, evaluation, and proposal export.
//! Every command is deterministic given its configuration and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sphere_grouping::decoder::{decode_modes, multi_bandwidth_proposals, DEFAULT_TAU};
use sphere_grouping::embedding::calibrated_similarity;
use sphere_grouping::eval::{average_recall, best_iou, similarity_histogram, standard_ar_thresholds};
use sphere_grouping::gbms::{
    bandwidth_from_margin, gbms_step, gbms_unroll, KernelConfig, LossMode,
};
use sphere_grouping::gradcheck::{run_all_paths, FaultInjection, GradcheckConfig};
use sphere_grouping::io::{
    read_embedding_csv, read_kv_config, read_net_csv, write_embedding_csv, write_labels_pgm,
    write_matrix_csv, write_metrics_csv, write_net_csv, write_scene_ppm,
};
use sphere_grouping::loss::{
    instance_weights, margin_lower_bound, margin_upper_bound, LossConfig, Normalization,
};
use sphere_grouping::net::PerPixelNet;
use sphere_grouping::synth::{gen_1d_gaussians, gen_instance_scene, GaussianMixSpec, Layout, Scene, ShapeSceneSpec, FEATURE_DIM};
use sphere_grouping::toy::{
    count_1d_modes, toy_1d_descent, train_toy_instances, FixedRegressor, InstanceTrainConfig,
    ToyTrainConfig,
};
use sphere_grouping::{Error, Result};

#[derive(Parser)]
#[command(name = "sphere-grouping", version, about = "Spherical embedding learning with recurrent mean-shift grouping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the margin lower/upper bounds for embedding dimension n.
    Margin(MarginArgs),
    /// Compare every analytic gradient path against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the 1-D three-Gaussian descent in all regimes and dump CSVs.
    Toy1d(Toy1dArgs),
    /// Generate synthetic instance scenes (PPM image + PGM mask + CSVs).
    Gen(GenArgs),
    /// Train the per-pixel net through the grouping pipeline.
    Train(TrainArgs),
    /// Evaluate a trained net on held-out scenes (IoU, AR, histograms).
    Eval(EvalArgs),
    /// Export multi-bandwidth grouping proposals for an embedding.
    Proposals(ProposalsArgs),
}

#[derive(Args)]
struct MarginArgs {
    /// Embedding dimension n (>= 2).
    #[arg(long)]
    n: usize,
    /// Constant C in the upper bound (default 0).
    #[arg(long, default_value_t = 0.0)]
    c: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seeded instances per path.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: flip the sign of the named path's analytic gradient.
    #[arg(long)]
    fault_path: Option<String>,
}

/// Shared experiment keys; every field can come from `--config FILE`
/// (key=value lines) with command-line flags taking precedence.
#[derive(Args, Clone)]
struct CommonConfig {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    loops: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// One of: all_loops, final_loop_only, initial_only.
    #[arg(long)]
    loss_mode: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    num_shapes: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    num_scenes: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Emit minimal SVG plots alongside the CSVs.
    #[arg(long, default_value_t = false)]
    svg: bool,
}

#[derive(Args)]
struct Toy1dArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Points per Gaussian component.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Trained network CSV (defaults to <out_dir>/net.csv).
    #[arg(long)]
    net: Option<PathBuf>,
}

#[derive(Args)]
struct ProposalsArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Initial embedding CSV (D x N with a "D,N" header).
    #[arg(long)]
    embedding: PathBuf,
    /// Comma-separated bandwidth list.
    #[arg(long)]
    betas: String,
    #[arg(long)]
    mask_width: Option<usize>,
    #[arg(long)]
    mask_height: Option<usize>,
}

/// Resolved experiment settings after merging defaults, config file, flags.
struct Experiment {
    alpha: f64,
    beta: f64,
    eta: f64,
    loops: usize,
    sample_size: usize,
    seed: u64,
    steps: usize,
    lr: f64,
    loss_mode: LossMode,
    tau: f64,
    out_dir: PathBuf,
    width: usize,
    height: usize,
    num_shapes: usize,
    noise_sigma: f64,
    num_scenes: usize,
    hidden: usize,
    embed_dim: usize,
    svg: bool,
}

const KNOWN_KEYS: &[&str] = &[
    "alpha", "beta", "eta", "loops", "sample_size", "seed", "steps", "lr", "loss_mode", "tau",
    "out_dir", "width", "height", "num_shapes", "noise_sigma", "num_scenes", "hidden",
    "embed_dim", "count", "bandwidth",
];

fn parse_key<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {v}"))),
    }
}

fn parse_loss_mode(s: &str) -> Result<LossMode> {
    match s {
        "all_loops" => Ok(LossMode::AllLoops),
        "final_loop_only" => Ok(LossMode::FinalOnly),
        "initial_only" => Ok(LossMode::InitialOnly),
        other => Err(Error::InvalidConfig(format!("unknown loss_mode: {other}"))),
    }
}

impl Experiment {
    fn resolve(common: &CommonConfig) -> Result<Self> {
        let file = match &common.config {
            Some(path) => {
                let map = read_kv_config(path)?;
                for key in map.keys() {
                    if !KNOWN_KEYS.contains(&key.as_str()) {
                        return Err(Error::InvalidConfig(format!("unknown config key: {key}")));
                    }
                }
                map
            }
            None => BTreeMap::new(),
        };
        let alpha = common
            .alpha
            .or(parse_key(&file, "alpha")?)
            .unwrap_or(0.5);
        let beta = match common.beta.or(parse_key(&file, "beta")?) {
            Some(b) => b,
            None => bandwidth_from_margin(alpha)?,
        };
        let loss_mode = match &common.loss_mode {
            Some(s) => parse_loss_mode(s)?,
            None => match file.get("loss_mode") {
                Some(s) => parse_loss_mode(s)?,
                None => LossMode::AllLoops,
            },
        };
        Ok(Self {
            alpha,
            beta,
            eta: common.eta.or(parse_key(&file, "eta")?).unwrap_or(1.0),
            loops: common.loops.or(parse_key(&file, "loops")?).unwrap_or(5),
            sample_size: common
                .sample_size
                .or(parse_key(&file, "sample_size")?)
                .unwrap_or(1024),
            seed: common.seed.or(parse_key(&file, "seed")?).unwrap_or(0),
            steps: common.steps.or(parse_key(&file, "steps")?).unwrap_or(500),
            lr: common.lr.or(parse_key(&file, "lr")?).unwrap_or(0.3),
            loss_mode,
            tau: common.tau.or(parse_key(&file, "tau")?).unwrap_or(DEFAULT_TAU),
            out_dir: common
                .out_dir
                .clone()
                .or(file.get("out_dir").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out")),
            width: common.width.or(parse_key(&file, "width")?).unwrap_or(16),
            height: common.height.or(parse_key(&file, "height")?).unwrap_or(16),
            num_shapes: common
                .num_shapes
                .or(parse_key(&file, "num_shapes")?)
                .unwrap_or(2),
            noise_sigma: common
                .noise_sigma
                .or(parse_key(&file, "noise_sigma")?)
                .unwrap_or(0.05),
            num_scenes: common
                .num_scenes
                .or(parse_key(&file, "num_scenes")?)
                .unwrap_or(32),
            hidden: common.hidden.or(parse_key(&file, "hidden")?).unwrap_or(64),
            embed_dim: common
                .embed_dim
                .or(parse_key(&file, "embed_dim")?)
                .unwrap_or(8),
            svg: common.svg,
        })
    }

    fn kernel(&self) -> Result<KernelConfig> {
        KernelConfig::new(self.beta, self.eta, self.loops)
    }

    fn loss(&self) -> Result<LossConfig> {
        LossConfig::new(self.alpha, self.sample_size, self.seed, Normalization::PerSampleS)
    }

    fn scene_spec(&self, seed: u64) -> ShapeSceneSpec {
        ShapeSceneSpec {
            width: self.width,
            height: self.height,
            layout: Layout::Random {
                num_shapes: self.num_shapes,
            },
            noise_sigma: self.noise_sigma,
            seed,
        }
    }

    fn gen_scenes(&self, base_seed: u64, count: usize) -> Result<Vec<Scene>> {
        (0..count)
            .map(|i| gen_instance_scene(&self.scene_spec(base_seed + i as u64)))
            .collect()
    }
}

/// The thread cap is accepted for interface stability; execution is
/// single-threaded for exact determinism, so only values are validated.
fn check_thread_env() -> Result<()> {
    if let Ok(v) = std::env::var("SPHERE_GROUPING_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("SPHERE_GROUPING_THREADS: {v}")))?;
        if n == 0 {
            return Err(Error::InvalidConfig("SPHERE_GROUPING_THREADS must be >= 1".into()));
        }
    }
    Ok(())
}

fn write_svg_curve(path: &Path, ys: &[f64], title: &str) -> Result<()> {
    let (w, h) = (640.0f64, 360.0f64);
    let max = ys.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    let min = ys.iter().cloned().fold(f64::MAX, f64::min).min(0.0);
    let span = (max - min).max(1e-12);
    let pts: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let x = 20.0 + (w - 40.0) * i as f64 / (ys.len().max(2) - 1) as f64;
            let yy = h - 20.0 - (h - 40.0) * (y - min) / span;
            format!("{x:.1},{yy:.1}")
        })
        .collect();
    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\
         <text x=\"20\" y=\"16\" font-size=\"12\">{title}</text>\
         <polyline fill=\"none\" stroke=\"black\" points=\"{}\"/></svg>",
        pts.join(" ")
    );
    Ok(std::fs::write(path, svg)?)
}

fn cmd_margin(args: &MarginArgs) -> Result<()> {
    if args.n < 2 {
        return Err(Error::InvalidConfig("n must be >= 2".into()));
    }
    let lower = margin_lower_bound(args.n);
    let upper = margin_upper_bound(args.n, args.c)?;
    println!("n={} lower={lower:.6} upper={upper:.6}", args.n);
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let fault = match &args.fault_path {
        // Leak is fine: one short string for the process lifetime.
        Some(name) => FaultInjection::SignFlip(Box::leak(name.clone().into_boxed_str())),
        None => FaultInjection::None,
    };
    let cfg = GradcheckConfig {
        seed: args.seed,
        instances: args.instances,
        unroll_loops: vec![1, 2, 3],
        fault,
    };
    let reports = run_all_paths(&cfg);
    for r in &reports {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<14} max_rel_err={:.3e} tol={:.0e} instances={}",
            r.name, r.max_rel_err, r.tolerance, r.instances
        );
    }
    let failures = reports.iter().filter(|r| !r.passed()).count();
    if failures > 0 {
        return Err(Error::GradcheckFailed(failures));
    }
    Ok(())
}

fn cmd_toy1d(args: &Toy1dArgs) -> Result<()> {
    let exp = Experiment::resolve(&args.common)?;
    let count = args.count.unwrap_or(100);
    let bandwidth = args.bandwidth.unwrap_or(0.2);
    let steps = args.common.steps.unwrap_or(30);
    let lr = args.common.lr.unwrap_or(0.1);
    std::fs::create_dir_all(&exp.out_dir)?;

    let spec = GaussianMixSpec::three_gaussians(count);
    let (points, labels) = gen_1d_gaussians(&spec, exp.seed);
    let reg = FixedRegressor::standard();

    let regimes: Vec<(&str, usize, LossMode)> = vec![
        ("no_gbms", 0, LossMode::InitialOnly),
        ("gbms_t1_all", 1, LossMode::AllLoops),
        ("gbms_t3_all", 3, LossMode::AllLoops),
        ("gbms_t5_all", 5, LossMode::AllLoops),
        ("gbms_t1_final", 1, LossMode::FinalOnly),
        ("gbms_t3_final", 3, LossMode::FinalOnly),
        ("gbms_t5_final", 5, LossMode::FinalOnly),
    ];
    let mut summary: Vec<(String, f64)> = Vec::new();
    for (name, loops, mode) in regimes {
        let cfg = ToyTrainConfig {
            steps,
            lr,
            bandwidth,
            loops,
            eta: 1.0,
            loss_mode: mode,
        };
        let result = toy_1d_descent(&points, &labels, &reg, &cfg);
        // trajectory CSV: one row per step, one column per point
        let mut csv = String::from("step");
        for i in 0..points.len() {
            csv.push_str(&format!(",x{i}"));
        }
        csv.push('\n');
        for (t, state) in result.trajectory.iter().enumerate() {
            csv.push_str(&t.to_string());
            for v in state {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        std::fs::write(exp.out_dir.join(format!("toy_{name}.csv")), csv)?;
        let mut mse_csv = String::from("step,loss\n");
        for (t, v) in result.mse_curve.iter().enumerate() {
            mse_csv.push_str(&format!("{t},{v}\n"));
        }
        std::fs::write(exp.out_dir.join(format!("toy_{name}_mse.csv")), mse_csv)
            ?;
        if exp.svg {
            write_svg_curve(
                &exp.out_dir.join(format!("toy_{name}_mse.svg")),
                &result.mse_curve,
                name,
            )?;
        }
        let modes = count_1d_modes(&result.final_points, bandwidth);
        summary.push((format!("{name}_modes"), modes as f64));
        summary.push((format!("{name}_final_mse"), result.final_mse));
        println!("{name}: modes={modes} final_mse={:.6}", result.final_mse);
    }
    write_metrics_csv(&exp.out_dir.join("toy_summary.csv"), &summary)?;
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let exp = Experiment::resolve(&args.common)?;
    std::fs::create_dir_all(&exp.out_dir)?;
    for i in 0..exp.num_scenes {
        let scene = gen_instance_scene(&exp.scene_spec(exp.seed + i as u64))?;
        write_scene_ppm(
            &exp.out_dir.join(format!("scene_{i}.ppm")),
            &scene.features,
            scene.width,
            scene.height,
        )?;
        write_labels_pgm(
            &exp.out_dir.join(format!("scene_{i}_mask.pgm")),
            &scene.labels,
            scene.width,
            scene.height,
        )?;
        write_matrix_csv(&exp.out_dir.join(format!("scene_{i}_features.csv")), &scene.features)?;
    }
    println!("wrote {} scenes to {}", exp.num_scenes, exp.out_dir.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let exp = Experiment::resolve(&args.common)?;
    std::fs::create_dir_all(&exp.out_dir)?;
    let scenes = exp.gen_scenes(exp.seed, exp.num_scenes)?;
    let mut net = PerPixelNet::random(FEATURE_DIM, exp.hidden, exp.embed_dim, exp.seed);
    let cfg = InstanceTrainConfig {
        steps: exp.steps,
        lr: exp.lr,
        kernel: exp.kernel()?,
        loss: exp.loss()?,
        loss_mode: exp.loss_mode,
    };
    let result = train_toy_instances(&scenes, &mut net, &cfg)?;
    write_net_csv(&exp.out_dir.join("net.csv"), &net)?;
    let mut csv = String::from("step,loss\n");
    for (t, v) in result.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{t},{v}\n"));
    }
    std::fs::write(exp.out_dir.join("train_losses.csv"), csv)?;
    if exp.svg {
        write_svg_curve(&exp.out_dir.join("train_losses.svg"), &result.loss_curve, "train loss")?;
    }
    println!(
        "trained {} steps; final loss {:.6}",
        exp.steps,
        result.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Held-out scene seeds start far from the training range.
const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Bandwidth ladder for proposal pooling at eval time: the configured beta
/// plus coarser and finer settings, pooled and deduplicated.
fn eval_beta_ladder(beta: f64) -> Vec<f64> {
    vec![beta / 2.0, beta, beta * 2.0, beta * 4.0, beta * 8.0, beta * 16.0]
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let exp = Experiment::resolve(&args.common)?;
    std::fs::create_dir_all(&exp.out_dir)?;
    let net_path = args
        .net
        .clone()
        .unwrap_or_else(|| exp.out_dir.join("net.csv"));
    let net = read_net_csv(&net_path)?;
    let kernel = exp.kernel()?;
    let scenes = exp.gen_scenes(exp.seed + EVAL_SEED_OFFSET, 10)?;

    let thresholds = standard_ar_thresholds();
    let mut ious = Vec::new();
    let mut ars = Vec::new();
    let mut pre_mass = 0.0;
    let mut post_mass = 0.0;
    for (i, scene) in scenes.iter().enumerate() {
        let cache = net.forward(&scene.features)?;
        let mut x = cache.out.clone();
        for _ in 0..kernel.loops {
            x = gbms_step(&x, &kernel)?.y;
        }
        let partition = decode_modes(&x, exp.tau)?;
        let proposals =
            multi_bandwidth_proposals(&cache.out, &eval_beta_ladder(kernel.beta), &kernel, exp.tau)?;
        let m = best_iou(&proposals, &scene.labels, true)?;
        let ar = average_recall(&proposals, &scene.labels, &thresholds)?;
        ious.push(m.mean_best_iou);
        ars.push(ar);

        let pre = similarity_histogram(
            &calibrated_similarity(&cache.out)?,
            &scene.labels,
            1000,
            20_000,
            exp.seed,
        )?;
        let post = similarity_histogram(
            &calibrated_similarity(&x)?,
            &scene.labels,
            1000,
            20_000,
            exp.seed,
        )?;
        pre_mass += pre.positive_mass_above(0.999);
        post_mass += post.positive_mass_above(0.999);
        write_labels_pgm(
            &exp.out_dir.join(format!("eval_{i}_pred.pgm")),
            &partition_labels(&partition)?,
            scene.width,
            scene.height,
        )?;
    }
    let n = scenes.len() as f64;
    let mean_iou = ious.iter().sum::<f64>() / n;
    let mean_ar = ars.iter().sum::<f64>() / n;
    let metrics = vec![
        ("mean_best_iou".to_string(), mean_iou),
        ("average_recall".to_string(), mean_ar),
        ("pre_gbms_pos_mass_0999".to_string(), pre_mass / n),
        ("post_gbms_pos_mass_0999".to_string(), post_mass / n),
    ];
    write_metrics_csv(&exp.out_dir.join("eval_metrics.csv"), &metrics)?;
    println!("mean_best_iou={mean_iou:.4} average_recall={mean_ar:.4}");
    Ok(())
}

fn partition_labels(
    p: &sphere_grouping::decoder::InstancePartition,
) -> Result<sphere_grouping::loss::InstanceLabeling> {
    let labels: Vec<u32> = p.assignment.iter().map(|a| *a as u32).collect();
    sphere_grouping::loss::InstanceLabeling::new(labels)
}

fn cmd_proposals(args: &ProposalsArgs) -> Result<()> {
    let exp = Experiment::resolve(&args.common)?;
    std::fs::create_dir_all(&exp.out_dir)?;
    let x0 = read_embedding_csv(&args.embedding)?;
    let betas: Vec<f64> = args
        .betas
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad beta: {s}")))
        })
        .collect::<Result<_>>()?;
    let kernel = exp.kernel()?;
    let set = multi_bandwidth_proposals(&x0, &betas, &kernel, exp.tau)?;
    let mut csv = String::from("mask_file,source_beta,pixel_count\n");
    for (i, (mask, beta)) in set.masks.iter().zip(&set.source_beta).enumerate() {
        let count = mask.iter().filter(|&&b| b).count();
        let labels = sphere_grouping::loss::InstanceLabeling::new(
            mask.iter().map(|&b| u32::from(b)).collect(),
        )?;
        let file = format!("proposal_{i}.pgm");
        if let (Some(w), Some(h)) = (args.mask_width, args.mask_height) {
            write_labels_pgm(&exp.out_dir.join(&file), &labels, w, h)?;
        } else {
            sphere_grouping::io::write_labels_csv(
                &exp.out_dir.join(format!("proposal_{i}.csv")),
                &labels,
            )?;
        }
        csv.push_str(&format!("{file},{beta},{count}\n"));
    }
    std::fs::write(exp.out_dir.join("proposals.csv"), csv)?;
    println!("{} proposals", set.len());
    Ok(())
}

fn run() -> Result<()> {
    check_thread_env()?;
    let cli = Cli::parse();
    match &cli.command {
        Command::Margin(a) => cmd_margin(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Toy1d(a) => cmd_toy1d(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Proposals(a) => cmd_proposals(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Keep the unroll path linked for trajectory dumps in future commands.
#[allow(dead_code)]
fn dump_trajectory(exp: &Experiment, scene: &Scene, net: &PerPixelNet) -> Result<()> {
    let cache = net.forward(&scene.features)?;
    let weights = instance_weights(&scene.labels);
    let traj = gbms_unroll(
        &cache.out,
        &exp.kernel()?,
        &scene.labels,
        &weights,
        &exp.loss()?,
        exp.loss_mode,
    )?;
    for (t, state) in traj.states.iter().enumerate() {
        write_embedding_csv(&exp.out_dir.join(format!("state_t{t}.csv")), state)?;
    }
    let mut csv = String::from("loop,loss\n");
    for (t, v) in traj.per_loop_losses.iter().enumerate() {
        csv.push_str(&format!("{t},{}\n", v.value));
    }
    std::fs::write(exp.out_dir.join("losses.csv"), csv)?;
    Ok(())
}
