//! Command-line front end: tuning, single solves and the four experiment
//! pipelines, with CSV traces, plain-text reports and PGM images.
//!
//! Output directories are written to a temporary sibling and renamed into
//! place on success, so failures never leave partial results.

use std::collections::HashMap;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::applications::{
    blob_image, cartesian_mask, deblur, mri_reconstruct, phantom_image, register,
    run_random_experiment, ExperimentReport, ImageGrid,
};
use crate::error::{Error, Result};
use crate::lqp::LQProblem;
use crate::operators::{complexify, GridDims, LinearOperator};
use crate::solvers::{solve, ConvergenceTrace, Method, SolverParams, StopReason};
use crate::tuning::{
    closed_form_deblur, closed_form_mri, mri_constants_for_problem, tune_theta, ObjectiveKind,
    TunerConfig,
};

#[derive(Parser)]
#[command(
    name = "lqadmm",
    about = "ADMM for linear quadratic problems with automatic parameter selection",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune the penalty (and relaxation) parameter for a built-in problem.
    Tune(TuneArgs),
    /// Run one solver on a built-in problem and write its trace CSV.
    Solve(SolveArgs),
    /// Run a full experiment pipeline into an output directory.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentCommand,
    },
}

#[derive(Args)]
struct TuneArgs {
    /// Built-in problem: identity, deblur, mri or random.
    #[arg(long)]
    builtin: String,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// lambda-n or joint.
    #[arg(long, default_value = "joint")]
    objective: String,
    /// gd (numeric tuner) or closed-form.
    #[arg(long, default_value = "gd")]
    method: String,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    builtin: String,
    #[arg(long, default_value = "admm")]
    solver: String,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Trace CSV path.
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Random(RandomArgs),
    Deblur(DeblurArgs),
    Mri(MriArgs),
    Register(RegisterArgs),
}

#[derive(Args)]
struct RandomArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DeblurArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input PGM; a built-in phantom is used when absent.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MriArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Sampling mask PGM (nonzero = sampled); a Cartesian every-other-row
    /// mask is used when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    outer: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parse and execute; returns the process exit code (0 success, 1 usage
/// error, 2 runtime error).
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            // clap renders --help/--version as "errors" with success status.
            if e.use_stderr() {
                eprintln!("{e}");
                return 1;
            }
            print!("{e}");
            return 0;
        }
    };
    let outcome = match cli.command {
        Command::Tune(a) => run_tune(a),
        Command::Solve(a) => run_solve(a),
        Command::Experiment { kind } => run_experiment(kind),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Seed resolution: ADMM_TUNER_SEED overrides the flag, which overrides the
/// default.
fn resolve_seed(flag: Option<u64>, default: u64) -> CliResult<u64> {
    if let Ok(v) = std::env::var("ADMM_TUNER_SEED") {
        return v
            .parse()
            .map_err(|_| usage(format!("ADMM_TUNER_SEED must be an integer, got '{v}'")));
    }
    Ok(flag.unwrap_or(default))
}

fn builtin_problem(name: &str, mu: f64, seed: u64) -> CliResult<LQProblem> {
    let p = match name {
        "identity" => LQProblem::new(
            LinearOperator::identity(16),
            LinearOperator::identity(16),
            mu,
            complexify(&vec![1.0; 16]),
        )?,
        "deblur" => {
            let dims = GridDims::new(32, 32).unwrap();
            let a = LinearOperator::gaussian_blur(7, 2.0, dims)?;
            let img = phantom_image(dims);
            let f = a.apply(&complexify(&img.data), false)?;
            LQProblem::new(a, LinearOperator::identity(dims.len()), mu, f)?
        }
        "mri" => {
            let dims = GridDims::new(16, 16).unwrap();
            let a = LinearOperator::fourier_sampling(cartesian_mask(dims, 1), dims)?;
            let img = phantom_image(dims);
            let f = a.apply(&complexify(&img.data), false)?;
            LQProblem::new(a, LinearOperator::periodic_gradient(dims), mu, f)?
        }
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            crate::lqp::random_instance(40, 20, mu, &mut rng)?
        }
        _ => {
            return Err(usage(format!(
                "unknown builtin '{name}' (expected identity, deblur, mri or random)"
            )))
        }
    };
    Ok(p)
}

fn run_tune(args: TuneArgs) -> CliResult<()> {
    let mu = args.mu.unwrap_or(1.0);
    let seed = resolve_seed(args.seed, 7)?;
    let objective = match args.objective.as_str() {
        "lambda-n" => ObjectiveKind::LambdaN,
        "joint" => ObjectiveKind::Joint,
        other => return Err(usage(format!("unknown objective '{other}'"))),
    };
    match args.method.as_str() {
        "closed-form" => {
            let (theta, alpha) = match args.builtin.as_str() {
                "deblur" => closed_form_deblur(mu, objective == ObjectiveKind::Joint)?,
                "mri" => {
                    let p = builtin_problem("mri", mu, seed)?;
                    let k = mri_constants_for_problem(&p)?;
                    (closed_form_mri(mu, &k)?, None)
                }
                other => {
                    return Err(usage(format!(
                        "no closed form for builtin '{other}' (expected deblur or mri)"
                    )))
                }
            };
            println!("theta_star = {theta}");
            if let Some(a) = alpha {
                println!("alpha_star = {a}");
            }
        }
        "gd" => {
            let p = builtin_problem(&args.builtin, mu, seed)?;
            let res = tune_theta(&p, objective, &TunerConfig::for_mu(mu))?;
            println!("theta_star = {}", res.theta_star);
            if let Some(a) = res.alpha_star {
                println!("alpha_star = {a}");
            }
            println!("objective = {}", res.objective_at_optimum);
            println!("converged = {}", res.converged);
            println!("evaluations = {}", res.history.len());
        }
        other => return Err(usage(format!("unknown method '{other}'"))),
    }
    Ok(())
}

fn run_solve(args: SolveArgs) -> CliResult<()> {
    let mu = args.mu.unwrap_or(1.0);
    let seed = resolve_seed(args.seed, 7)?;
    let problem = builtin_problem(&args.builtin, mu, seed)?;
    let mut params = SolverParams::default();
    params.method = Method::parse(&args.solver).map_err(|e| usage(e.to_string()))?;
    if let Some(t) = args.theta {
        params.theta = t;
    }
    if let Some(a) = args.alpha {
        params.alpha = a;
    }
    if let Some(k) = args.max_iters {
        params.max_iters = k;
    }
    if let Some(t) = args.tol {
        params.tol = t;
    }
    let n = problem.n();
    let zero = DVector::from_element(n, Complex64::default());
    let (_, trace) = solve(&problem, &params, &zero, &zero)?;
    write_trace_csv(&trace, &args.out)?;
    println!(
        "{}: {} iterations, final error {:.3e}, stopped by {}",
        params.method.name(),
        trace.iterates_error.len() - 1,
        trace.iterates_error.last().unwrap(),
        match trace.stop_reason {
            StopReason::Tol => "tolerance",
            StopReason::MaxIters => "iteration cap",
        }
    );
    println!("trace written to {}", args.out.display());
    Ok(())
}

fn run_experiment(kind: ExperimentCommand) -> CliResult<()> {
    match kind {
        ExperimentCommand::Random(a) => run_experiment_random(a),
        ExperimentCommand::Deblur(a) => run_experiment_deblur(a),
        ExperimentCommand::Mri(a) => run_experiment_mri(a),
        ExperimentCommand::Register(a) => run_experiment_register(a),
    }
}

/// One `key = value` per line, `#` comments; keys checked against the
/// experiment's allowed set.
fn parse_config(path: &Path, allowed: &[&str]) -> CliResult<HashMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(format!(
                "{}:{}: expected 'key = value', got '{line}'",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !allowed.contains(&key.as_str()) {
            return Err(usage(format!(
                "{}:{}: unknown key '{key}' (allowed: {})",
                path.display(),
                lineno + 1,
                allowed.join(", ")
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn config_get<T: std::str::FromStr>(
    cfg: &HashMap<String, String>,
    key: &str,
) -> CliResult<Option<T>> {
    match cfg.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("bad value '{v}' for config key '{key}'"))),
    }
}

/// Flag beats config beats default.
fn pick<T: Copy>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

fn run_experiment_random(args: RandomArgs) -> CliResult<()> {
    let allowed = ["m", "n", "mu", "instances", "seed", "jobs"];
    let cfg = match &args.config {
        Some(p) => parse_config(p, &allowed)?,
        None => HashMap::new(),
    };
    let m = pick(args.m, config_get(&cfg, "m")?, 200);
    let n = pick(args.n, config_get(&cfg, "n")?, 50);
    let mu = pick(args.mu, config_get(&cfg, "mu")?, 1.0);
    let instances = pick(args.instances, config_get(&cfg, "instances")?, 50);
    let seed = resolve_seed(args.seed.or(config_get(&cfg, "seed")?), 7)?;
    let jobs = pick(args.jobs, config_get(&cfg, "jobs")?, 0);
    let run = || run_random_experiment(m, n, mu, instances, seed);
    let reports = if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::NonConvergence(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };
    write_output_dir(&args.out, |dir| {
        let mut summary = String::new();
        for (i, report) in reports.iter().enumerate() {
            let prefix = format!("instance-{i:02}");
            write_report_files(dir, &prefix, report)?;
            summary.push_str(&render_report(report));
            summary.push('\n');
        }
        write_text(&dir.join("summary.txt"), &summary)
    })?;
    println!(
        "{} random instances written to {}",
        reports.len(),
        args.out.display()
    );
    Ok(())
}

fn load_image_or(path: &Option<PathBuf>, fallback: impl FnOnce() -> ImageGrid) -> CliResult<ImageGrid> {
    match path {
        Some(p) => Ok(read_pgm(p)?),
        None => Ok(fallback()),
    }
}

fn run_experiment_deblur(args: DeblurArgs) -> CliResult<()> {
    let allowed = ["image", "size", "mu", "seed"];
    let cfg = match &args.config {
        Some(p) => parse_config(p, &allowed)?,
        None => HashMap::new(),
    };
    let size = pick(args.size, config_get(&cfg, "size")?, 64);
    let mu = pick(args.mu, config_get(&cfg, "mu")?, 1e3);
    let seed = resolve_seed(args.seed.or(config_get(&cfg, "seed")?), 7)?;
    let image_path = args.image.or(cfg.get("image").map(PathBuf::from));
    let dims = GridDims::new(size, size)?;
    let image = load_image_or(&image_path, || phantom_image(dims))?;
    let report = deblur(&image, mu, seed)?;
    write_output_dir(&args.out, |dir| {
        write_pgm(&dir.join("input.pgm"), &image)?;
        write_report_files(dir, "deblur", &report)
    })?;
    println!("deblur report written to {}", args.out.display());
    Ok(())
}

fn run_experiment_mri(args: MriArgs) -> CliResult<()> {
    let allowed = ["image", "mask", "size", "mu", "noise", "seed"];
    let cfg = match &args.config {
        Some(p) => parse_config(p, &allowed)?,
        None => HashMap::new(),
    };
    let size = pick(args.size, config_get(&cfg, "size")?, 32);
    let mu = pick(args.mu, config_get(&cfg, "mu")?, 10.0);
    let noise = pick(args.noise, config_get(&cfg, "noise")?, 0.05);
    let seed = resolve_seed(args.seed.or(config_get(&cfg, "seed")?), 7)?;
    let image_path = args.image.or(cfg.get("image").map(PathBuf::from));
    let mask_path = args.mask.or(cfg.get("mask").map(PathBuf::from));
    let dims = GridDims::new(size, size)?;
    let image = load_image_or(&image_path, || phantom_image(dims))?;
    let mask: Vec<bool> = match &mask_path {
        Some(p) => read_pgm(p)?.data.iter().map(|&v| v > 0.5).collect(),
        None => cartesian_mask(image.dims, 1),
    };
    if mask.len() != image.dims.len() {
        return Err(usage(format!(
            "mask has {} pixels but the image has {}",
            mask.len(),
            image.dims.len()
        )));
    }
    let report = mri_reconstruct(&image, &mask, mu, noise, seed)?;
    write_output_dir(&args.out, |dir| {
        write_pgm(&dir.join("input.pgm"), &image)?;
        write_report_files(dir, "mri", &report)
    })?;
    println!("mri report written to {}", args.out.display());
    Ok(())
}

fn run_experiment_register(args: RegisterArgs) -> CliResult<()> {
    let allowed = ["source", "target", "size", "mu", "steps", "outer"];
    let cfg = match &args.config {
        Some(p) => parse_config(p, &allowed)?,
        None => HashMap::new(),
    };
    let size = pick(args.size, config_get(&cfg, "size")?, 64);
    let mu = pick(args.mu, config_get(&cfg, "mu")?, 5e3);
    let steps = pick(args.steps, config_get(&cfg, "steps")?, 8);
    let outer = pick(args.outer, config_get(&cfg, "outer")?, 5);
    let source_path = args.source.or(cfg.get("source").map(PathBuf::from));
    let target_path = args.target.or(cfg.get("target").map(PathBuf::from));
    let dims = GridDims::new(size, size)?;
    let center = (size / 2) as f64;
    let sigma = size as f64 / 8.0;
    let source = load_image_or(&source_path, || blob_image(dims, center, center - 1.0, sigma))?;
    let target = load_image_or(&target_path, || blob_image(dims, center, center, sigma))?;
    let (field, report) = register(&source, &target, mu, steps, outer)?;
    write_output_dir(&args.out, |dir| {
        write_pgm(&dir.join("source.pgm"), &source)?;
        write_pgm(&dir.join("target.pgm"), &target)?;
        write_report_files(dir, "register", &report)?;
        let dets = crate::applications::jacobian_determinant(&field);
        let min = dets.iter().cloned().fold(f64::INFINITY, f64::min);
        write_text(
            &dir.join("deformation.txt"),
            &format!("min Jacobian determinant = {min:.6}\n"),
        )
    })?;
    println!("registration report written to {}", args.out.display());
    Ok(())
}

/// Run `fill` against a temporary sibling directory, then rename it to
/// `out`. Fails if `out` already exists.
fn write_output_dir(
    out: &Path,
    fill: impl FnOnce(&Path) -> Result<()>,
) -> CliResult<()> {
    if out.exists() {
        return Err(usage(format!(
            "output directory {} already exists",
            out.display()
        )));
    }
    let mut tmp = out.as_os_str().to_owned();
    tmp.push(&format!(".tmp-{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::create_dir_all(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    let result = fill(&tmp);
    match result {
        Ok(()) => {
            fs::rename(&tmp, out).map_err(|e| Error::io(out.display().to_string(), e))?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e.into())
        }
    }
}

fn write_report_files(dir: &Path, prefix: &str, report: &ExperimentReport) -> Result<()> {
    write_text(&dir.join(format!("{prefix}-report.txt")), &render_report(report))?;
    for (label, trace) in &report.traces {
        write_trace_csv(trace, &dir.join(format!("{prefix}-trace-{label}.csv")))?;
    }
    for (name, image) in &report.images {
        write_pgm(&dir.join(format!("{prefix}-{name}.pgm")), image)?;
    }
    Ok(())
}

fn render_report(report: &ExperimentReport) -> String {
    let mut s = String::new();
    s.push_str(&report.problem_descriptor);
    s.push('\n');
    for (label, t) in &report.tuned {
        s.push_str(&format!(
            "tuned {label}: theta* = {:.12e}",
            t.theta_star
        ));
        if let Some(a) = t.alpha_star {
            s.push_str(&format!(", alpha* = {a:.12e}"));
        }
        s.push_str(&format!(", converged = {}\n", t.converged));
    }
    for (label, k) in &report.summary {
        match k {
            Some(k) => s.push_str(&format!("iterations to 1e-6 ({label}): {k}\n")),
            None => s.push_str(&format!("iterations to 1e-6 ({label}): not reached\n")),
        }
    }
    for note in &report.notes {
        s.push_str(&format!("note: {note}\n"));
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Header `k,error,log10_error,objective`; 17 significant digits.
pub fn write_trace_csv(trace: &ConvergenceTrace, path: &Path) -> Result<()> {
    let mut s = String::from("k,error,log10_error,objective\n");
    for (k, (err, obj)) in trace
        .iterates_error
        .iter()
        .zip(trace.objective.iter())
        .enumerate()
    {
        s.push_str(&format!("{k},{err:.16e},{:.16e},{obj:.16e}\n", err.log10()));
    }
    write_text(path, &s)
}

/// Read a PGM (P2 ascii or P5 binary, maxval up to 255) into [0, 1] values.
pub fn read_pgm(path: &Path) -> Result<ImageGrid> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let malformed = |m: &str| Error::MalformedImage(format!("{}: {m}", path.display()));
    if bytes.len() < 2 {
        return Err(malformed("truncated header"));
    }
    let magic = &bytes[..2];
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => return Err(malformed("expected P2 or P5 magic")),
    };
    // Header tokens: width, height, maxval; '#' starts a comment.
    let mut pos = 2;
    let mut tokens = Vec::new();
    while tokens.len() < 3 && pos < bytes.len() {
        let b = bytes[pos];
        if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(
                std::str::from_utf8(&bytes[start..pos])
                    .ok()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| malformed("non-numeric header token"))?,
            );
        }
    }
    if tokens.len() < 3 {
        return Err(malformed("incomplete header"));
    }
    let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval == 0 || maxval > 255 {
        return Err(malformed("maxval must be in 1..=255"));
    }
    let dims = GridDims::new(height, width)?;
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if binary {
        pos += 1; // single whitespace byte after maxval
        let raster = &bytes[pos.min(bytes.len())..];
        if raster.len() < dims.len() {
            return Err(malformed("truncated raster"));
        }
        raster[..dims.len()].iter().map(|&b| b as f64 * scale).collect()
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| malformed("non-ascii P2 raster"))?;
        let vals: Vec<f64> = text
            .split_ascii_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map(|v| v as f64 * scale)
                    .map_err(|_| malformed("non-numeric P2 sample"))
            })
            .collect::<Result<_>>()?;
        if vals.len() < dims.len() {
            return Err(malformed("truncated raster"));
        }
        vals[..dims.len()].to_vec()
    };
    ImageGrid::new(dims, data)
}

/// Write a [0, 1] grid as ascii PGM (P2, maxval 255); out-of-range values
/// are clamped with a warning.
pub fn write_pgm(path: &Path, image: &ImageGrid) -> Result<()> {
    let mut clamped = 0usize;
    let mut s = format!("P2\n{} {}\n255\n", image.dims.width, image.dims.height);
    for r in 0..image.dims.height {
        let mut line = String::new();
        for c in 0..image.dims.width {
            let v = image.get(r, c);
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            let q = (v.clamp(0.0, 1.0) * 255.0).round() as u32;
            if c > 0 {
                line.push(' ');
            }
            line.push_str(&q.to_string());
        }
        s.push_str(&line);
        s.push('\n');
    }
    if clamped > 0 {
        eprintln!(
            "warning: {clamped} samples outside [0, 1] clamped while writing {}",
            path.display()
        );
    }
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_csv_round_trip() {
        let trace = ConvergenceTrace {
            iterates_error: vec![1.0, 0.25, 0.0625],
            objective: vec![3.0, 1.5, 1.1],
            wall_time_per_iter: 0.0,
            stop_reason: StopReason::Tol,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace_csv(&trace, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,error,log10_error,objective");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 3);
        for (k, row) in rows.iter().enumerate() {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[0].parse::<usize>().unwrap(), k);
            let err: f64 = cols[1].parse().unwrap();
            assert_eq!(err, trace.iterates_error[k]);
            let obj: f64 = cols[3].parse().unwrap();
            assert_eq!(obj, trace.objective[k]);
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let trace = ConvergenceTrace {
            iterates_error: vec![],
            objective: vec![],
            wall_time_per_iter: 0.0,
            stop_reason: StopReason::MaxIters,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_trace_csv(&trace, &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "k,error,log10_error,objective\n"
        );
    }

    #[test]
    fn pgm_write_read_round_trip() {
        let dims = GridDims::new(4, 4).unwrap();
        let ramp = ImageGrid::new(dims, (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.pgm");
        write_pgm(&path, &ramp).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.dims, dims);
        for (a, b) in back.data.iter().zip(ramp.data.iter()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn p2_and_p5_parse_to_equal_grids() {
        let dir = tempfile::tempdir().unwrap();
        let p2 = dir.path().join("a.pgm");
        let p5 = dir.path().join("b.pgm");
        fs::write(&p2, "P2\n# comment\n3 2\n255\n0 10 20\n30 40 255\n").unwrap();
        let mut raw: Vec<u8> = b"P5\n3 2\n255\n".to_vec();
        raw.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        fs::write(&p5, &raw).unwrap();
        let a = read_pgm(&p2).unwrap();
        let b = read_pgm(&p5).unwrap();
        assert_eq!(a.dims, b.dims);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn malformed_pgm_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.pgm");
        fs::write(&bad, "P7\n2 2\n255\n0 0 0 0\n").unwrap();
        assert!(matches!(read_pgm(&bad), Err(Error::MalformedImage(_))));
        fs::write(&bad, "P2\n2 2\n255\n0 0\n").unwrap();
        assert!(read_pgm(&bad).is_err());
    }

    #[test]
    fn tune_closed_form_deblur_prints_one_two() {
        // Direct check of the underlying call the subcommand prints.
        let (theta, alpha) = closed_form_deblur(1000.0, true).unwrap();
        assert_eq!((theta, alpha), (1.0, Some(2.0)));
        let code = dispatch([
            "lqadmm",
            "tune",
            "--builtin",
            "deblur",
            "--mu",
            "1000",
            "--method",
            "closed-form",
        ]);
        assert_eq!(code, 0);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(dispatch(["lqadmm", "frobnicate"]), 1);
        assert_eq!(
            dispatch(["lqadmm", "tune", "--builtin", "nope"]),
            1
        );
    }

    #[test]
    fn solve_writes_monotone_trace() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("trace.csv");
        // Mistuned theta so the trace is long enough to inspect.
        let code = dispatch([
            "lqadmm".to_string(),
            "solve".into(),
            "--builtin".into(),
            "deblur".into(),
            "--solver".into(),
            "admm".into(),
            "--theta".into(),
            "0.3".into(),
            "--out".into(),
            out.display().to_string(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(&out).unwrap();
        let errs: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(errs.len() > 10);
        // Monotone past the startup transient.
        for w in errs[5..].windows(2) {
            if w[0] > 1e-13 {
                assert!(w[1] <= w[0] * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn config_unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "instances = 1\nbogus = 3\n").unwrap();
        let out = dir.path().join("out");
        let code = dispatch([
            "lqadmm".to_string(),
            "experiment".into(),
            "random".into(),
            "--config".into(),
            cfg.display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ]);
        assert_eq!(code, 1);
        assert!(!out.exists());
    }

    #[test]
    fn random_experiment_outputs_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let run = |name: &str| {
            let out = dir.path().join(name);
            let code = dispatch([
                "lqadmm".to_string(),
                "experiment".into(),
                "random".into(),
                "--m".into(),
                "20".into(),
                "--n".into(),
                "8".into(),
                "--instances".into(),
                "2".into(),
                "--seed".into(),
                "11".into(),
                "--out".into(),
                out.display().to_string(),
            ]);
            assert_eq!(code, 0);
            out
        };
        let a = run("a");
        let b = run("b");
        let mut names: Vec<String> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.iter().any(|n| n.ends_with(".csv")));
        for name in names {
            let fa = fs::read(a.join(&name)).unwrap();
            let fb = fs::read(b.join(&name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between reruns");
        }
    }
}
