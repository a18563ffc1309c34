//! `klctl` — drive the KL set-point control toolkit from the shell.
//!
//! Subcommands:
//! - `simulate`:  closed-loop run against a simulated plant → trajectory CSV
//!   plus tracking-metrics JSON.
//! - `stability`: algebraic + eigenvalue stability verdicts for one gain pair,
//!   or a CSV sweep over a (kp, ki) grid.
//! - `identify`:  fit plant parameters (lag `a`, static map `g`) from measured
//!   KL curves; the output JSON plugs straight into a simulate config.
//! - `train-toy`: train the toy VAE with the controller in the loop → training
//!   log CSV, weight checkpoint, and metrics JSON (MIG, final β, …).
//!
//! Exit codes: 0 success, 1 I/O failure, 2 bad configuration or usage,
//! 3 numerical failure (divergence, failed fit, analysis overflow).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use klctl_core::io::{
    parse_xy_csv, region_csv, train_log_csv, trajectory_csv, write_atomic, OPEN_LOOP_HEADER,
    SAMPLES_HEADER,
};
use klctl_core::plant::{estimate_a, fit_exp_map, presets};
use klctl_core::simloop::{run_closed_loop, tracking_metrics, CustomPlantSpec, SimError, Variant};
use klctl_core::stability::{check_stability, stability_region, StabilityError, StabilityReport};
use klctl_core::toyvae::{
    dimwise_activation_steps, make_factor_dataset, mig_score, save_checkpoint,
    train_with_controller, ToyTrainError,
};
use klctl_core::{LoopConfig64, PlantSpec64, ToyTrainConfig64};

/// Bins used when scoring MIG on the toy dataset (192 samples).
const MIG_BINS: usize = 20;
/// A latent dimension counts as active once its trailing-mean KL clears this.
const ACTIVATION_KL_THRESHOLD: f64 = 0.1;
/// Trailing-mean window for the activation detector.
const ACTIVATION_WINDOW: usize = 25;

#[derive(Parser)]
#[command(
    name = "klctl",
    version,
    about = "Set-point control of VAE KL divergence: simulation, stability analysis, \
             plant identification, and a controlled toy VAE"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a closed-loop simulation from a JSON config
    Simulate(SimulateArgs),
    /// Check closed-loop stability at a gain point, or sweep a gain grid
    Stability(StabilityArgs),
    /// Fit plant parameters from measured KL curves
    Identify(IdentifyArgs),
    /// Train the toy VAE with the controller steering beta
    TrainToy(TrainToyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Loop config JSON (schedule, gains, plant, steps, seed, ...)
    #[arg(long)]
    config: PathBuf,
    /// Trajectory CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Metrics JSON output path (default: <out stem>_metrics.json)
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Comma-separated seeds; each runs on its own thread and writes
    /// <stem>_seed<k>.<ext> outputs, overriding the config's seed
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct StabilityArgs {
    /// Proportional gain (point mode)
    #[arg(long, allow_negative_numbers = true)]
    kp: Option<f64>,
    /// Integral gain (point mode); non-positive values are reported as a
    /// condition violation, not rejected
    #[arg(long, allow_negative_numbers = true)]
    ki: Option<f64>,
    /// Plant preset supplying `a` and `g'`
    #[arg(long, value_enum, conflicts_with_all = ["a", "g_prime"])]
    preset: Option<PresetArg>,
    /// Plant lag parameter (use together with --g-prime)
    #[arg(long)]
    a: Option<f64>,
    /// Slope of the beta→KL map at the operating point (negative)
    #[arg(long, allow_negative_numbers = true)]
    g_prime: Option<f64>,
    /// Sweep a (kp, ki) grid instead of checking a single point
    #[arg(long)]
    region: bool,
    /// kp sweep range as lo:hi (region mode)
    #[arg(long)]
    kp_range: Option<String>,
    /// ki sweep range as lo:hi (region mode)
    #[arg(long)]
    ki_range: Option<String>,
    /// Grid resolution as <n_kp>x<n_ki> (region mode)
    #[arg(long, default_value = "100x100")]
    grid: String,
    /// Report JSON (point mode, default stdout) or sweep CSV (region mode,
    /// required)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Open-loop KL trajectory CSV with header `step,kl`
    #[arg(long)]
    open_loop: PathBuf,
    /// Converged (beta, KL) samples CSV with header `beta,kl`
    #[arg(long)]
    samples: PathBuf,
    /// Converged KL level of the open-loop run (default: mean of its last 10%)
    #[arg(long)]
    c_prime: Option<f64>,
    /// Output path for the fitted plant JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Training config JSON (gains, schedule, steps, seed, ...)
    #[arg(long)]
    config: PathBuf,
    /// Training log CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Weight checkpoint output path (default: <out>.ckpt)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Metrics JSON output path (default: <out stem>_metrics.json)
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Override the config's controller/schedule variant
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Comma-separated seeds; each runs on its own thread and writes
    /// <stem>_seed<k>.<ext> outputs, overriding the config's seed
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Mnist,
    Dsprites,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    /// Incremental PI controller, smoothing, hybrid schedule
    Full,
    /// Positional PI ablation (no incremental update, no windup guard)
    Positional,
    /// Step-only annealing (ramps replaced by jumps)
    StepAnneal,
    /// No KL smoothing (window forced to 1)
    NoSmooth,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Positional => Variant::NoInitPositional,
            VariantArg::StepAnneal => Variant::StepOnlyAnneal,
            VariantArg::NoSmooth => Variant::NoSmoothing,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Config(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Stability(args) => cmd_stability(args),
        Cmd::Identify(args) => cmd_identify(args),
        Cmd::TrainToy(args) => cmd_train_toy(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("output structs serialize");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

/// `out/run.csv` + seed 7 → `out/run_seed7.csv`.
fn seeded_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}_seed{seed}"),
    };
    path.with_file_name(name)
}

/// `out/run.csv` → `out/run_metrics.json`.
fn default_metrics_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_metrics.json"))
}

/// Run `job(seed)` for every seed on scoped worker threads; report every
/// failure to stderr and return the first one.
fn fan_out(
    seeds: &[u64],
    job: impl Fn(u64) -> Result<(), CliError> + Sync,
) -> Result<(), CliError> {
    let mut first_err = None;
    std::thread::scope(|scope| {
        let job = &job;
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| (seed, scope.spawn(move || job(seed))))
            .collect();
        for (seed, handle) in handles {
            let result = handle
                .join()
                .unwrap_or_else(|_| Err(CliError::Numeric(format!("worker for seed {seed} panicked"))));
            if let Err(e) = result {
                eprintln!("seed {seed} failed: {e}");
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn map_sim_err(e: SimError) -> CliError {
    match e {
        SimError::BadConfig(_) => CliError::Config(e.to_string()),
        _ => CliError::Numeric(e.to_string()),
    }
}

fn map_toy_err(e: ToyTrainError) -> CliError {
    match e {
        ToyTrainError::BadConfig(_) => CliError::Config(e.to_string()),
        _ => CliError::Numeric(e.to_string()),
    }
}

fn map_stability_err(e: StabilityError) -> CliError {
    match e {
        StabilityError::NonFiniteAnalysis => CliError::Numeric(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Serialize)]
struct SimMetricsOut {
    seed: u64,
    c_final: f64,
    config_digest: String,
    max_overshoot: f64,
    settle_step: u64,
    settled: bool,
    steady_state_err: f64,
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg: LoopConfig64 = read_json_config(&args.config)?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if args.seeds.is_empty() {
        let metrics = args
            .metrics
            .clone()
            .unwrap_or_else(|| default_metrics_path(&args.out));
        run_simulation(&cfg, &args.out, &metrics)
    } else {
        fan_out(&args.seeds, |seed| {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let out = seeded_path(&args.out, seed);
            let metrics = match &args.metrics {
                Some(m) => seeded_path(m, seed),
                None => default_metrics_path(&out),
            };
            run_simulation(&cfg, &out, &metrics)
        })
    }
}

fn run_simulation(cfg: &LoopConfig64, out: &Path, metrics_path: &Path) -> Result<(), CliError> {
    let traj = run_closed_loop(cfg).map_err(map_sim_err)?;
    let m = tracking_metrics(&traj);
    write_bytes(out, trajectory_csv(&traj).as_bytes())?;
    write_json(
        metrics_path,
        &SimMetricsOut {
            seed: traj.seed,
            c_final: traj.c_final,
            config_digest: traj.config_digest.clone(),
            max_overshoot: m.max_overshoot,
            settle_step: m.settle_step,
            settled: m.settled,
            steady_state_err: m.steady_state_err,
        },
    )?;
    eprintln!(
        "seed {}: {} rows -> {}; settled = {}, steady-state |e| = {:.3e}",
        traj.seed,
        traj.rows.len(),
        out.display(),
        m.settled,
        m.steady_state_err
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stability

#[derive(Serialize)]
struct StabilityOut {
    kp: f64,
    ki: f64,
    a: f64,
    g_prime: f64,
    #[serde(flatten)]
    report: StabilityReport<f64>,
}

fn cmd_stability(args: StabilityArgs) -> Result<(), CliError> {
    let (a, g_prime) = resolve_plant_params(&args)?;
    if args.region {
        cmd_stability_region(&args, a, g_prime)
    } else {
        cmd_stability_point(&args, a, g_prime)
    }
}

fn resolve_plant_params(args: &StabilityArgs) -> Result<(f64, f64), CliError> {
    match (args.preset, args.a, args.g_prime) {
        (Some(p), None, None) => {
            let params = match p {
                PresetArg::Mnist => presets::mnist::<f64>(),
                PresetArg::Dsprites => presets::dsprites::<f64>(),
            };
            Ok((params.a, params.g_prime_eq))
        }
        (None, Some(a), Some(g)) => Ok((a, g)),
        (None, None, None) => Err(CliError::Config(
            "plant parameters required: pass --preset, or both --a and --g-prime".into(),
        )),
        _ => Err(CliError::Config(
            "pass --preset, or both --a and --g-prime (not a mixture)".into(),
        )),
    }
}

fn cmd_stability_point(args: &StabilityArgs, a: f64, g_prime: f64) -> Result<(), CliError> {
    let kp = args
        .kp
        .ok_or_else(|| CliError::Config("--kp is required (or use --region)".into()))?;
    let ki = args
        .ki
        .ok_or_else(|| CliError::Config("--ki is required (or use --region)".into()))?;
    let report = check_stability(kp, ki, a, g_prime).map_err(map_stability_err)?;

    if report.routh_stable && report.eig_stable {
        eprintln!("stable (spectral radius {:.6})", report.spectral_radius);
    } else {
        eprintln!("unstable (spectral radius {:.6})", report.spectral_radius);
    }
    for c in &report.violated {
        eprintln!("violated condition ({}): {}", c.numeral(), c.describe());
    }
    if report.marginal {
        eprintln!("note: the point sits within 1e-6 of the unit circle; verdicts are not meaningful here");
    } else if !report.verdicts_agree {
        eprintln!("warning: algebraic and eigenvalue verdicts disagree away from the boundary");
    }

    let payload = StabilityOut {
        kp,
        ki,
        a,
        g_prime,
        report,
    };
    match &args.out {
        Some(path) => write_json(path, &payload),
        None => {
            let mut s = serde_json::to_string_pretty(&payload).expect("report serializes");
            s.push('\n');
            print!("{s}");
            Ok(())
        }
    }
}

fn cmd_stability_region(args: &StabilityArgs, a: f64, g_prime: f64) -> Result<(), CliError> {
    if args.kp.is_some() || args.ki.is_some() {
        return Err(CliError::Config(
            "--kp/--ki are point flags; region mode takes --kp-range/--ki-range".into(),
        ));
    }
    let kp_range = parse_range(args.kp_range.as_deref().ok_or_else(|| {
        CliError::Config("region mode needs --kp-range lo:hi".into())
    })?)?;
    let ki_range = parse_range(args.ki_range.as_deref().ok_or_else(|| {
        CliError::Config("region mode needs --ki-range lo:hi".into())
    })?)?;
    let (n_kp, n_ki) = parse_grid(&args.grid)?;
    let out = args
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("region mode needs --out for the sweep CSV".into()))?;

    let rows =
        stability_region(a, g_prime, kp_range, ki_range, n_kp, n_ki).map_err(map_stability_err)?;
    let stable = rows
        .iter()
        .filter(|r| r.routh_stable && r.eig_stable)
        .count();
    write_bytes(out, region_csv(&rows).as_bytes())?;
    eprintln!(
        "swept {} points ({} stable by both verdicts) -> {}",
        rows.len(),
        stable,
        out.display()
    );
    Ok(())
}

fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let err = || CliError::Config(format!("range must look like lo:hi with numbers, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(err)?;
    let lo: f64 = lo.trim().parse().map_err(|_| err())?;
    let hi: f64 = hi.trim().parse().map_err(|_| err())?;
    Ok((lo, hi))
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let err = || CliError::Config(format!("grid must look like <n_kp>x<n_ki>, got {s:?}"));
    let (n, m) = s.split_once('x').ok_or_else(err)?;
    let n: usize = n.trim().parse().map_err(|_| err())?;
    let m: usize = m.trim().parse().map_err(|_| err())?;
    Ok((n, m))
}

// ---------------------------------------------------------------------------
// identify

fn cmd_identify(args: IdentifyArgs) -> Result<(), CliError> {
    let open_loop_text = read_to_string(&args.open_loop)?;
    let open_loop = parse_xy_csv(&open_loop_text, OPEN_LOOP_HEADER)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.open_loop.display())))?;
    let samples_text = read_to_string(&args.samples)?;
    let samples = parse_xy_csv(&samples_text, SAMPLES_HEADER)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.samples.display())))?;

    let c_prime = match args.c_prime {
        Some(c) => c,
        None => {
            let tail = (open_loop.len() / 10).max(1);
            let sum: f64 = open_loop[open_loop.len() - tail..].iter().map(|&(_, y)| y).sum();
            sum / tail as f64
        }
    };

    let a = estimate_a(&open_loop, c_prime).map_err(|e| CliError::Numeric(e.to_string()))?;
    let map = fit_exp_map(&samples).map_err(|e| CliError::Numeric(e.to_string()))?;

    let spec: PlantSpec64 = klctl_core::simloop::PlantSpec::Custom(CustomPlantSpec {
        a,
        amplitude: map.amplitude,
        rate: map.rate,
        noise_std: 0.0,
        y0: 0.0,
    });
    write_json(&args.out, &spec)?;
    eprintln!(
        "identified a = {:.6e} (time constant {:.1} steps), g(x) = {:.4}*exp(-{:.4} x) -> {}",
        a,
        1.0 / a,
        map.amplitude,
        map.rate,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-toy

#[derive(Serialize)]
struct ToyMetricsOut {
    seed: u64,
    c_final: f64,
    config_digest: String,
    final_beta: f64,
    final_kl_smoothed: f64,
    recon_nll: f64,
    mig: f64,
    /// Per-latent first step whose trailing-mean KL clears the activation
    /// threshold; null for dimensions that never activate.
    activation_steps: Vec<Option<u64>>,
}

fn cmd_train_toy(args: TrainToyArgs) -> Result<(), CliError> {
    let mut cfg: ToyTrainConfig64 = read_json_config(&args.config)?;
    if let Some(v) = args.variant {
        cfg.variant = v.into();
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if args.seeds.is_empty() {
        let checkpoint = args
            .checkpoint
            .clone()
            .unwrap_or_else(|| args.out.with_extension("ckpt"));
        let metrics = args
            .metrics
            .clone()
            .unwrap_or_else(|| default_metrics_path(&args.out));
        run_toy_training(&cfg, &args.out, &checkpoint, &metrics)
    } else {
        fan_out(&args.seeds, |seed| {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let out = seeded_path(&args.out, seed);
            let checkpoint = match &args.checkpoint {
                Some(p) => seeded_path(p, seed),
                None => out.with_extension("ckpt"),
            };
            let metrics = match &args.metrics {
                Some(p) => seeded_path(p, seed),
                None => default_metrics_path(&out),
            };
            run_toy_training(&cfg, &out, &checkpoint, &metrics)
        })
    }
}

fn run_toy_training(
    cfg: &ToyTrainConfig64,
    out: &Path,
    checkpoint: &Path,
    metrics_path: &Path,
) -> Result<(), CliError> {
    let ds = make_factor_dataset::<f64>();
    let output = train_with_controller(cfg, &ds).map_err(map_toy_err)?;

    write_bytes(out, train_log_csv(&output.log).as_bytes())?;

    let &(final_step, _) = output
        .snapshots
        .last()
        .expect("training always keeps the final model");
    let mut buf = Vec::new();
    save_checkpoint(&output.model, final_step, &mut buf)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_bytes(checkpoint, &buf)?;

    let mu = output.model.encode_mu(&ds.images);
    let mig = mig_score(&mu, &ds.factors, MIG_BINS).map_err(|e| CliError::Numeric(e.to_string()))?;
    let recon_nll = output
        .model
        .reconstruction_nll(&ds.images)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let activation_steps =
        dimwise_activation_steps(&output.log, ACTIVATION_KL_THRESHOLD, ACTIVATION_WINDOW);
    let last = output
        .log
        .rows
        .last()
        .expect("validated configs train for at least one step");

    write_json(
        metrics_path,
        &ToyMetricsOut {
            seed: output.log.seed,
            c_final: output.log.c_final,
            config_digest: output.log.config_digest.clone(),
            final_beta: last.beta,
            final_kl_smoothed: last.kl_smoothed,
            recon_nll,
            mig: mig.mig,
            activation_steps,
        },
    )?;
    eprintln!(
        "seed {}: final KL {:.4} (set point {:.4}), beta {:.4}, MIG {:.4} -> {}",
        output.log.seed,
        last.kl_smoothed,
        last.setpoint,
        last.beta,
        mig.mig,
        out.display()
    );
    Ok(())
}
