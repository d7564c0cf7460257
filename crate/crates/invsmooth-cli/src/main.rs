//! Command-line harness: scenario configuration, experiment execution and
//! CSV emission for the planar length-preservation experiment and the
//! inertial alignment study.

mod config;

use clap::{Args, Parser, Subcommand};
use config::ConfigFile;
use invsmooth::models::{InsConfig, Robot2dConfig};
use invsmooth::selftest::{run_selftest, Mutation};
use invsmooth::sim::{make_ins_truth, run_monte_carlo, run_robot2d_batch, EstimatorConfig};
use invsmooth::smoother::RetractionKind;
use nalgebra::DMatrix;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "invsmooth",
    version,
    about = "Invariant smoothing experiments on matrix Lie groups"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Batch smoothing of the planar robot with a heading-only prior;
    /// writes length_per_iter.csv and per-iteration trajectories.
    Robot2d(Robot2dArgs),
    /// Sliding-window inertial alignment Monte Carlo; writes yaw_error.csv
    /// and summary.csv.
    InsAlign(InsAlignArgs),
    /// Runs the numeric invariant suite and prints one verdict per
    /// property.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct Robot2dArgs {
    /// key=value experiment manifest; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated strategies (invariant, forster, gtsam).
    #[arg(long, value_delimiter = ',')]
    retraction: Option<Vec<String>>,
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    heading_error_deg: Option<f64>,
    #[arg(long)]
    heading_sigma_deg: Option<f64>,
    /// GPS position noise standard deviation, m.
    #[arg(long)]
    gps_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InsAlignArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated strategies (invariant, forster, gtsam).
    #[arg(long, value_delimiter = ',')]
    retraction: Option<Vec<String>>,
    /// Sliding window size in states.
    #[arg(long)]
    window: Option<usize>,
    /// Monte Carlo run count.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    imu_rate: Option<f64>,
    #[arg(long)]
    gps_rate: Option<f64>,
    #[arg(long)]
    heading_error_deg: Option<f64>,
    /// Gyro noise, deg/s.
    #[arg(long)]
    sigma_g_dps: Option<f64>,
    /// Accelerometer noise, m/s^2.
    #[arg(long)]
    sigma_a: Option<f64>,
    /// GPS noise, m.
    #[arg(long)]
    sigma_n: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Multiplies every numeric threshold (below 1 tightens the suite).
    #[arg(long)]
    tol_scale: Option<f64>,
    /// Fault-injection canary: negate the adjoint inside the propagation
    /// matrix and expect the suite to notice.
    #[arg(long, hide = true)]
    inject_adjoint_sign_error: bool,
}

enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Robot2d(args) => cmd_robot2d(args),
        Command::InsAlign(args) => cmd_ins_align(args),
        Command::Selftest(args) => cmd_selftest(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

/// Round-trippable float formatting: 17 significant digits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile, CliError> {
    match path {
        Some(p) => ConfigFile::load(p).map_err(CliError::Config),
        None => Ok(ConfigFile::empty()),
    }
}

fn parse_retractions(
    flag: &Option<Vec<String>>,
    cfg: &ConfigFile,
) -> Result<Vec<RetractionKind>, CliError> {
    let names: Vec<String> = match flag {
        Some(list) => list.clone(),
        None => match cfg.get("retraction") {
            Some(raw) => raw.split(',').map(|s| s.trim().to_string()).collect(),
            None => RetractionKind::all().iter().map(|k| k.name().into()).collect(),
        },
    };
    names
        .iter()
        .map(|n| n.parse::<RetractionKind>().map_err(CliError::Config))
        .collect()
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn cmd_robot2d(args: Robot2dArgs) -> Result<ExitCode, CliError> {
    let cfg_file = load_config(&args.config)?;
    let defaults = Robot2dConfig::default();
    let speed = cfg_file
        .resolve(&args.speed, "speed", defaults.speed)
        .map_err(CliError::Config)?;
    let dt = cfg_file
        .resolve(&args.dt, "dt", defaults.dt)
        .map_err(CliError::Config)?;
    let steps = cfg_file
        .resolve(&args.steps, "steps", defaults.n_steps)
        .map_err(CliError::Config)?;
    let heading_error_deg = cfg_file
        .resolve(
            &args.heading_error_deg,
            "heading_error_deg",
            defaults.heading_error.to_degrees(),
        )
        .map_err(CliError::Config)?;
    let heading_sigma_deg = cfg_file
        .resolve(
            &args.heading_sigma_deg,
            "heading_sigma_deg",
            defaults.heading_sigma.to_degrees(),
        )
        .map_err(CliError::Config)?;
    let gps_sigma = cfg_file
        .resolve(&args.gps_sigma, "gps_sigma", 1.0)
        .map_err(CliError::Config)?;
    let seed = cfg_file
        .resolve(&args.seed, "seed", 0u64)
        .map_err(CliError::Config)?;
    let out = cfg_file
        .resolve(&args.out, "out", PathBuf::from("out"))
        .map_err(CliError::Config)?;
    let kinds = parse_retractions(&args.retraction, &cfg_file)?;

    if dt <= 0.0 || gps_sigma <= 0.0 {
        return Err(CliError::Config(
            "dt and gps_sigma must be positive".into(),
        ));
    }
    let cfg = Robot2dConfig {
        speed,
        dt,
        n_steps: steps,
        gps_cov: DMatrix::identity(2, 2) * gps_sigma * gps_sigma,
        heading_error: heading_error_deg.to_radians(),
        heading_sigma: heading_sigma_deg.to_radians(),
    };

    let mut length_csv = String::from(
        "retraction,iteration,length_m,max_dyn_residual,subspace_residual\n",
    );
    if steps == 0 {
        write_file(&out.join("length_per_iter.csv"), &length_csv)?;
        println!("wrote {} (no steps requested)", out.join("length_per_iter.csv").display());
        return Ok(ExitCode::SUCCESS);
    }

    for kind in &kinds {
        let (est, _truth) = run_robot2d_batch(&cfg, *kind, seed)
            .map_err(|e| CliError::Numerical(format!("{kind}: {e}")))?;
        for rec in &est.iteration_log {
            let _ = writeln!(
                length_csv,
                "{},{},{},{},{}",
                kind,
                rec.iteration,
                fmt_f64(rec.trajectory_length),
                fmt_f64(rec.max_dynamics_residual),
                fmt_f64(rec.subspace_residual)
            );
        }
        let trace = est
            .state_trace
            .as_ref()
            .expect("batch run records its trace");
        for (k, states) in trace.iter().enumerate() {
            let mut csv = String::from("x,y\n");
            for s in states {
                let p = s.position().expect("planar states have positions");
                let _ = writeln!(csv, "{},{}", fmt_f64(p[0]), fmt_f64(p[1]));
            }
            write_file(&out.join(kind.name()).join(format!("trajectory_iter{k}.csv")), &csv)?;
        }
        let final_len = est
            .iteration_log
            .last()
            .map(|r| r.trajectory_length)
            .unwrap_or(f64::NAN);
        println!(
            "{kind}: {} iterations, final length {:.6} m",
            est.iteration_log.len() - 1,
            final_len
        );
    }
    write_file(&out.join("length_per_iter.csv"), &length_csv)?;
    println!("wrote {}", out.join("length_per_iter.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_ins_align(args: InsAlignArgs) -> Result<ExitCode, CliError> {
    let cfg_file = load_config(&args.config)?;
    let defaults = InsConfig::default();
    let window = cfg_file
        .resolve(&args.window, "window", defaults.window_size)
        .map_err(CliError::Config)?;
    let runs = cfg_file
        .resolve(&args.runs, "runs", 10usize)
        .map_err(CliError::Config)?;
    let seed = cfg_file
        .resolve(&args.seed, "seed", 0u64)
        .map_err(CliError::Config)?;
    let imu_rate = cfg_file
        .resolve(&args.imu_rate, "imu_rate", defaults.imu_rate)
        .map_err(CliError::Config)?;
    let gps_rate = cfg_file
        .resolve(&args.gps_rate, "gps_rate", defaults.gps_rate)
        .map_err(CliError::Config)?;
    let heading_error_deg = cfg_file
        .resolve(
            &args.heading_error_deg,
            "heading_error_deg",
            defaults.heading_error.to_degrees(),
        )
        .map_err(CliError::Config)?;
    let sigma_g_dps = cfg_file
        .resolve(&args.sigma_g_dps, "sigma_g_dps", defaults.sigma_g.to_degrees())
        .map_err(CliError::Config)?;
    let sigma_a = cfg_file
        .resolve(&args.sigma_a, "sigma_a", defaults.sigma_a)
        .map_err(CliError::Config)?;
    let sigma_n = cfg_file
        .resolve(&args.sigma_n, "sigma_n", defaults.sigma_n)
        .map_err(CliError::Config)?;
    let sigma_v0 = cfg_file
        .resolve(&None::<f64>, "sigma_v0", defaults.sigma_v0)
        .map_err(CliError::Config)?;
    let sigma_r0_deg = cfg_file
        .resolve(&None::<f64>, "sigma_r0_deg", defaults.sigma_r0.to_degrees())
        .map_err(CliError::Config)?;
    let still_duration = cfg_file
        .resolve(&None::<f64>, "still_duration", defaults.still_duration)
        .map_err(CliError::Config)?;
    let motion_duration = cfg_file
        .resolve(&None::<f64>, "motion_duration", defaults.motion_duration)
        .map_err(CliError::Config)?;
    let cruise_speed = cfg_file
        .resolve(&None::<f64>, "cruise_speed", defaults.cruise_speed)
        .map_err(CliError::Config)?;
    let out = cfg_file
        .resolve(&args.out, "out", PathBuf::from("out"))
        .map_err(CliError::Config)?;
    let kinds = parse_retractions(&args.retraction, &cfg_file)?;

    if runs == 0 || window < 2 {
        return Err(CliError::Config(
            "need runs >= 1 and window >= 2".into(),
        ));
    }
    let cfg = InsConfig {
        imu_rate,
        gps_rate,
        sigma_g: sigma_g_dps.to_radians(),
        sigma_a,
        sigma_n,
        sigma_v0,
        sigma_r0: sigma_r0_deg.to_radians(),
        window_size: window,
        heading_error: heading_error_deg.to_radians(),
        still_duration,
        motion_duration,
        cruise_speed,
        ..InsConfig::default()
    };
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let truth = make_ins_truth(&cfg);
    let mut yaw_csv = String::from("t,method,yaw_err_deg,sigma3_deg\n");
    let mut summary_csv = String::from("method,final_rmse_deg,pct_within_3sigma\n");
    for kind in &kinds {
        let est = EstimatorConfig {
            retraction: *kind,
            window,
            iters_per_update: 1,
        };
        let metrics = run_monte_carlo(&truth, &cfg, &est, runs, seed)
            .map_err(|e| CliError::Numerical(format!("{kind}: {e}")))?;
        for (e, t) in metrics.times.iter().enumerate() {
            // RMS aggregation across runs for both the error and the
            // reported envelope.
            let sigma_rms = (metrics
                .sigma3_deg
                .iter()
                .map(|r| r[e] * r[e])
                .sum::<f64>()
                / metrics.n_runs as f64)
                .sqrt();
            let _ = writeln!(
                yaw_csv,
                "{},{},{},{}",
                fmt_f64(*t),
                kind,
                fmt_f64(metrics.rmse_deg[e]),
                fmt_f64(sigma_rms)
            );
        }
        let pct = 100.0 * metrics.runs_within_3sigma_at_end as f64 / metrics.n_runs as f64;
        let _ = writeln!(
            summary_csv,
            "{},{},{}",
            kind,
            fmt_f64(metrics.final_rmse_deg),
            fmt_f64(pct)
        );
        println!(
            "{kind}: final yaw RMSE {:.4} deg, {}/{} runs inside 3-sigma",
            metrics.final_rmse_deg, metrics.runs_within_3sigma_at_end, metrics.n_runs
        );
    }
    write_file(&out.join("yaw_error.csv"), &yaw_csv)?;
    write_file(&out.join("summary.csv"), &summary_csv)?;
    println!("wrote {}", out.join("yaw_error.csv").display());
    println!("wrote {}", out.join("summary.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(args: SelftestArgs) -> Result<ExitCode, CliError> {
    let tol_scale = args.tol_scale.unwrap_or(1.0);
    if tol_scale <= 0.0 {
        return Err(CliError::Config("tol-scale must be positive".into()));
    }
    let mutation = if args.inject_adjoint_sign_error {
        Mutation::AdjointSignFlip
    } else {
        Mutation::None
    };
    let results = run_selftest(tol_scale, mutation);
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} ({})", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!(
            "{failed}/{} properties failed",
            results.len()
        )));
    }
    println!("all {} properties passed", results.len());
    Ok(ExitCode::SUCCESS)
}
