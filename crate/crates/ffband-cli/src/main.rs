//! `ffband`: simultaneous confidence bands for functional data.
//!
//! Subcommands: `band` (curves CSV → band), `pvalue` (curves + hypothesized
//! curve → pointwise p-value profile), `simulate` (JSON scenario → Monte
//! Carlo table row), `tau` (curves CSV → roughness profile).
//!
//! Exit codes: 0 success; 2 input problems (malformed files, bad flags,
//! invalid mathematical arguments), with a message naming the offending row
//! or column where applicable; 3 numerical failures (threshold solver or
//! model factorization).

mod io;
mod pipeline;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ffband::harness::{run_fairness, run_fragment, run_size_power, McSummary, ScenarioConfig};
use ffband::{
    build_band, expected_euler_constant, pvalue_function, FamilyKind, MethodTag, Sided,
    ThresholdKind,
};

use crate::io::{band_svg, column_csv, read_curves, read_single_curve, write_text};
use crate::pipeline::{
    checked_knots, estimate_one, estimate_two, family_for, knot_index, threshold_for, trapezoid,
    Estimate, FRAG_STENCIL,
};

#[derive(Parser)]
#[command(
    name = "ffband",
    version,
    about = "Fast and fair simultaneous confidence bands for functional data",
    long_about = "Builds simultaneous confidence bands theta_hat(t) +/- u(t)*se(t) over [0, 1], \
                  with the threshold u calibrated through the expected Euler characteristic of \
                  the excursion set: either the classical constant Kac-Rice threshold or a fair \
                  piecewise-linear threshold whose error budget is spread uniformly over the \
                  domain."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a simultaneous confidence band from a CSV file of curves
    Band(BandArgs),
    /// Pointwise p-value profile for a hypothesized curve, dual to the bands
    Pvalue(PvalueArgs),
    /// Run a Monte Carlo scenario from a JSON configuration
    Simulate(SimulateArgs),
    /// Estimate the roughness profile of the standardized process
    Tau(TauArgs),
}

/// Band method: threshold rule (ff = fair, kr = constant Kac-Rice) combined
/// with the calibration family (z = Gaussian, t = Student-t at the residual
/// degrees of freedom).
#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    FfZ,
    FfT,
    KrZ,
    KrT,
}

impl MethodArg {
    fn threshold(self) -> ThresholdKind {
        match self {
            MethodArg::FfZ | MethodArg::FfT => ThresholdKind::Fair,
            MethodArg::KrZ | MethodArg::KrT => ThresholdKind::KacRice,
        }
    }

    fn family(self) -> FamilyKind {
        match self {
            MethodArg::FfZ | MethodArg::KrZ => FamilyKind::Gaussian,
            MethodArg::FfT | MethodArg::KrT => FamilyKind::StudentT,
        }
    }

    fn tag(self) -> MethodTag {
        MethodTag::new(self.threshold(), self.family())
    }
}

#[derive(Args)]
struct BandArgs {
    /// Curves CSV: header `t,curve_1,...,curve_n`, empty cells = missing
    curves: PathBuf,
    /// Band method
    #[arg(long, value_enum, default_value = "ff-t")]
    method: MethodArg,
    /// Simultaneous type-I error level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Anchor point of the fair threshold; must be one of the knots
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Number of equal knot cells of the fair threshold
    #[arg(long, default_value_t = 9)]
    knots: usize,
    /// One-sided band: keep the lower limit, unbounded above
    #[arg(long)]
    one_sided: bool,
    /// Second curves CSV: band for the difference of group means
    #[arg(long, value_name = "CSV")]
    two_sample: Option<PathBuf>,
    /// Write the band CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write the band as JSON with full metadata
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    /// Also write a plain SVG line rendering of the band
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct PvalueArgs {
    /// Curves CSV: header `t,curve_1,...,curve_n`, empty cells = missing
    curves: PathBuf,
    /// Hypothesized curve CSV (`t,value`) on the same grid
    #[arg(long, value_name = "CSV")]
    theta0: PathBuf,
    /// Band method whose family of bands is inverted
    #[arg(long, value_enum, default_value = "ff-t")]
    method: MethodArg,
    /// Anchor point of the fair threshold; must be one of the knots
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Number of equal knot cells of the fair threshold
    #[arg(long, default_value_t = 9)]
    knots: usize,
    /// One-sided testing: only upward deviations of the estimate count
    #[arg(long)]
    one_sided: bool,
    /// Second curves CSV: test the difference of group means
    #[arg(long, value_name = "CSV")]
    two_sample: Option<PathBuf>,
    /// Write the p-value CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON scenario configuration
    config: PathBuf,
    /// Override the configured replication count
    #[arg(long)]
    reps: Option<usize>,
    /// Override the configured RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (the FFBAND_THREADS environment variable wins)
    #[arg(long)]
    threads: Option<usize>,
    /// Write the result CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TauArgs {
    /// Curves CSV: header `t,curve_1,...,curve_n`, empty cells = missing
    curves: PathBuf,
    /// Write the roughness CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Band(args) => cmd_band(args),
        Command::Pvalue(args) => cmd_pvalue(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Tau(args) => cmd_tau(args),
    };
    if let Err(err) = result {
        eprintln!("ffband: error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

/// Exit-code contract: 2 for input/domain problems, 3 for solver/model
/// failures, 2 for anything else (I/O, malformed files).
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ffband::Error>() {
            return match e {
                ffband::Error::Solver(_) | ffband::Error::Model(_) => 3,
                ffband::Error::Domain(_) | ffband::Error::Input(_) => 2,
            };
        }
    }
    2
}

fn sided_of(one_sided: bool) -> Sided {
    if one_sided {
        Sided::One
    } else {
        Sided::Two
    }
}

/// Shared front half of `band` and `pvalue`: read the curve file(s) and run
/// the matching estimation pipeline.
fn load_estimate(curves: &PathBuf, two_sample: Option<&PathBuf>) -> Result<Estimate> {
    let sample = read_curves(curves)?;
    match two_sample {
        Some(second) => {
            let other = read_curves(second)?;
            if sample.grid != other.grid {
                bail!(
                    "{} and {} must share the same grid column",
                    curves.display(),
                    second.display()
                );
            }
            estimate_two(&sample, &other)
        }
        None => estimate_one(&sample),
    }
}

fn cmd_band(args: BandArgs) -> Result<()> {
    let est = load_estimate(&args.curves, args.two_sample.as_ref())?;
    let sided = sided_of(args.one_sided);
    let family = family_for(args.method.family(), est.dof)?;
    let threshold = threshold_for(
        args.method.threshold(),
        &family,
        &est,
        args.alpha,
        args.knots,
        args.t0,
        sided,
    )?;
    let tag = args.method.tag().with_design(est.design);
    let band = build_band(&est.theta_hat, &est.diag, &threshold, args.alpha, tag, sided)?;
    write_text(args.out.as_deref(), &band.to_csv())?;
    if let Some(path) = &args.json {
        write_text(Some(path), &band.to_json()?)?;
    }
    if let Some(path) = &args.svg {
        write_text(Some(path), &band_svg(&band))?;
    }
    Ok(())
}

fn cmd_pvalue(args: PvalueArgs) -> Result<()> {
    let est = load_estimate(&args.curves, args.two_sample.as_ref())?;
    let (grid0, theta0) = read_single_curve(&args.theta0)?;
    if grid0 != est.diag.grid {
        bail!(
            "{}: the hypothesized curve must be tabulated on the same grid as the curves",
            args.theta0.display()
        );
    }
    let sided = sided_of(args.one_sided);
    let family = family_for(args.method.family(), est.dof)?;
    let pvalues = match args.method.threshold() {
        ThresholdKind::Fair => {
            let knots = checked_knots(args.knots)?;
            let t0_idx = knot_index(&knots, args.t0)?;
            pvalue_function(
                &est.theta_hat,
                &theta0,
                &est.diag,
                &family,
                &knots,
                t0_idx,
                sided,
            )?
        }
        ThresholdKind::KacRice => {
            // Exact inversion of the constant-threshold band: the smallest
            // level whose band excludes theta0 at t is where the expected
            // Euler characteristic equals alpha at the standardized deviation.
            let tau_l1 = trapezoid(est.diag.grid.points(), &est.diag.tau);
            let se = est.diag.standard_error();
            let divisor = sided.divisor();
            let mut out = Vec::with_capacity(theta0.len());
            for j in 0..theta0.len() {
                let deviation = match sided {
                    Sided::Two => (est.theta_hat[j] - theta0[j]).abs(),
                    Sided::One => est.theta_hat[j] - theta0[j],
                };
                let stat = deviation / se[j];
                if stat <= 0.0 {
                    out.push(1.0);
                } else {
                    let p = divisor * expected_euler_constant(stat, tau_l1, &family)?;
                    out.push(p.min(1.0));
                }
            }
            out
        }
    };
    let csv = column_csv("pvalue", est.diag.grid.points(), &pvalues);
    write_text(args.out.as_deref(), &csv)
}

fn cmd_tau(args: TauArgs) -> Result<()> {
    let sample = read_curves(&args.curves)?;
    let tau = if sample.is_fully_observed() {
        ffband::estimators::tau_hat_deriv(&sample)?
    } else {
        let counts = sample.counts_per_point();
        if let Some(j) = counts.iter().position(|&c| c < 2) {
            bail!(
                "grid row {} (t = {}) is observed by {} curve(s); the fragmentary roughness \
                 estimator needs at least two observations per grid point",
                j + 2,
                sample.grid.points()[j],
                counts[j]
            );
        }
        let ce = ffband::estimators::frag_cov(&sample)?;
        ffband::estimators::tau_hat_diag(&ce.matrix, &sample.grid, FRAG_STENCIL)?
    };
    let csv = column_csv("tau", sample.grid.points(), &tau);
    write_text(args.out.as_deref(), &csv)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot open {}", args.config.display()))?;
    let mut config: ScenarioConfig = serde_json::from_str(&text)
        .with_context(|| format!("{}: invalid scenario configuration", args.config.display()))?;
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let threads = match std::env::var("FFBAND_THREADS") {
        Ok(raw) => {
            let k: usize = raw.trim().parse().ok().filter(|&k| k >= 1).with_context(|| {
                format!("FFBAND_THREADS must be a positive integer, got `{raw}`")
            })?;
            Some(k)
        }
        Err(_) => args.threads,
    };
    if threads == Some(0) {
        bail!("--threads must be a positive integer");
    }

    let run = || -> Result<(McSummary, Option<(f64, f64)>)> {
        if config.fragment.is_some() {
            Ok((run_fragment(&config)?, None))
        } else if config.t0_idx > 0 {
            // An interior anchor asks for the fairness study: the empirical
            // region rates next to the population nominal levels.
            let fairness = run_fairness(&config)?;
            Ok((
                fairness.mc,
                Some((fairness.nominal_left, fairness.nominal_right)),
            ))
        } else {
            Ok((run_size_power(&config)?, None))
        }
    };
    let (mc, nominal) = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .context("cannot build the worker thread pool")?
            .install(run),
        None => run(),
    }?;

    eprintln!(
        "ffband simulate: {} replications requested, {} succeeded, {} failed",
        mc.reps_requested, mc.successes, mc.failures
    );
    if let Some(msg) = &mc.first_failure {
        eprintln!("ffband simulate: first failure: {msg}");
    }

    let csv = summary_csv(&config, &mc, nominal)?;
    write_text(args.out.as_deref(), &csv)
}


/// One-row CSV with a fixed schema across scenario kinds; optional columns
/// are left empty. Floats print in full precision so identical runs produce
/// identical bytes.
fn summary_csv(
    config: &ScenarioConfig,
    mc: &McSummary,
    nominal: Option<(f64, f64)>,
) -> Result<String> {
    let tag = |v: serde_json::Value| -> String {
        v.as_str().map(str::to_owned).unwrap_or_default()
    };
    let mean = tag(serde_json::to_value(config.mean)?);
    let cov = tag(serde_json::to_value(config.cov)?);
    let sided = tag(serde_json::to_value(config.sided)?);
    let method = MethodTag::new(config.method.threshold, config.method.family).to_string();
    let t0 = config.t0_idx as f64 / config.cells as f64;
    let window = config
        .fragment
        .map(|f| f.window.to_string())
        .unwrap_or_default();

    let num = |x: f64| -> String {
        if x.is_finite() {
            format!("{x:.17e}")
        } else {
            String::new()
        }
    };
    let opt = |x: Option<f64>| x.map(&num).unwrap_or_default();

    let mut out = String::from(
        "mean,delta,cov,n,method,alpha,cells,t0,sided,fragment_window,\
         reps_requested,successes,failures,rejection_rate,roi_left_rate,roi_right_rate,\
         avg_width,avg_nominal_left,avg_nominal_right,nominal_left,nominal_right\n",
    );
    out.push_str(&format!(
        "{mean},{delta},{cov},{n},{method},{alpha},{cells},{t0},{sided},{window},\
         {reps},{succ},{fail},{rate},{roi_l},{roi_r},{width},{anl},{anr},{nl},{nr}\n",
        delta = config.delta,
        n = config.n,
        alpha = config.alpha,
        cells = config.cells,
        reps = mc.reps_requested,
        succ = mc.successes,
        fail = mc.failures,
        rate = num(mc.rejection_rate),
        roi_l = num(mc.roi_left_rate),
        roi_r = num(mc.roi_right_rate),
        width = num(mc.avg_width),
        anl = opt(mc.avg_nominal_left),
        anr = opt(mc.avg_nominal_right),
        nl = opt(nominal.map(|p| p.0)),
        nr = opt(nominal.map(|p| p.1)),
    ));
    Ok(out)
}
