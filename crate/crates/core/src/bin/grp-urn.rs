use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grp_urn::gof::{self, DfConvention, GofError, MleCase, PStarMode};
use grp_urn::io::{self, fmt_sig, IoError, Manifest};
use grp_urn::montecarlo::{self, ExperimentConfig, MonteCarloError};
use grp_urn::schedule::{ScheduleError, VARIANT_NAMES};
use grp_urn::specfun::SpecFunError;
use grp_urn::urn::{weight_profile, UrnError};
use grp_urn::{Schedule, ScheduleSpec, UrnParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const THREADS_ENV: &str = "GRP_URN_THREADS";
const SEED_ENV: &str = "GRP_URN_SEED";

#[derive(Parser)]
#[command(name = "grp-urn", version, about = "Rescaled Polya urn simulation and clustered chi-squared inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded replicas and write per-horizon CSVs, CLT reports and a manifest.
    Simulate(SimulateArgs),
    /// Maximum-likelihood (eta, lambda) for a contingency file.
    Estimate(EstimateArgs),
    /// Per-cluster and aggregate tests at a given or fitted (eta, lambda).
    Gof(GofArgs),
    /// Weight profile f(h, n) of a schedule.
    Weights(WeightsArgs),
    /// Full pipeline on the bundled COVID-Twitter counts.
    ReplicateCovid(ReplicateArgs),
    /// One simulated path as CSV.
    Trajectory(TrajectoryArgs),
}

#[derive(Args)]
struct UrnArgs {
    /// Schedule JSON file (or inline JSON starting with '{').
    #[arg(long)]
    schedule: String,
    /// Fixed component b0, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    b0: Vec<f64>,
    /// Initial balls B0, comma separated.
    #[arg(long = "B0", value_delimiter = ',', required = true)]
    big_b0: Vec<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    urn: UrnArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    horizons: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    /// Base seed; defaults to $GRP_URN_SEED or 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Maximum replicas x largest horizon.
    #[arg(long, default_value_t = montecarlo::DEFAULT_STEP_BUDGET)]
    step_budget: u64,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// uniform | pooled | benchmark:<label> | reference:<c1,c2,..>
    #[arg(long, default_value = "pooled")]
    pstar: String,
    /// L or L-1; defaults to L-1 for pooled references, L otherwise.
    #[arg(long)]
    df: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct GofArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Numeric value or "fit".
    #[arg(long, default_value = "fit")]
    eta: String,
    /// Numeric value or "fit".
    #[arg(long, default_value = "fit")]
    lambda: String,
    /// Print the GofResult JSON instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    schedule: String,
    #[arg(long)]
    n: u64,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[command(flatten)]
    urn: UrnArgs,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, kind: "usage", message: message.into() }
    }
}

fn specfun_failure(e: &SpecFunError) -> Failure {
    Failure { code: 4, kind: "numerical", message: e.to_string() }
}

impl From<GofError> for Failure {
    fn from(e: GofError) -> Self {
        match &e {
            GofError::SpecFun(s) => specfun_failure(s),
            GofError::DegenerateClusters { .. } | GofError::ZeroStatistics => {
                Failure { code: 4, kind: "numerical", message: e.to_string() }
            }
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<UrnError> for Failure {
    fn from(e: UrnError) -> Self {
        match e {
            UrnError::Numerical { .. } => Failure { code: 4, kind: "numerical", message: e.to_string() },
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<ScheduleError> for Failure {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::Domain { .. } => Failure { code: 4, kind: "numerical", message: e.to_string() },
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<MonteCarloError> for Failure {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::Urn(u) => u.into(),
            MonteCarloError::Schedule(s) => s.into(),
            other => Failure::usage(other.to_string()),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => Failure { code: 1, kind: "io", message: e.to_string() },
            IoError::Gof(g) => g.into(),
            IoError::Urn(u) => u.into(),
            other => Failure::usage(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 1, kind: "io", message: format!("{}: {e}", path.display()) }
}

fn load_schedule(arg: &str) -> CliResult<ScheduleSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| io_failure(Path::new(arg), e))?
    };
    ScheduleSpec::from_json(&text).map_err(|e| {
        Failure::usage(format!("invalid schedule: {e}; valid variants are {}", VARIANT_NAMES.join(", ")))
    })
}

fn env_seed() -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.parse().map_err(|_| Failure::usage(format!("{SEED_ENV}={v:?} is not a u64"))),
        Err(_) => Ok(0),
    }
}

fn configure_threads() -> CliResult<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| Failure::usage(format!("{THREADS_ENV}={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(rayon::current_num_threads())
}

fn build_urn(args: &UrnArgs) -> CliResult<(UrnParams, ScheduleSpec, Schedule)> {
    let spec = load_schedule(&args.schedule)?;
    let params = UrnParams::new(args.b0.clone(), args.big_b0.clone())?;
    let schedule = Schedule::from_spec(spec.clone())?;
    Ok((params, spec, schedule))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("result types serialize")
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let threads = configure_threads()?;
    let (params, spec, _) = build_urn(&args.urn)?;
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?,
    };
    let mut config = ExperimentConfig::new(params, spec, args.horizons, args.replicas, seed);
    config.step_budget = args.step_budget;
    let result = montecarlo::run_experiment(&config)?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;

    let p0 = config.params.p0().to_vec();
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for h in &result.horizons {
        let report = if args.replicas >= 2 {
            montecarlo::clt_report_for(h, &p0, &config.schedule).transpose()?
        } else {
            None
        };
        let csv_name = format!("horizon_{}.csv", h.horizon);
        write_file(&args.out.join(&csv_name), &io::horizon_csv(h, report.as_ref()))?;
        files.push(csv_name);
        if let Some(r) = report {
            let name = format!("clt_{}.json", h.horizon);
            write_file(&args.out.join(&name), &to_json(&r))?;
            files.push(name);
            println!(
                "N={} e={} lambda_theory={} lambda_hat={} mean_remainder={}",
                r.horizon,
                r.e,
                fmt_sig(r.lambda_theory, 7),
                fmt_sig(r.lambda_hat, 7),
                fmt_sig(r.mean_remainder_norm(), 7)
            );
            reports.push(r);
        } else {
            let mp = montecarlo::mean_profile(h);
            println!("N={} mean_xi_bar={:?}", h.horizon, mp.mean);
        }
    }
    let manifest = Manifest::from_reports(&config, threads, &reports, files);
    write_file(&args.out.join("manifest.json"), &manifest.to_json()?)?;
    Ok(())
}

fn load_clusters(args: &DataArgs) -> CliResult<(Vec<gof::ClusterSample>, DfConvention)> {
    let raw = io::read_contingency(&args.data)?;
    let mode: PStarMode = args.pstar.parse()?;
    let df = match &args.df {
        Some(s) => s.parse()?,
        None => gof::default_convention(&mode),
    };
    Ok((gof::build_p_star(&raw, &mode)?, df))
}

fn estimate(args: EstimateArgs) -> CliResult<u8> {
    let (clusters, df) = load_clusters(&args.data)?;
    let mle = gof::estimate(&clusters, df)?;
    println!("{}", to_json(&mle));
    Ok(if mle.case == MleCase::BoundaryBadFit { 3 } else { 0 })
}

fn parse_or_fit(value: &str, name: &str) -> CliResult<Option<f64>> {
    if value == "fit" {
        return Ok(None);
    }
    value
        .parse()
        .map(Some)
        .map_err(|_| Failure::usage(format!("--{name} must be a number or \"fit\", got {value:?}")))
}

fn gof_cmd(args: GofArgs) -> CliResult<u8> {
    let (clusters, df) = load_clusters(&args.data)?;
    let eta = parse_or_fit(&args.eta, "eta")?;
    let lambda = parse_or_fit(&args.lambda, "lambda")?;
    let mut code = 0;
    let (eta, lambda) = match (eta, lambda) {
        (Some(e), Some(l)) => (e, l),
        (e, l) => {
            let mle = gof::estimate(&clusters, df)?;
            if mle.case == MleCase::BoundaryBadFit {
                code = 3;
            }
            match e {
                // λ re-fitted at the supplied η
                Some(e) => {
                    let (t, n) = gof::cluster_statistics(&clusters)?;
                    (e, l.unwrap_or_else(|| gof::lambda_of_eta(e, &t, &n, mle.k, df)))
                }
                None => (mle.eta_hat, l.unwrap_or(mle.lambda_hat)),
            }
        }
    };
    let result = gof::gof_test(&clusters, eta, lambda, df)?;
    if args.json {
        println!("{}", to_json(&result));
    } else {
        print!("{}", io::contingency_table(&clusters, eta)?);
        println!();
        println!("label,t,q,p_value");
        for c in &result.per_cluster {
            println!("{},{:.4},{:.4},{:.4}", c.label, c.t, c.q, c.p_value);
        }
        println!(
            "eta={} lambda={} df={} aggregate_stat={} shape={} aggregate_p={}",
            fmt_sig(eta, 7),
            fmt_sig(lambda, 7),
            df,
            fmt_sig(result.aggregate_stat, 7),
            result.df_shape,
            fmt_sig(result.aggregate_p, 7)
        );
    }
    Ok(code)
}

fn weights(args: WeightsArgs) -> CliResult<()> {
    let spec = load_schedule(&args.schedule)?;
    let schedule = Schedule::from_spec(spec)?;
    let profile = weight_profile(&schedule, args.n)?;
    print!("{}", io::weights_csv(&profile));
    match profile.h_star {
        Some(h) => eprintln!("h_star={h}"),
        None => eprintln!("h_star=none"),
    }
    Ok(())
}

/// Published values the pipeline must reproduce, with tolerances.
fn covid_checks(r: &io::CovidReport) -> Vec<(String, bool)> {
    const BOX_PIERCE: [(f64, f64); 10] = [
        (3.454, 0.063),
        (3.624, 0.163),
        (4.209, 0.240),
        (4.640, 0.326),
        (5.065, 0.408),
        (7.103, 0.311),
        (8.660, 0.278),
        (8.812, 0.358),
        (10.360, 0.322),
        (12.852, 0.232),
    ];
    let mut checks = vec![
        ("classical_chi2".to_string(), (r.classical.statistic - 5507.803).abs() <= 0.05),
        ("eta_hat".to_string(), (r.mle.eta_hat - 0.4363572).abs() <= 1e-4),
        ("lambda_hat".to_string(), (r.mle.lambda_hat - 2.728098).abs() <= 1e-3),
        ("aggregate_p".to_string(), (r.aggregate_p - 0.4579297).abs() <= 1e-3),
        ("threshold".to_string(), (r.threshold - 10.48).abs() <= 0.01),
    ];
    for (row, (stat, p)) in r.box_pierce.iter().zip(BOX_PIERCE) {
        checks.push((
            format!("portmanteau_lag{}", row.lag),
            (row.statistic - stat).abs() <= 0.1 && (row.p_value - p).abs() <= 0.01,
        ));
    }
    checks
}

fn replicate_covid(args: ReplicateArgs) -> CliResult<u8> {
    let report = io::replicate_covid()?;
    let checks = covid_checks(&report);
    if args.json {
        println!("{}", to_json(&json!({ "report": report, "checks": checks })));
    } else {
        print!("{}", io::render_covid_report(&report));
        println!();
        for (name, ok) in &checks {
            println!("check {name}: {}", if *ok { "ok" } else { "MISS" });
        }
    }
    Ok(if checks.iter().all(|(_, ok)| *ok) { 0 } else { 1 })
}

fn trajectory(args: TrajectoryArgs) -> CliResult<()> {
    let (params, _, schedule) = build_urn(&args.urn)?;
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    print!("{}", io::trajectory_csv(&params, &schedule, args.steps, &mut rng)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Simulate(a) => simulate(a).map(|_| 0),
        Command::Estimate(a) => estimate(a),
        Command::Gof(a) => gof_cmd(a),
        Command::Weights(a) => weights(a).map(|_| 0),
        Command::ReplicateCovid(a) => replicate_covid(a),
        Command::Trajectory(a) => trajectory(a).map(|_| 0),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            if f.code == 4 {
                eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
