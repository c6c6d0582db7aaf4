use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gop_core::numfmt::sig15;
use gop_core::overlap::{
    contour_of_touch, contour_to_overlap, overlap_table, overlap_table_csv, solve_lambda, LAMBDA_TOL,
};
use gop_core::scenario::{parse_scenario, Scenario};
use gop_core::trace::{write_trace, write_trace_files, SimTrace};
use gop_core::{mpc, Gaussian};
use nalgebra::{DMatrix, DVector};

/// Slack on the overlap bound before a run counts as a violation.
const VIOLATION_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "gop", version, about = "Gaussian-overlap chance-constrained drone planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario with the receding-horizon planner.
    Run(RunArgs),
    /// Minmax overlap between two Gaussians.
    Overlap(OverlapArgs),
    /// Contour-of-touch to overlap table on a 0.01 grid.
    Table {
        #[arg(long, default_value_t = 3)]
        dim: usize,
    },
    /// Validate a scenario and print it with all applied defaults.
    Check { scenario: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Trace CSV destination; a `.summary.json` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for Monte-Carlo checks (falls back to GOP_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    verbose: bool,
    /// Record wall-clock solve times in the trace.
    #[arg(long)]
    timing: bool,
    /// Monte-Carlo samples used to cross-check the worst recorded overlap.
    #[arg(long, default_value_t = 0)]
    mc_samples: usize,
}

#[derive(Args)]
struct OverlapArgs {
    /// Comma-separated mean, e.g. `0,0`.
    #[arg(long, allow_hyphen_values = true)]
    mean1: String,
    /// Comma-separated row-major covariance.
    #[arg(long, allow_hyphen_values = true)]
    cov1: String,
    #[arg(long, allow_hyphen_values = true)]
    mean2: String,
    #[arg(long, allow_hyphen_values = true)]
    cov2: String,
}

enum Failure {
    Usage(String),
    Violation(String),
}

impl From<gop_core::Error> for Failure {
    fn from(e: gop_core::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Overlap(args) => overlap(args),
        Command::Table { dim } => table(dim),
        Command::Check { scenario } => check(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("gop: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("gop: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &PathBuf) -> Result<Scenario, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn seed(arg: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = arg {
        return Ok(s);
    }
    match std::env::var("GOP_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("GOP_SEED is not an integer: `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario)?;
    let seed = seed(args.seed)?;
    let mut cfg = scenario.mpc_config();
    cfg.record_timing = args.timing;
    let trace = mpc::run_scenario(&scenario, &cfg)?;

    if args.verbose {
        for r in &trace.records {
            let cts: Vec<String> = r.contour.iter().map(|c| format!("{c:.4}")).collect();
            eprintln!(
                "t={:.2} pos=({:.3}, {:.3}, {:.3}) ct=[{}] iters={}{}",
                r.t,
                r.pos[0],
                r.pos[1],
                r.pos[2],
                cts.join(", "),
                r.scp_iters,
                if r.braked { " BRAKE" } else { "" }
            );
        }
    }

    match &args.out {
        Some(path) => {
            write_trace_files(&trace, path)?;
        }
        None => {
            write_trace(&trace, std::io::stdout().lock())?;
        }
    }

    if args.mc_samples > 0 {
        monte_carlo_check(&scenario, &trace, args.mc_samples, seed)?;
    }

    report(&scenario, &trace)
}

fn report(scenario: &Scenario, trace: &SimTrace) -> Result<(), Failure> {
    let s = &trace.summary;
    let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    eprintln!(
        "{}: completed={} steps={} time={} path={:.3} braked={}",
        s.name,
        s.completed,
        s.steps,
        fmt_opt(s.completion_time),
        s.path_length,
        s.braked_steps
    );
    for (k, (ct, up)) in s.min_ct.iter().zip(&s.max_upsilon).enumerate() {
        eprintln!(
            "  obstacle {}: min c_t={} max overlap={}",
            k + 1,
            fmt_opt(*ct),
            fmt_opt(*up)
        );
    }
    if let Some(w) = s.min_wall_clearance {
        eprintln!("  min wall clearance={w:.4}");
    }

    let upsilon_max = contour_to_overlap(scenario.c_min, scenario.dim)?;
    if let Some(worst) = trace.max_upsilon() {
        if worst > upsilon_max + VIOLATION_TOL {
            return Err(Failure::Violation(format!(
                "overlap {worst:.6} exceeds bound {upsilon_max:.6} for c_min={}",
                scenario.c_min
            )));
        }
    }
    if s.min_wall_clearance.is_some_and(|w| w < 0.0) {
        return Err(Failure::Violation("drone contacted a wall".into()));
    }
    Ok(())
}

/// Samples both Gaussians at the step with the largest overlap and compares
/// the empirical misclassification with the analytic value.
fn monte_carlo_check(scenario: &Scenario, trace: &SimTrace, n: usize, seed: u64) -> Result<(), Failure> {
    use gop_core::chance::InflatedPair;
    use gop_core::overlap::monte_carlo_misclassification;
    use rand::SeedableRng;

    let mut worst: Option<(usize, usize, f64)> = None;
    for (i, r) in trace.records.iter().enumerate() {
        for (k, u) in r.upsilon.iter().enumerate() {
            if worst.is_none_or(|(_, _, w)| *u > w) {
                worst = Some((i, k, *u));
            }
        }
    }
    let Some((i, k, _)) = worst else {
        eprintln!("monte carlo: no obstacles");
        return Ok(());
    };
    let r = &trace.records[i];
    let d = scenario.dim;
    let ob = &scenario.obstacles[k];
    let pair = InflatedPair::new(
        &scenario.drone_cov,
        scenario.drone_radius,
        &ob.cov,
        ob.radius,
        scenario.kappa,
    )?;
    let drone = Gaussian::new(DVector::from_column_slice(&r.pos[..d]), pair.drone_cov.clone())?;
    let obstacle = Gaussian::new(ob.trajectory.position(r.t), pair.obstacle_cov.clone())?;
    let sep = solve_lambda(&drone, &obstacle, LAMBDA_TOL)?;
    let rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (m1, m2) = monte_carlo_misclassification(&drone, &obstacle, &sep, n, rng);
    eprintln!(
        "monte carlo (t={:.2}, obstacle {}): analytic {} empirical {} (n={n}, seed={seed})",
        r.t,
        k + 1,
        sig15(sep.overlap),
        sig15(m1 + m2)
    );
    Ok(())
}

fn parse_list(name: &str, s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("--{name}: bad number `{p}`")))
        })
        .collect()
}

fn gaussian(name: &str, mean: &str, cov: &str) -> Result<Gaussian, Failure> {
    let m = parse_list(&format!("mean{name}"), mean)?;
    let c = parse_list(&format!("cov{name}"), cov)?;
    let d = m.len();
    if c.len() != d * d {
        return Err(Failure::Usage(format!(
            "--cov{name} needs {} entries for dimension {d}",
            d * d
        )));
    }
    Ok(Gaussian::new(DVector::from_vec(m), DMatrix::from_row_slice(d, d, &c))?)
}

fn overlap(args: OverlapArgs) -> Result<(), Failure> {
    let g1 = gaussian("1", &args.mean1, &args.cov1)?;
    let g2 = gaussian("2", &args.mean2, &args.cov2)?;
    let sep = solve_lambda(&g1, &g2, LAMBDA_TOL)?;
    println!("lambda: {}", sig15(sep.lambda));
    println!("eta1: {}", sig15(sep.eta1));
    println!("eta2: {}", sig15(sep.eta2));
    println!("upsilon: {}", sig15(sep.overlap));
    match g1.dim() {
        2 | 3 => println!("c_t: {}", sig15(contour_of_touch(sep.overlap, g1.dim())?)),
        _ => println!("c_t: undefined for dimension {}", g1.dim()),
    }
    Ok(())
}

fn table(dim: usize) -> Result<(), Failure> {
    print!("{}", overlap_table_csv(&overlap_table(dim)?));
    Ok(())
}

fn check(path: &PathBuf) -> Result<(), Failure> {
    let scenario = load(path)?;
    print!("{}", scenario.describe());
    Ok(())
}
