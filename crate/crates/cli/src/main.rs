use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ruinlab::exact_oracle;
use ruinlab::harness::{self, fmt_real, meta_path, Config, ExperimentPlan, PlanKind};
use ruinlab::lattice_walk::{self, MomentKind};
use ruinlab::Error;

#[derive(Parser)]
#[command(
    name = "ruinlab",
    version,
    about = "Exit times and running maxima of the simple random walk on Z^N"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tables of the limit laws F_N, G_N, their moments and Laplace transforms.
    Limits {
        #[command(flatten)]
        common: Common,
        /// Grid points for t, x and θ (default 0.1, 0.2, …, 3.0).
        #[arg(long = "arg", value_delimiter = ',')]
        args: Vec<f64>,
    },
    /// Monte Carlo estimates of scaled moments.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "exit")]
        kind: Quantity,
    },
    /// Exact absorbing-chain computations.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "exit")]
        kind: OracleKind,
        /// Truncation probability for survival tables.
        #[arg(long = "survival-tol")]
        survival_tol: Option<f64>,
    },
    /// Convergence sweep of scaled moments toward the limit.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "exit")]
        kind: Quantity,
    },
    /// Evaluate every identity and invariant; exit status 1 on any failure.
    Identities {
        #[command(flatten)]
        common: Common,
    },
    /// Count violations of the coupling bounds; exit status 1 if any.
    AuditCoupling {
        #[command(flatten)]
        common: Common,
        /// Use a sampler that drops the coupling slack (must report violations).
        #[arg(long)]
        negative_control: bool,
    },
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    dim: Option<usize>,
    /// Radius r (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    radius: Vec<u64>,
    /// Horizon t (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    horizon: Vec<u64>,
    /// Moment order p (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    moment: Vec<u32>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; metadata goes to `<out>.meta`. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Absolute tolerance of the H series.
    #[arg(long = "tol-series")]
    tol_series: Option<f64>,
    /// Relative tolerance of the quadrature.
    #[arg(long = "tol-quad")]
    tol_quad: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Largest absorbing chain handed to the oracle in sweeps.
    #[arg(long = "oracle-max-states")]
    oracle_max_states: Option<u128>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Quantity {
    Exit,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    /// E T̃ from the linear solve.
    Exit,
    /// E T̃^p from the survival table.
    ExitMoment,
    /// P(T̃ > t) table for each radius.
    Survival,
    /// P(M̃_t ≤ m) for m = 0..t.
    MaxCdf,
    /// E M̃_t^p.
    MaxMoment,
    /// P(τ_b = t) with b given by --radius.
    Tau,
}

enum Failure {
    Usage(String),
    Runtime(String),
    /// Identity or audit failure; the report has already been written.
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Domain { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Limits { common, .. }
        | Command::Simulate { common, .. }
        | Command::Oracle { common, .. }
        | Command::Converge { common, .. }
        | Command::Identities { common }
        | Command::AuditCoupling { common, .. } => common,
    }
}

fn run(cli: Cli) -> Outcome {
    let c = common(&cli.command);
    let config = match &c.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let threads = c.threads.or(config.get("threads")?);
    match threads {
        Some(0) => Err(Failure::Usage("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Runtime(e.to_string()))?
            .install(|| dispatch(&cli.command, &config)),
        None => dispatch(&cli.command, &config),
    }
}

/// Defaults, then the config file, then flags.
fn build_plan(kind: PlanKind, c: &Common, config: &Config) -> Result<ExperimentPlan, Failure> {
    let mut plan = ExperimentPlan::new(kind);
    config.apply(&mut plan)?;
    if let Some(d) = c.dim {
        plan.dim = d;
    }
    if !c.moment.is_empty() {
        plan.moments = c.moment.clone();
    }
    let params = if kind == PlanKind::MaxConverge {
        &c.horizon
    } else {
        &c.radius
    };
    if !params.is_empty() {
        plan.params = params.clone();
    }
    if let Some(n) = c.samples {
        plan.n_samples = n;
    }
    if let Some(s) = c.seed {
        plan.seed = s;
    }
    if let Some(t) = c.tol_series {
        plan.series.abs_tol = t;
    }
    if let Some(t) = c.tol_quad {
        plan.quad.rel_tol = t;
    }
    if let Some(m) = c.oracle_max_states {
        plan.oracle.max_states = m;
    }
    plan.validate()?;
    Ok(plan)
}

fn sweep_kind(q: Quantity) -> PlanKind {
    match q {
        Quantity::Exit => PlanKind::ExitConverge,
        Quantity::Max => PlanKind::MaxConverge,
    }
}

/// Writes the CSV to `out` (or stdout) and the metadata next to it (or to
/// stderr).
fn emit(out: Option<&Path>, csv: &[u8], meta: &str) -> Outcome {
    match out {
        Some(path) => {
            std::fs::write(path, csv)?;
            std::fs::write(meta_path(path), meta)?;
        }
        None => {
            std::io::stdout().write_all(csv)?;
            eprint!("{meta}");
        }
    }
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))
}

fn dispatch(cmd: &Command, config: &Config) -> Outcome {
    match cmd {
        Command::Limits { common, args } => limits(common, config, args),
        Command::Simulate { common, kind } => simulate(common, config, *kind),
        Command::Oracle {
            common,
            kind,
            survival_tol,
        } => oracle(common, config, *kind, *survival_tol),
        Command::Converge { common, kind } => converge(common, config, *kind),
        Command::Identities { common } => identities(common, config),
        Command::AuditCoupling {
            common,
            negative_control,
        } => audit(common, config, *negative_control),
    }
}

fn limits(c: &Common, config: &Config, args: &[f64]) -> Outcome {
    let plan = build_plan(PlanKind::LimitsTable, c, config)?;
    let grid: Vec<f64> = if args.is_empty() {
        (1..=30).map(|i| i as f64 / 10.0).collect()
    } else {
        args.to_vec()
    };
    let dim = u32::try_from(plan.dim).map_err(|_| Failure::Usage("dimension too large".into()))?;
    let rows = harness::run_limits_table(&plan.laws()?, dim, &plan.moments, &grid)?;
    let mut csv = Vec::new();
    harness::write_limits_csv(&rows, &mut csv)?;
    let mut meta = plan.metadata();
    meta.push_str(&format!(
        "kp_interpretation={}\n",
        ruinlab::limit_laws::KP_INTERPRETATION
    ));
    emit(c.out.as_deref(), &csv, &meta)
}

fn simulate(c: &Common, config: &Config, q: Quantity) -> Outcome {
    let plan = build_plan(sweep_kind(q), c, config)?;
    if plan.params.is_empty() {
        return Err(Failure::Usage("give at least one --radius or --horizon".into()));
    }
    let kind = match q {
        Quantity::Exit => MomentKind::Exit,
        Quantity::Max => MomentKind::Max,
    };
    let mut rows = Vec::new();
    for &p in &plan.moments {
        for &param in &plan.params {
            let seed = plan.seed.wrapping_add(rows.len() as u64);
            let e = lattice_walk::batch_estimate(kind, plan.dim, param, p, plan.n_samples, seed, &plan.batch)?;
            rows.push(vec![
                kind.name().to_string(),
                plan.dim.to_string(),
                param.to_string(),
                p.to_string(),
                fmt_real(e.mean),
                fmt_real(e.std_error),
                e.n_samples.to_string(),
                seed.to_string(),
            ]);
        }
    }
    let header = ["kind", "dim", "param", "p", "mean", "std_error", "samples", "seed"];
    let mut meta = plan.metadata();
    meta.push_str("row_seed_rule=seed + row index\n");
    emit(c.out.as_deref(), &csv_bytes(&header, &rows)?, &meta)
}

fn oracle(c: &Common, config: &Config, kind: OracleKind, survival_tol: Option<f64>) -> Outcome {
    let sweep = match kind {
        OracleKind::MaxCdf | OracleKind::MaxMoment => PlanKind::MaxConverge,
        _ => PlanKind::ExitConverge,
    };
    let mut plan = build_plan(sweep, c, config)?;
    if let Some(t) = survival_tol {
        plan.oracle.survival_tol = t;
        plan.validate()?;
    }
    if plan.params.is_empty() {
        return Err(Failure::Usage("give at least one --radius or --horizon".into()));
    }
    let dim = plan.dim;
    let tol = plan.oracle.survival_tol;
    let name = match kind {
        OracleKind::Exit => "expected_exit",
        OracleKind::ExitMoment => "exit_moment",
        OracleKind::Survival => "exit_survival",
        OracleKind::MaxCdf => "max_cdf",
        OracleKind::MaxMoment => "max_moment",
        OracleKind::Tau => "tau_mass",
    };
    let mut rows = Vec::new();
    let mut row = |param: u64, p: Option<u32>, index: Option<usize>, value: f64, bound: f64| {
        rows.push(vec![
            name.to_string(),
            dim.to_string(),
            param.to_string(),
            p.map(|p| p.to_string()).unwrap_or_default(),
            index.map(|i| i.to_string()).unwrap_or_default(),
            fmt_real(value),
            fmt_real(bound),
        ]);
    };
    for &param in &plan.params {
        match kind {
            OracleKind::Exit => {
                let sol = exact_oracle::solve_expected_exit(dim, param)?;
                row(param, Some(1), None, sol.at_origin(), sol.residual);
            }
            OracleKind::ExitMoment => {
                for &p in &plan.moments {
                    let m = exact_oracle::exit_moment_exact(dim, param, p, tol)?;
                    row(param, Some(p), None, m.value, m.error_bound);
                }
            }
            OracleKind::Survival => {
                let table = exact_oracle::exit_survival(dim, param, tol)?;
                for (t, &s) in table.probs.iter().enumerate() {
                    let bound = if t == table.truncated_at { table.tail_bound } else { 0.0 };
                    row(param, None, Some(t), s, bound);
                }
            }
            OracleKind::MaxCdf => {
                for (m, v) in exact_oracle::max_cdf_table(dim, param)?.into_iter().enumerate() {
                    row(param, None, Some(m), v, 0.0);
                }
            }
            OracleKind::MaxMoment => {
                for &p in &plan.moments {
                    let m = exact_oracle::max_moment_exact(dim, param, p)?;
                    row(param, Some(p), None, m.value, m.error_bound);
                }
            }
            OracleKind::Tau => {
                if dim != 1 {
                    return Err(Failure::Usage("tau is one-dimensional; use --dim 1".into()));
                }
                let d = exact_oracle::tau_distribution_1d(param, tol)?;
                for (t, &q) in d.probs.iter().enumerate().skip(1) {
                    row(param, None, Some(t), q, 0.0);
                }
                row(param, None, None, d.tail, d.tail);
            }
        }
    }
    let header = ["quantity", "dim", "param", "p", "index", "value", "error_bound"];
    emit(c.out.as_deref(), &csv_bytes(&header, &rows)?, &plan.metadata())
}

fn converge(c: &Common, config: &Config, q: Quantity) -> Outcome {
    let plan = build_plan(sweep_kind(q), c, config)?;
    let table = harness::run_converge(&plan)?;
    match &c.out {
        Some(path) => {
            table.write_files(path)?;
        }
        None => {
            for &p in &plan.moments {
                print!("{}", table.csv_string(p)?);
                eprint!("{}", table.metadata(p));
            }
        }
    }
    if table.rows.iter().any(|r| !r.is_ok()) {
        return Err(Failure::Runtime("some rows failed; see the metadata".into()));
    }
    Ok(())
}

fn identities(c: &Common, config: &Config) -> Outcome {
    let plan = build_plan(PlanKind::Identities, c, config)?;
    let report = harness::run_identities(&plan.laws()?);
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    emit(c.out.as_deref(), &csv, &plan.metadata())?;
    for r in report.failures() {
        eprintln!(
            "FAILED {} (residual {}, tolerance {})",
            r.name,
            fmt_real(r.residual),
            fmt_real(r.tolerance)
        );
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn audit(c: &Common, config: &Config, negative_control: bool) -> Outcome {
    let mut plan = build_plan(PlanKind::CouplingAudit, c, config)?;
    if c.samples.is_none() && config.raw("samples").is_none() {
        plan.n_samples = 10_000;
    }
    let radius = c
        .radius
        .first()
        .copied()
        .or(config.get_list::<u64>("radius")?.and_then(|v| v.first().copied()));
    let horizon = c
        .horizon
        .first()
        .copied()
        .or(config.get_list::<u64>("horizon")?.and_then(|v| v.first().copied()));
    let (radius, horizon) = (radius.unwrap_or(3), horizon.unwrap_or(100));
    let report = if negative_control {
        harness::audit_with(
            plan.dim,
            radius,
            horizon,
            plan.n_samples,
            plan.seed,
            harness::corrupted_coupled_sample,
        )?
    } else {
        harness::run_coupling_audit(plan.dim, radius, horizon, plan.n_samples, plan.seed)?
    };
    let rows = vec![
        vec!["exit_sum_bound".to_string(), report.exit_violations.to_string()],
        vec!["max_bound".to_string(), report.max_violations.to_string()],
    ];
    let mut meta = report.metadata();
    meta.push_str(&format!(
        "sampler={}\n",
        if negative_control { "corrupted" } else { "coupled" }
    ));
    emit(
        c.out.as_deref(),
        &csv_bytes(&["inequality", "violations"], &rows)?,
        &meta,
    )?;
    if report.total() == 0 {
        Ok(())
    } else {
        eprintln!("{} coupling violations", report.total());
        Err(Failure::Check)
    }
}
