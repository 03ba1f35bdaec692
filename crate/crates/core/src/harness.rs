//! Reproducible experiments over the three engines: convergence sweeps of
//! the scaled moments toward their Brownian limits, an identity report, a
//! coupling audit and tables of the limit laws.
//!
//! Sweeps are deterministic given the plan: the engine for each row is picked
//! by a fixed rule (exact oracle when the absorbing chain is small enough,
//! Monte Carlo otherwise), Monte Carlo rows use the seed `plan.seed + row`,
//! and the CSV output does not depend on the rayon pool size.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use ini::Ini;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact_oracle::{self, AbsorbingChainSpec, MAX_STATES};
use crate::lattice_walk::{self, BatchConfig, CoupledSample, MomentKind};
use crate::limit_laws::{self, LimitLaws};
use crate::quadrature::Integral;
use crate::{LimitLawsF64, QuadratureConfigF64, SeriesConfigF64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    ExitConverge,
    MaxConverge,
    Identities,
    CouplingAudit,
    LimitsTable,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::ExitConverge => "exit_converge",
            PlanKind::MaxConverge => "max_converge",
            PlanKind::Identities => "identities",
            PlanKind::CouplingAudit => "coupling_audit",
            PlanKind::LimitsTable => "limits_table",
        }
    }

    fn is_statistical(self) -> bool {
        matches!(
            self,
            PlanKind::ExitConverge | PlanKind::MaxConverge | PlanKind::CouplingAudit
        )
    }
}

/// When the exact oracle is used instead of simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleLimits {
    /// Largest absorbing chain the sweeps hand to the oracle.
    pub max_states: u128,
    /// Budget of stencil updates for survival iterations.
    pub max_work: u128,
    /// Survival tables stop below this probability.
    pub survival_tol: f64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_states: MAX_STATES,
            max_work: 200_000_000,
            survival_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub kind: PlanKind,
    pub dim: usize,
    pub moments: Vec<u32>,
    /// Radii or horizons, strictly increasing.
    pub params: Vec<u64>,
    pub n_samples: u64,
    pub seed: u64,
    pub series: SeriesConfigF64,
    pub quad: QuadratureConfigF64,
    pub batch: BatchConfig,
    pub oracle: OracleLimits,
}

impl ExperimentPlan {
    pub fn new(kind: PlanKind) -> Self {
        Self {
            kind,
            dim: 1,
            moments: vec![1],
            params: Vec::new(),
            n_samples: 100_000,
            seed: 0,
            series: SeriesConfigF64::default(),
            quad: QuadratureConfigF64::default(),
            batch: BatchConfig::default(),
            oracle: OracleLimits::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.dim == 0 {
            return bad("dimension must be at least 1");
        }
        if matches!(self.kind, PlanKind::ExitConverge | PlanKind::MaxConverge) {
            if self.params.is_empty() {
                return bad("parameter list is empty");
            }
            if self.moments.is_empty() || self.moments.contains(&0) {
                return bad("moment orders must be positive");
            }
        }
        if self.params.windows(2).any(|w| w[0] >= w[1]) {
            return bad("parameter list must be strictly increasing");
        }
        if self.params.contains(&0) {
            return bad("radii and horizons must be at least 1");
        }
        if self.kind.is_statistical() && self.n_samples < 100 {
            return bad("statistical plans need at least 100 samples");
        }
        if self.batch.block_size == 0 {
            return bad("block_size must be positive");
        }
        if !(self.oracle.survival_tol > 0.0 && self.oracle.survival_tol < 1.0) {
            return bad("survival tolerance must lie in (0, 1)");
        }
        self.series.validate()?;
        self.quad.validate()
    }

    pub fn laws(&self) -> Result<LimitLawsF64> {
        LimitLaws::new(self.series, self.quad)
    }

    /// Key=value provenance lines shared by every output of this plan.
    pub fn metadata(&self) -> String {
        let mut s = String::new();
        let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "tool=ruinlab {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "kind={}", self.kind.name());
        let _ = writeln!(s, "dim={}", self.dim);
        let moments: Vec<u64> = self.moments.iter().map(|&p| p as u64).collect();
        let _ = writeln!(s, "moments={}", list(&moments));
        let _ = writeln!(s, "params={}", list(&self.params));
        let _ = writeln!(s, "samples={}", self.n_samples);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "series.abs_tol={:e}", self.series.abs_tol);
        let _ = writeln!(s, "series.max_terms={}", self.series.max_terms);
        let _ = writeln!(s, "series.crossover_y={}", self.series.crossover_y);
        let _ = writeln!(s, "quadrature.rel_tol={:e}", self.quad.rel_tol);
        let _ = writeln!(s, "quadrature.panel_order={}", self.quad.panel_order);
        let _ = writeln!(s, "quadrature.tail_cutoff_tol={:e}", self.quad.tail_cutoff_tol);
        let _ = writeln!(s, "quadrature.max_depth={}", self.quad.max_depth);
        let _ = writeln!(s, "oracle.max_states={}", self.oracle.max_states);
        let _ = writeln!(s, "oracle.max_work={}", self.oracle.max_work);
        let _ = writeln!(s, "oracle.survival_tol={:e}", self.oracle.survival_tol);
        let _ = writeln!(s, "sampling.block_size={}", self.batch.block_size);
        let _ = writeln!(s, "sampling.step_cap={}", self.batch.step_cap);
        let _ = writeln!(s, "sampling.rng=ChaCha8, stream = block index");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Oracle,
    MonteCarlo,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Oracle => "oracle",
            Engine::MonteCarlo => "monte_carlo",
        }
    }
}

/// One pre-limit point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub param: u64,
    pub p: u32,
    pub scaled_moment: f64,
    /// Zero for oracle rows.
    pub std_error: f64,
    pub exact_value: Option<f64>,
    pub limit_value: f64,
    pub abs_gap: f64,
    pub engine: Engine,
    pub seed: u64,
    /// `None` when the row was computed; otherwise the engine error.
    pub failure: Option<String>,
}

impl ConvergenceRow {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub plan: ExperimentPlan,
    /// Limit moment and its error estimate, per moment order.
    pub limits: Vec<(u32, Integral<f64>)>,
    pub rows: Vec<ConvergenceRow>,
}

pub const CONVERGE_HEADER: [&str; 8] = [
    "param",
    "scaled_moment",
    "std_error",
    "exact_value",
    "limit_value",
    "abs_gap",
    "engine",
    "seed",
];

impl ConvergenceTable {
    pub fn rows_for(&self, p: u32) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows.iter().filter(move |r| r.p == p)
    }

    pub fn write_csv<W: Write>(&self, p: u32, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CONVERGE_HEADER)?;
        for r in self.rows_for(p) {
            w.write_record([
                r.param.to_string(),
                fmt_real(r.scaled_moment),
                fmt_real(r.std_error),
                r.exact_value.map(fmt_real).unwrap_or_default(),
                fmt_real(r.limit_value),
                fmt_real(r.abs_gap),
                r.engine.name().to_string(),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self, p: u32) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(p, &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }

    pub fn metadata(&self, p: u32) -> String {
        let mut s = self.plan.metadata();
        let _ = writeln!(s, "moment={p}");
        if let Some((_, lim)) = self.limits.iter().find(|(q, _)| *q == p) {
            let _ = writeln!(s, "limit_value={}", fmt_real(lim.value));
            let _ = writeln!(s, "limit_error_estimate={:e}", lim.error_estimate);
        }
        let _ = writeln!(
            s,
            "engine_rule=oracle when the absorbing chain has at most oracle.max_states states and its survival work fits oracle.max_work"
        );
        let _ = writeln!(s, "row_seed_rule=seed + row index");
        for r in self.rows_for(p) {
            let status = r.failure.as_deref().unwrap_or("ok");
            let _ = writeln!(s, "row.{}.status={}", r.param, status);
        }
        s
    }

    /// Writes one CSV per moment order plus a `.meta` sidecar next to each.
    /// A single order goes to `path` itself; several get a `_p{p}` suffix.
    pub fn write_files(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for &p in &self.plan.moments {
            let target = if self.plan.moments.len() == 1 {
                path.to_path_buf()
            } else {
                suffixed(path, p)
            };
            let file = std::fs::File::create(&target)?;
            self.write_csv(p, std::io::BufWriter::new(file))?;
            std::fs::write(meta_path(&target), self.metadata(p))?;
            written.push(target);
        }
        Ok(written)
    }
}

/// `out.csv` → `out.csv.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn suffixed(path: &Path, p: u32) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_p{p}.{}", ext.to_string_lossy()),
        None => format!("{stem}_p{p}"),
    };
    path.with_file_name(name)
}

/// Shortest round-trip decimal; scientific notation for very small or large
/// magnitudes.
pub fn fmt_real(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && x.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Stencil updates needed to push exit survival below `tol`: the top
/// eigenvalue of `Q` is `cos(π/(2r+2))`.
fn survival_work(dim: usize, radius: u64, tol: f64) -> u128 {
    let states = AbsorbingChainSpec { dim, radius }.state_count();
    let lambda = (std::f64::consts::PI / (2 * radius + 2) as f64).cos();
    let steps = (tol.ln() / lambda.ln()).ceil().max(1.0) + 16.0;
    states.saturating_mul(steps as u128)
}

/// Scaled `E T̃_{N,r}^p / r^{2p}` or `E M̃_{N,t}^p / t^{p/2}` across the plan's
/// parameters, paired with the limit moment.
pub fn run_converge(plan: &ExperimentPlan) -> Result<ConvergenceTable> {
    plan.validate()?;
    let kind = match plan.kind {
        PlanKind::ExitConverge => MomentKind::Exit,
        PlanKind::MaxConverge => MomentKind::Max,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{} is not a convergence plan",
                other.name()
            )));
        }
    };
    let laws = plan.laws()?;
    let dim32 = u32::try_from(plan.dim).map_err(|_| Error::InvalidArgument("dimension too large".into()))?;
    let mut limits = Vec::new();
    let mut rows = Vec::new();
    for &p in &plan.moments {
        let limit = match kind {
            MomentKind::Exit => laws.exit_moment_integral(dim32, p)?,
            MomentKind::Max => laws.max_moment_integral(dim32, p)?,
        };
        limits.push((p, limit));
        for &param in &plan.params {
            let seed = plan.seed.wrapping_add(rows.len() as u64);
            rows.push(converge_row(plan, kind, param, p, limit.value, seed));
        }
    }
    Ok(ConvergenceTable {
        plan: plan.clone(),
        limits,
        rows,
    })
}

pub fn run_exit_converge(plan: &ExperimentPlan) -> Result<ConvergenceTable> {
    if plan.kind != PlanKind::ExitConverge {
        return Err(Error::InvalidArgument("plan kind must be exit_converge".into()));
    }
    run_converge(plan)
}

pub fn run_max_converge(plan: &ExperimentPlan) -> Result<ConvergenceTable> {
    if plan.kind != PlanKind::MaxConverge {
        return Err(Error::InvalidArgument("plan kind must be max_converge".into()));
    }
    run_converge(plan)
}

/// Which engine a sweep row uses.
pub fn select_engine(plan: &ExperimentPlan, kind: MomentKind, param: u64, p: u32) -> Engine {
    let dim = plan.dim;
    let feasible = match kind {
        MomentKind::Exit => {
            let states = AbsorbingChainSpec { dim, radius: param }.state_count();
            states <= plan.oracle.max_states
                && states <= MAX_STATES
                && (p == 1 || survival_work(dim, param, plan.oracle.survival_tol) <= plan.oracle.max_work)
        }
        MomentKind::Max => {
            let cutoff = exact_oracle::max_moment_radius_cutoff(dim, param, p);
            let states = AbsorbingChainSpec { dim, radius: cutoff }.state_count();
            states <= plan.oracle.max_states
                && states <= MAX_STATES
                && exact_oracle::max_moment_work(dim, param, p) <= plan.oracle.max_work
        }
    };
    if feasible {
        Engine::Oracle
    } else {
        Engine::MonteCarlo
    }
}

fn converge_row(plan: &ExperimentPlan, kind: MomentKind, param: u64, p: u32, limit: f64, seed: u64) -> ConvergenceRow {
    let engine = select_engine(plan, kind, param, p);
    let dim = plan.dim;
    let computed: Result<(f64, f64)> = match engine {
        Engine::Oracle => {
            let raw = match kind {
                MomentKind::Exit if p == 1 => exact_oracle::expected_exit_exact(dim, param),
                MomentKind::Exit => {
                    exact_oracle::exit_moment_exact(dim, param, p, plan.oracle.survival_tol).map(|c| c.value)
                }
                MomentKind::Max => exact_oracle::max_moment_exact(dim, param, p).map(|c| c.value),
            };
            let norm = match kind {
                MomentKind::Exit => (param as f64) * (param as f64),
                MomentKind::Max => (param as f64).sqrt(),
            };
            raw.map(|v| (v / norm.powi(p as i32), 0.0))
        }
        Engine::MonteCarlo => lattice_walk::batch_estimate(kind, dim, param, p, plan.n_samples, seed, &plan.batch)
            .map(|e| (e.mean, e.std_error)),
    };
    let (scaled_moment, std_error, failure) = match computed {
        Ok((m, se)) => (m, se, None),
        Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
    };
    ConvergenceRow {
        param,
        p,
        scaled_moment,
        std_error,
        exact_value: (engine == Engine::Oracle).then_some(scaled_moment),
        limit_value: limit,
        abs_gap: (scaled_moment - limit).abs(),
        engine,
        seed,
        failure,
    }
}

/// One line of the identity report.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRow {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityRow {
    fn within(name: &'static str, residual: f64, tolerance: f64) -> Self {
        Self {
            name,
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }

    /// `residual` is the largest step-to-step increase of a sequence that
    /// must strictly decrease.
    fn strictly_decreasing(name: &'static str, seq: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = seq.into_iter().collect();
        let worst = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        Self {
            name,
            residual: worst,
            tolerance: 0.0,
            passed: worst < 0.0,
        }
    }

    fn failed(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            residual: f64::NAN,
            tolerance,
            passed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
}

impl IdentityReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &IdentityRow> {
        self.rows.iter().filter(|r| !r.passed)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["identity", "residual", "tolerance", "status"])?;
        for r in &self.rows {
            w.write_record([
                r.name.to_string(),
                fmt_real(r.residual),
                fmt_real(r.tolerance),
                (if r.passed { "pass" } else { "fail" }).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

/// Largest violation of "nondecreasing, inside `[0, 1]`, 0 at `lo`, 1 at `hi`".
fn cdf_violation(mut f: impl FnMut(f64) -> f64, grid: &[f64]) -> f64 {
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let drops = max_of(vals.windows(2).map(|w| w[0] - w[1]));
    let range = max_of(vals.iter().map(|&v| (-v).max(v - 1.0)));
    let ends = vals[0].abs().max((1.0 - vals[vals.len() - 1]).abs());
    drops.max(range).max(ends)
}

/// Every invariant of the limit laws and the exact oracle, each with its
/// measured residual.
pub fn run_identities(laws: &LimitLawsF64) -> IdentityReport {
    let mut rows = Vec::new();
    let series = &laws.series;
    let check = |name: &'static str, tol: f64, r: Result<f64>| match r {
        Ok(v) => IdentityRow::within(name, v, tol),
        Err(_) => IdentityRow::failed(name, tol),
    };

    // H: the theta and reflection series describe one function.
    let ys = log_grid(0.05, 5.0, 50);
    let agreement = ys
        .iter()
        .map(|&y| limit_laws::h_theta(y, series).map(|t| (t - limit_laws::h_reflection(y, series)).abs()));
    rows.push(check(
        "h_series_agreement",
        1e-10,
        agreement.collect::<Result<Vec<_>>>().map(max_of),
    ));

    let tgrid = log_grid(1e-3, 1e3, 200);
    let xgrid = log_grid(1e-2, 20.0, 200);
    let exit_axioms = max_of((1..=5).map(|n| cdf_violation(|t| laws.exit_cdf(n, t), &tgrid)));
    rows.push(IdentityRow::within("exit_cdf_axioms", exit_axioms, 1e-12));
    let max_axioms = max_of((1..=5).map(|n| cdf_violation(|x| laws.max_cdf(n, x), &xgrid)));
    rows.push(IdentityRow::within("max_cdf_axioms", max_axioms, 1e-12));

    // Φ(t) = 1 - Γ(1/√t).
    let prop2 = max_of(
        log_grid(0.01, 20.0, 60)
            .into_iter()
            .map(|t| (laws.erdos_kac_cdf(t) - (1.0 - laws.max_modulus_cdf(t.sqrt().recip()))).abs()),
    );
    rows.push(IdentityRow::within("erdos_kac_vs_max_modulus", prop2, 1e-12));

    let power_tail = max_of(
        (1..=4u32)
            .flat_map(|n| (1..=3u32).flat_map(move |p| log_grid(0.01, 50.0, 25).into_iter().map(move |t| (n, p, t))))
            .map(|(n, p, t)| {
                let root = t.powf(1.0 / p as f64);
                let direct = laws.h(root / n as f64).powi(n as i32);
                (laws.exit_power_tail(n, p, t) - direct).abs()
            }),
    );
    rows.push(IdentityRow::within("exit_power_tail_definition", power_tail, 1e-12));

    let closed = (1..=4u32)
        .map(|p| {
            let c = limit_laws::exit_moment_1d_closed(p, series)?;
            Ok((laws.exit_moment_limit(1, p)? - c).abs())
        })
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("closed_vs_quadrature_moments", 1e-7, closed));

    let routes = (1..=3u32)
        .flat_map(|n| (1..=3u32).map(move |p| (n, p)))
        .map(|(n, p)| {
            let a = laws.exit_moment_limit(n, p)?;
            Ok((a - laws.exit_moment_via_power_tail(n, p)?).abs() / a)
        })
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("exit_moment_two_routes", 1e-8, routes));

    let kp =
        limit_laws::kp_expected_limit::<f64>(2, 200).and_then(|k| Ok((k.value - laws.exit_moment_limit(2, 1)?).abs()));
    rows.push(check("kp_sum_vs_quadrature", 1e-4, kp));

    let zs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let lam = zs
        .iter()
        .map(|&z| limit_laws::lambda(z).map(|l| (l + l.recip() - 2.0 / z).abs()))
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("lambda_identity", 1e-12, lam));
    let tau1 = zs
        .iter()
        .map(|&z| limit_laws::gen_fn_tau(z, 1).map(|g| (g - z).abs()))
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("gen_fn_tau_unit_level", 1e-12, tau1));

    for (theta, sigma_name, tau_name) in [
        (0.5, "laplace_limit_sigma_theta_0.5", "laplace_limit_tau_theta_0.5"),
        (1.0, "laplace_limit_sigma_theta_1", "laplace_limit_tau_theta_1"),
        (2.0, "laplace_limit_sigma_theta_2", "laplace_limit_tau_theta_2"),
    ] {
        let (sigma, tau) = laplace_limit_errors(theta);
        rows.push(IdentityRow::strictly_decreasing(sigma_name, sigma));
        rows.push(IdentityRow::strictly_decreasing(tau_name, tau));
    }

    let sech = [0.1, 1.0, 10.0]
        .iter()
        .map(|&th| limit_laws::sech_series_theta(th, series).map(|s| (s - limit_laws::laplace_exit(th)).abs()))
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("sech_partial_fractions", 1e-8, sech));

    let mass = laws.passage_expectation(|_| 1.0).map(|m| (m - 1.0).abs());
    rows.push(check("passage_density_mass", 1e-8, mass));
    let lt = [0.5, 1.0, 4.0]
        .iter()
        .map(|&th| {
            laws.passage_expectation(|t| (-th * t).exp())
                .map(|v| (v - limit_laws::laplace_passage(th)).abs())
        })
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("passage_laplace_transform", 1e-6, lt));

    // ‖M̂‖_p nondecreasing in p; residual is the largest decrease.
    let power_mean = (1..=3u32)
        .map(|n| {
            let norms = (1..=3u32)
                .map(|p| Ok(laws.max_moment_limit(n, p)?.powf(1.0 / p as f64)))
                .collect::<Result<Vec<f64>>>()?;
            Ok(max_of(norms.windows(2).map(|w| w[0] - w[1])))
        })
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("max_moment_power_mean", 0.0, power_mean));

    let quadratic = (1..=64u64)
        .map(|r| exact_oracle::expected_exit_exact(1, r).map(|h| (h - ((r + 1) * (r + 1)) as f64).abs()))
        .collect::<Result<Vec<_>>>()
        .map(max_of);
    rows.push(check("oracle_exit_mean_1d", 1e-10, quadratic));

    rows.push(check("oracle_cube_symmetry", 1e-12, cube_symmetry_residual(3, 4)));

    let two_routes = exact_oracle::exit_survival(2, 3, 1e-14).and_then(|table| {
        let solved = exact_oracle::expected_exit_exact(2, 3)?;
        let summed: f64 = table.probs.iter().sum();
        // Reported relative to the certified tail so that `≤ 1` passes.
        Ok((summed - solved).abs() / (table.tail_bound + 1e-11))
    });
    rows.push(check("oracle_survival_vs_solve", 1.0, two_routes));

    let parity = (|| -> Result<f64> {
        let odd = exact_oracle::exit_survival(1, 1, 1e-12)?;
        let even = exact_oracle::exit_survival(1, 2, 1e-12)?;
        let a = max_of((0..odd.truncated_at / 2).map(|k| (odd.probs[2 * k] - odd.probs[2 * k + 1]).abs()));
        let b = max_of((0..(even.truncated_at - 1) / 2).map(|k| (even.probs[2 * k + 1] - even.probs[2 * k + 2]).abs()));
        Ok(a.max(b))
    })();
    rows.push(check("oracle_exit_parity_1d", 0.0, parity));

    let gf = exact_oracle::tau_distribution_1d(2, 1e-15).and_then(|d| {
        let exact = limit_laws::gen_fn_tau(0.9, 2)?;
        Ok((d.generating_function(0.9) - exact).abs())
    });
    rows.push(check("tau_generating_function", 1e-10, gf));

    rows.push(check(
        "max_duality_dkw",
        1.0,
        duality_dkw_ratio(2, 12, 20_000, 0x5eed, 0.001),
    ));

    IdentityReport { rows }
}

/// `|E z^{σ_b} - e^{-√(2θ)}|` and `|E z^{τ_b} - sech √(2θ)|` at `z = e^{-θ/b²}`
/// for `b = 50, 100, 200, 400`.
pub fn laplace_limit_errors(theta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut sigma = Vec::new();
    let mut tau = Vec::new();
    for b in [50u32, 100, 200, 400] {
        let z = (-theta / (b as f64 * b as f64)).exp();
        let s = limit_laws::gen_fn_sigma(z, b).unwrap_or(f64::NAN);
        let t = limit_laws::gen_fn_tau(z, b).unwrap_or(f64::NAN);
        sigma.push((s - limit_laws::laplace_passage(theta)).abs());
        tau.push((t - limit_laws::laplace_exit(theta)).abs());
    }
    (sigma, tau)
}

/// Largest `|h(z) - h(σz)|` over signed coordinate permutations `σ`.
pub fn cube_symmetry_residual(dim: usize, radius: u64) -> Result<f64> {
    let sol = exact_oracle::solve_expected_exit(dim, radius)?;
    let perms = permutations(dim);
    let mut worst = 0.0f64;
    for i in 0..sol.spec.len() {
        let z = sol.spec.point_of(i);
        for perm in &perms {
            for signs in 0..(1u32 << dim) {
                let image: Vec<i64> = (0..dim)
                    .map(|k| {
                        let v = z[perm[k]];
                        if signs >> k & 1 == 1 {
                            -v
                        } else {
                            v
                        }
                    })
                    .collect();
                let j = sol.spec.index_of(&image).expect("symmetries preserve the cube");
                worst = worst.max((sol.values[i] - sol.values[j]).abs());
            }
        }
    }
    Ok(worst)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Dvoretzky–Kiefer–Wolfowitz half-width `√(ln(2/α) / (2n))`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Largest distance between the empirical CDF of `n` simulated running
/// maxima and the exact `P(M̃_t ≤ m)`.
pub fn duality_sup_distance(dim: usize, horizon: u64, n: usize, seed: u64) -> Result<f64> {
    let samples = lattice_walk::sample_batch(MomentKind::Max, dim, horizon, n, seed, &BatchConfig::default())?;
    let exact = exact_oracle::max_cdf_table(dim, horizon)?;
    let mut counts = vec![0usize; horizon as usize + 1];
    for s in samples {
        counts[s as usize] += 1;
    }
    let mut below = 0usize;
    let mut worst = 0.0f64;
    for m in 0..=horizon as usize {
        below += counts[m];
        worst = worst.max((below as f64 / n as f64 - exact[m]).abs());
    }
    Ok(worst)
}

/// [`duality_sup_distance`] divided by the DKW half-width; below 1 passes.
pub fn duality_dkw_ratio(dim: usize, horizon: u64, n: usize, seed: u64, alpha: f64) -> Result<f64> {
    Ok(duality_sup_distance(dim, horizon, n, seed)? / dkw_epsilon(n, alpha))
}

/// Counts of pathwise-inequality violations over a batch of coupled draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditReport {
    pub dim: usize,
    pub radius: u64,
    pub horizon: u64,
    pub samples: u64,
    pub seed: u64,
    /// `T̃_r > Σ τ_{n,r} - (N-1)`.
    pub exit_violations: u64,
    /// `M̃_t > max_n m_{n,t}`.
    pub max_violations: u64,
}

impl AuditReport {
    pub fn total(&self) -> u64 {
        self.exit_violations + self.max_violations
    }

    pub fn metadata(&self) -> String {
        format!(
            "dim={}\nradius={}\nhorizon={}\nsamples={}\nseed={}\nexit_violations={}\nmax_violations={}\n",
            self.dim, self.radius, self.horizon, self.samples, self.seed, self.exit_violations, self.max_violations
        )
    }
}

/// Draws `n` coupled samples and counts violations of the coupling bounds.
pub fn run_coupling_audit(dim: usize, radius: u64, horizon: u64, n: u64, seed: u64) -> Result<AuditReport> {
    audit_with(dim, radius, horizon, n, seed, lattice_walk::sample_coupled)
}

/// [`run_coupling_audit`] with a replaceable sampler.
pub fn audit_with<F>(dim: usize, radius: u64, horizon: u64, n: u64, seed: u64, sampler: F) -> Result<AuditReport>
where
    F: Fn(usize, u64, u64, &mut ChaCha8Rng, u64) -> Result<CoupledSample> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("audit needs at least one sample".into()));
    }
    let cfg = BatchConfig::default();
    let blocks = (n as usize).div_ceil(cfg.block_size);
    let counts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = cfg.block_size.min(n as usize - b * cfg.block_size);
            let mut rng = lattice_walk::stream_rng(seed, b as u64);
            let mut exit = 0u64;
            let mut max = 0u64;
            for _ in 0..len {
                let s = sampler(dim, radius, horizon, &mut rng, cfg.step_cap)?;
                exit += u64::from(!s.exit_bound_holds());
                max += u64::from(!s.max_bound_holds());
            }
            Ok((exit, max))
        })
        .collect::<Result<Vec<_>>>()?;
    let (exit_violations, max_violations) = counts.iter().fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok(AuditReport {
        dim,
        radius,
        horizon,
        samples: n,
        seed,
        exit_violations,
        max_violations,
    })
}

/// Negative control: reports the exit time as `Σ τ_{n,r}`, the coupling bound
/// without its `-(N-1)` slack, and the running maximum one above the largest
/// coordinate maximum.
pub fn corrupted_coupled_sample(
    dim: usize,
    radius: u64,
    horizon: u64,
    rng: &mut ChaCha8Rng,
    step_cap: u64,
) -> Result<CoupledSample> {
    let mut s = lattice_walk::sample_coupled(dim, radius, horizon, rng, step_cap)?;
    s.exit_time = s.coord_exit_times.iter().sum();
    s.running_max = s.coord_running_maxima.iter().copied().max().unwrap_or(0) + 1;
    Ok(s)
}

/// One evaluated point of a limit law.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitRow {
    pub quantity: &'static str,
    pub dim: u32,
    pub p: Option<u32>,
    pub arg: Option<f64>,
    pub value: f64,
}

/// `F_N`, `G_N`, limit moments and the Laplace transforms on a grid.
pub fn run_limits_table(laws: &LimitLawsF64, dim: u32, moments: &[u32], grid: &[f64]) -> Result<Vec<LimitRow>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if grid.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("grid points must be positive".into()));
    }
    let mut rows = Vec::new();
    let point = |quantity, arg: f64, value| LimitRow {
        quantity,
        dim,
        p: None,
        arg: Some(arg),
        value,
    };
    for &t in grid {
        rows.push(point("exit_cdf", t, laws.exit_cdf(dim, t)));
    }
    for &x in grid {
        rows.push(point("max_cdf", x, laws.max_cdf(dim, x)));
    }
    for &p in moments {
        rows.push(LimitRow {
            quantity: "exit_moment",
            dim,
            p: Some(p),
            arg: None,
            value: laws.exit_moment_limit(dim, p)?,
        });
        rows.push(LimitRow {
            quantity: "max_moment",
            dim,
            p: Some(p),
            arg: None,
            value: laws.max_moment_limit(dim, p)?,
        });
    }
    for &th in grid {
        rows.push(point("laplace_exit", th, limit_laws::laplace_exit(th)));
        rows.push(point("laplace_passage", th, limit_laws::laplace_passage(th)));
    }
    Ok(rows)
}

pub fn write_limits_csv<W: Write>(rows: &[LimitRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "dim", "p", "arg", "value"])?;
    for r in rows {
        w.write_record([
            r.quantity.to_string(),
            r.dim.to_string(),
            r.p.map(|p| p.to_string()).unwrap_or_default(),
            r.arg.map(fmt_real).unwrap_or_default(),
            fmt_real(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Settings read from an INI-style file: `key = value` lines, optionally
/// under `[section]` headers. Keys are addressed as `section.key`; keys
/// before the first header have no prefix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

/// Keys [`Config::apply`] understands.
pub const CONFIG_KEYS: &[&str] = &[
    "dim",
    "moment",
    "radius",
    "horizon",
    "samples",
    "seed",
    "threads",
    "series.abs_tol",
    "series.max_terms",
    "series.crossover_y",
    "quadrature.rel_tol",
    "quadrature.panel_order",
    "quadrature.tail_cutoff_tol",
    "quadrature.max_depth",
    "oracle.max_states",
    "oracle.max_work",
    "oracle.survival_tol",
    "sampling.block_size",
    "sampling.step_cap",
];

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (section, props) in &ini {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{}.{}", s.trim(), k.trim()),
                    None => k.trim().to_string(),
                };
                if !CONFIG_KEYS.contains(&key.as_str()) {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
                entries.insert(key, v.trim().to_string());
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
            })
            .transpose()
    }

    /// Comma-separated list.
    pub fn get_list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<T>()
                            .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Overwrites the plan fields this config sets. `radius` feeds exit
    /// sweeps and `horizon` max sweeps.
    pub fn apply(&self, plan: &mut ExperimentPlan) -> Result<()> {
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = self.get($key)? {
                    $field = v;
                }
            };
        }
        set!("dim", plan.dim);
        set!("samples", plan.n_samples);
        set!("seed", plan.seed);
        set!("series.abs_tol", plan.series.abs_tol);
        set!("series.max_terms", plan.series.max_terms);
        set!("series.crossover_y", plan.series.crossover_y);
        set!("quadrature.rel_tol", plan.quad.rel_tol);
        set!("quadrature.panel_order", plan.quad.panel_order);
        set!("quadrature.tail_cutoff_tol", plan.quad.tail_cutoff_tol);
        set!("quadrature.max_depth", plan.quad.max_depth);
        set!("oracle.max_states", plan.oracle.max_states);
        set!("oracle.max_work", plan.oracle.max_work);
        set!("oracle.survival_tol", plan.oracle.survival_tol);
        set!("sampling.block_size", plan.batch.block_size);
        set!("sampling.step_cap", plan.batch.step_cap);
        if let Some(m) = self.get_list("moment")? {
            plan.moments = m;
        }
        let param_key = if plan.kind == PlanKind::MaxConverge {
            "horizon"
        } else {
            "radius"
        };
        if let Some(v) = self.get_list(param_key)? {
            plan.params = v;
        }
        Ok(())
    }
}
