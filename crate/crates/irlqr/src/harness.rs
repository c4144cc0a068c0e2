//! Benchmark harness: config files, seeded batch execution, bootstrap
//! summaries, and CSV emission.
//!
//! A benchmark is one TOML file describing the ground-truth plant, the prior,
//! and the method hyperparameters. Batches run every `(method, seed)` pair
//! with paired process noise (same seed ⇒ same disturbance sequence across
//! methods) and collect deterministic traces; failures of individual runs
//! are recorded on their trace rather than aborting the batch.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::algorithm::{run_irlqr, MinEpoch, RunConfig};
use crate::baselines::{run_cec_pe, run_ts};
use crate::control::{ergodic_cost, LinearSystem, NoiseStream};
use crate::numkern::{lqr_solution, NumError, SymMatrix};
use crate::trace::RegretTrace;

/// Errors from config handling, batch setup, and CSV I/O.
#[derive(Debug)]
pub enum HarnessError {
    /// The config file could not be read or parsed.
    Parse(String),
    /// The config parsed but a field is invalid; `field` names the offender.
    Validation { field: String, reason: String },
    Io(std::io::Error),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Parse(msg) => write!(f, "config parse error: {msg}"),
            HarnessError::Validation { field, reason } => {
                write!(f, "invalid config field `{field}`: {reason}")
            }
            HarnessError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e)
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Validation { field: field.to_string(), reason: reason.into() }
}

/// Online policies the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    IrLqr,
    CecPe,
    Ts,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::IrLqr => "irlqr",
            Method::CecPe => "cec_pe",
            Method::Ts => "ts",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "irlqr" => Some(Method::IrLqr),
            "cec_pe" => Some(Method::CecPe),
            "ts" => Some(Method::Ts),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawMinEpoch {
    Steps(u64),
    Named(String),
}

fn default_true_methods() -> Vec<String> {
    vec!["irlqr".into(), "cec_pe".into(), "ts".into()]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    sigma_w: f64,
    lambda: f64,
    theta0: Option<Vec<Vec<f64>>>,
    offset_scale: Option<f64>,
    #[serde(default)]
    offset_seed: u64,
    #[serde(default = "default_delta")]
    delta: f64,
    #[serde(default = "default_horizon")]
    horizon: u64,
    #[serde(default = "default_seeds")]
    seeds: u64,
    #[serde(default = "default_true_methods")]
    methods: Vec<String>,
    #[serde(default = "default_min_epoch")]
    min_epoch: RawMinEpoch,
    #[serde(default = "default_one")]
    g_scale: f64,
    #[serde(default = "default_one")]
    r_k: f64,
    #[serde(default = "default_one")]
    ts_inflation: f64,
    #[serde(default = "default_one")]
    pe_scale: f64,
    #[serde(default = "default_exponent")]
    pe_exponent: f64,
    #[serde(default = "default_safety")]
    safety: f64,
    #[serde(default = "default_blowup")]
    blowup: f64,
    #[serde(default = "default_level")]
    bootstrap_level: f64,
    #[serde(default = "default_resamples")]
    bootstrap_resamples: usize,
    #[serde(default)]
    bootstrap_seed: u64,
}

fn default_delta() -> f64 {
    0.1
}
fn default_horizon() -> u64 {
    200
}
fn default_seeds() -> u64 {
    40
}
fn default_min_epoch() -> RawMinEpoch {
    RawMinEpoch::Steps(10)
}
fn default_one() -> f64 {
    1.0
}
fn default_exponent() -> f64 {
    0.25
}
fn default_safety() -> f64 {
    1.5
}
fn default_blowup() -> f64 {
    1e8
}
fn default_level() -> f64 {
    0.6
}
fn default_resamples() -> usize {
    1000
}

/// How the prior center `Θ̂₀` is obtained.
#[derive(Debug, Clone)]
pub enum Theta0Spec {
    /// Explicit `dx × (dx+du)` matrix.
    Explicit(DMatrix<f64>),
    /// `Θ̂₀ = Θ⋆ + direction·scale/λ` for a seeded random unit direction,
    /// guaranteeing `Θ⋆` lies in the prior ball when `scale < 1`.
    Offset { scale: f64, seed: u64 },
}

/// A fully validated benchmark description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub sigma_w: f64,
    pub lambda: f64,
    pub theta0: Theta0Spec,
    pub delta: f64,
    pub horizon: u64,
    pub seeds: u64,
    pub methods: Vec<Method>,
    pub min_epoch: MinEpoch,
    pub g_scale: f64,
    pub r_k: f64,
    pub ts_inflation: f64,
    pub pe_scale: f64,
    pub pe_exponent: f64,
    pub safety: f64,
    pub blowup: f64,
    pub bootstrap_level: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

fn to_matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, HarnessError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(invalid(field, "matrix must be non-empty"));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(field, "rows have inconsistent lengths"));
    }
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(invalid(field, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}

fn to_sym_pd(field: &str, rows: &[Vec<f64>]) -> Result<SymMatrix, HarnessError> {
    let m = to_matrix(field, rows)?;
    let sym = SymMatrix::new(m).map_err(|e| invalid(field, e.to_string()))?;
    if sym.cholesky().is_err() {
        return Err(invalid(field, "matrix must be positive definite"));
    }
    Ok(sym)
}

/// Loads and validates a benchmark config. Stabilizability of `(A, B)` and
/// positive definiteness of the weights are checked here so later stages can
/// assume a well-posed problem.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    validate(raw)
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig, HarnessError> {
    let a = to_matrix("a", &raw.a)?;
    let b = to_matrix("b", &raw.b)?;
    let q = to_sym_pd("q", &raw.q)?;
    let r = to_sym_pd("r", &raw.r)?;
    let dx = a.nrows();
    let du = b.ncols();
    if a.ncols() != dx {
        return Err(invalid("a", "must be square"));
    }
    if b.nrows() != dx {
        return Err(invalid("b", format!("must have {dx} rows")));
    }
    if q.order() != dx {
        return Err(invalid("q", format!("must be {dx}x{dx}")));
    }
    if r.order() != du {
        return Err(invalid("r", format!("must be {du}x{du}")));
    }
    if !(raw.sigma_w.is_finite() && raw.sigma_w >= 0.0) {
        return Err(invalid("sigma_w", "must be finite and nonnegative"));
    }
    if !(raw.lambda.is_finite() && raw.lambda > 0.0) {
        return Err(invalid("lambda", "must be positive"));
    }
    if !(raw.delta > 0.0 && raw.delta < 1.0) {
        return Err(invalid("delta", "must lie in (0, 1)"));
    }
    if raw.horizon == 0 {
        return Err(invalid("horizon", "must be at least 1"));
    }
    if raw.seeds == 0 {
        return Err(invalid("seeds", "must be at least 1"));
    }
    if raw.g_scale < 0.0 {
        return Err(invalid("g_scale", "must be nonnegative"));
    }
    if raw.r_k < 0.0 {
        return Err(invalid("r_k", "must be nonnegative"));
    }
    if raw.ts_inflation < 0.0 {
        return Err(invalid("ts_inflation", "must be nonnegative"));
    }
    if raw.pe_scale < 0.0 {
        return Err(invalid("pe_scale", "must be nonnegative"));
    }
    if raw.safety < 1.0 {
        return Err(invalid("safety", "must be at least 1"));
    }
    if !(raw.bootstrap_level > 0.0 && raw.bootstrap_level < 1.0) {
        return Err(invalid("bootstrap_level", "must lie in (0, 1)"));
    }

    // Stabilizability check, reported against the dynamics fields.
    LinearSystem::new(a.clone(), b.clone(), raw.sigma_w, q.clone(), r.clone()).map_err(|e| {
        invalid("a/b", format!("plant failed validation: {e}"))
    })?;

    let theta0 = match (&raw.theta0, raw.offset_scale) {
        (Some(rows), None) => {
            let t = to_matrix("theta0", rows)?;
            if t.nrows() != dx || t.ncols() != dx + du {
                return Err(invalid("theta0", format!("must be {dx}x{}", dx + du)));
            }
            Theta0Spec::Explicit(t)
        }
        (None, Some(scale)) => {
            if !(0.0..1.0).contains(&scale) {
                return Err(invalid("offset_scale", "must lie in [0, 1)"));
            }
            Theta0Spec::Offset { scale, seed: raw.offset_seed }
        }
        (None, None) => return Err(invalid("theta0", "provide `theta0` or `offset_scale`")),
        (Some(_), Some(_)) => {
            return Err(invalid("theta0", "`theta0` and `offset_scale` are mutually exclusive"))
        }
    };

    let mut methods = Vec::new();
    for s in &raw.methods {
        let m = Method::parse(s)
            .ok_or_else(|| invalid("methods", format!("unknown method `{s}`")))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(invalid("methods", "at least one method required"));
    }

    let min_epoch = match raw.min_epoch {
        RawMinEpoch::Steps(s) => MinEpoch::Steps(s),
        RawMinEpoch::Named(ref s) if s == "theoretical" => MinEpoch::Theoretical,
        RawMinEpoch::Named(s) => {
            return Err(invalid("min_epoch", format!("expected a step count or \"theoretical\", got `{s}`")))
        }
    };

    Ok(ExperimentConfig {
        name: raw.name,
        a,
        b,
        q,
        r,
        sigma_w: raw.sigma_w,
        lambda: raw.lambda,
        theta0,
        delta: raw.delta,
        horizon: raw.horizon,
        seeds: raw.seeds,
        methods,
        min_epoch,
        g_scale: raw.g_scale,
        r_k: raw.r_k,
        ts_inflation: raw.ts_inflation,
        pe_scale: raw.pe_scale,
        pe_exponent: raw.pe_exponent,
        safety: raw.safety,
        blowup: raw.blowup,
        bootstrap_level: raw.bootstrap_level,
        bootstrap_resamples: raw.bootstrap_resamples,
        bootstrap_seed: raw.bootstrap_seed,
    })
}

impl ExperimentConfig {
    pub fn system(&self) -> Result<LinearSystem, NumError> {
        LinearSystem::new(
            self.a.clone(),
            self.b.clone(),
            self.sigma_w,
            self.q.clone(),
            self.r.clone(),
        )
    }

    /// Ground-truth parameters `[A B]`.
    pub fn theta_star(&self) -> DMatrix<f64> {
        let dx = self.a.nrows();
        let du = self.b.ncols();
        let mut theta = DMatrix::zeros(dx, dx + du);
        theta.view_mut((0, 0), (dx, dx)).copy_from(&self.a);
        theta.view_mut((0, dx), (dx, du)).copy_from(&self.b);
        theta
    }

    /// Prior center, materialized. The offset variant perturbs the truth by
    /// a seeded random direction of exact Frobenius norm `scale/λ`, shared
    /// by every seed in the batch.
    pub fn theta0_matrix(&self) -> DMatrix<f64> {
        let star = self.theta_star();
        match &self.theta0 {
            Theta0Spec::Explicit(t) => t.clone(),
            Theta0Spec::Offset { scale, seed } => {
                if *scale == 0.0 {
                    return star;
                }
                let mut stream = NoiseStream::with_channel(*seed, 3);
                let g = stream.draw_matrix(star.nrows(), star.ncols(), 1.0);
                let norm = g.norm();
                assert!(norm > 0.0, "degenerate offset direction");
                &star + g.scale(scale / self.lambda / norm)
            }
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            horizon: self.horizon,
            lambda: self.lambda,
            theta0: self.theta0_matrix(),
            delta: self.delta,
            min_epoch: self.min_epoch,
            g_scale: self.g_scale,
            r_k: self.r_k,
            safety: self.safety,
            blowup: self.blowup,
            ts_inflation: self.ts_inflation,
            pe_scale: self.pe_scale,
            pe_exponent: self.pe_exponent,
        }
    }
}

/// Optimal gain and ergodic cost of the ground-truth plant;
/// `J⋆ = σ_w²·trace(P⋆)`.
pub fn optimal_benchmark(sys: &LinearSystem) -> Result<(DMatrix<f64>, f64), NumError> {
    let zero = DMatrix::zeros(sys.dx(), sys.du());
    let (kstar, _) = lqr_solution(sys.a(), sys.b(), sys.q(), sys.r(), &zero)?;
    let jstar = ergodic_cost(&kstar, &sys.theta(), sys.q(), sys.r(), sys.sigma_w())?;
    Ok((kstar, jstar))
}

/// Runs every `(method, seed)` pair of the config, in parallel when a rayon
/// pool is installed. Traces come back ordered by (method as listed, seed);
/// failed runs are returned with their `error` field set and no steps.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<Vec<RegretTrace>, HarnessError> {
    let sys = cfg
        .system()
        .map_err(|e| invalid("a/b", format!("plant failed validation: {e}")))?;
    let rc = cfg.run_config();
    let pairs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.seeds).map(move |s| (m, s)))
        .collect();
    let traces: Vec<RegretTrace> = pairs
        .par_iter()
        .map(|&(method, seed)| {
            let result = match method {
                Method::IrLqr => run_irlqr(&sys, &rc, seed),
                Method::CecPe => run_cec_pe(&sys, &rc, seed),
                Method::Ts => run_ts(&sys, &rc, seed),
            };
            result.unwrap_or_else(|e| RegretTrace {
                method: method.name().to_string(),
                seed,
                jstar: 0.0,
                steps: Vec::new(),
                updates: Vec::new(),
                logdet_v0: 0.0,
                final_logdet_v: 0.0,
                gain_violations: 0,
                error: Some(e.to_string()),
            })
        })
        .collect();
    Ok(traces)
}

/// Median by the midpoint rule: mean of the two central order statistics for
/// even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median inputs must be comparable"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-(method, step) regret statistics.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: String,
    pub t: u64,
    pub median_regret: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Per-method update statistics: the median update count across seeds and
/// the median synthesis wall-clock over all logged updates.
#[derive(Debug, Clone)]
pub struct MethodStats {
    pub method: String,
    pub median_updates: f64,
    pub median_update_ns: f64,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub stats: Vec<MethodStats>,
}

fn bootstrap_ci(
    values: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let n = values.len();
    let mut medians = Vec::with_capacity(resamples);
    let mut sample = vec![0.0; n];
    for _ in 0..resamples {
        for slot in sample.iter_mut() {
            *slot = values[rng.gen_range(0..n)];
        }
        medians.push(median(&sample));
    }
    medians.sort_by(|a, b| a.partial_cmp(b).expect("bootstrap medians comparable"));
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = 1.0 - lo_q;
    let idx = |q: f64| ((resamples - 1) as f64 * q).round() as usize;
    (medians[idx(lo_q)], medians[idx(hi_q)])
}

/// Medians with bootstrap confidence intervals (seeds resampled with
/// replacement; the resampling RNG is seeded for reproducibility). Traces
/// that failed are excluded.
pub fn summarize(traces: &[RegretTrace], level: f64, resamples: usize, seed: u64) -> Summary {
    assert!(!traces.is_empty(), "summarize needs at least one trace");
    let mut methods: Vec<String> = Vec::new();
    for tr in traces {
        if !methods.contains(&tr.method) {
            methods.push(tr.method.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    for method in &methods {
        let ok: Vec<&RegretTrace> = traces
            .iter()
            .filter(|tr| &tr.method == method && tr.error.is_none() && !tr.steps.is_empty())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let horizon = ok.iter().map(|tr| tr.steps.len()).min().unwrap();
        for t in 0..horizon {
            let values: Vec<f64> = ok.iter().map(|tr| tr.steps[t].cum_regret).collect();
            let (ci_lo, ci_hi) = bootstrap_ci(&values, level, resamples, &mut rng);
            rows.push(SummaryRow {
                method: method.clone(),
                t: t as u64,
                median_regret: median(&values),
                ci_lo,
                ci_hi,
            });
        }
        let counts: Vec<f64> = ok.iter().map(|tr| tr.update_count() as f64).collect();
        let mut wallclocks: Vec<f64> = ok
            .iter()
            .flat_map(|tr| tr.updates.iter().map(|u| u.synth_ns as f64))
            .collect();
        if wallclocks.is_empty() {
            wallclocks.push(0.0);
        }
        stats.push(MethodStats {
            method: method.clone(),
            median_updates: median(&counts),
            median_update_ns: median(&wallclocks),
        });
    }
    Summary { rows, stats }
}

/// 17 significant digits: round-trips `f64` exactly.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const TRACE_HEADER: &str =
    "method,seed,t,stage_cost,cum_regret,update_flag,update_wallclock_ns";

pub const SUMMARY_HEADER: &str =
    "method,t,median_regret,ci_lo,ci_hi,median_updates,median_update_ns";

/// Writes the per-step trace file. Failed runs contribute no rows.
pub fn emit_traces_csv(traces: &[RegretTrace], path: &Path) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for tr in traces {
        for s in &tr.steps {
            out.push_str(&tr.method);
            out.push(',');
            out.push_str(&tr.seed.to_string());
            out.push(',');
            out.push_str(&s.t.to_string());
            out.push(',');
            out.push_str(&fmt_float(s.stage_cost));
            out.push(',');
            out.push_str(&fmt_float(s.cum_regret));
            out.push(',');
            out.push_str(if s.update { "1" } else { "0" });
            out.push(',');
            out.push_str(&s.update_wallclock_ns.to_string());
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Writes the summary file; the per-method medians repeat on every row of
/// that method.
pub fn emit_summary_csv(summary: &Summary, path: &Path) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for row in &summary.rows {
        let stats = summary
            .stats
            .iter()
            .find(|s| s.method == row.method)
            .expect("stats exist for every summarized method");
        out.push_str(&row.method);
        out.push(',');
        out.push_str(&row.t.to_string());
        out.push(',');
        out.push_str(&fmt_float(row.median_regret));
        out.push(',');
        out.push_str(&fmt_float(row.ci_lo));
        out.push(',');
        out.push_str(&fmt_float(row.ci_hi));
        out.push(',');
        out.push_str(&fmt_float(stats.median_updates));
        out.push(',');
        out.push_str(&fmt_float(stats.median_update_ns));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// One parsed row of a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub method: String,
    pub seed: u64,
    pub t: u64,
    pub stage_cost: f64,
    pub cum_regret: f64,
    pub update_flag: bool,
    pub update_wallclock_ns: u64,
}

/// Parses a trace file produced by [`emit_traces_csv`].
pub fn read_traces_csv(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => {
            return Err(HarnessError::Parse(format!(
                "unexpected trace header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(HarnessError::Parse(format!("row {}: expected 7 columns", i + 2)));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| HarnessError::Parse(format!("row {}: {e}", i + 2)))
        };
        let parse_u = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| HarnessError::Parse(format!("row {}: {e}", i + 2)))
        };
        rows.push(TraceRow {
            method: parts[0].to_string(),
            seed: parse_u(parts[1])?,
            t: parse_u(parts[2])?,
            stage_cost: parse_f(parts[3])?,
            cum_regret: parse_f(parts[4])?,
            update_flag: parts[5] == "1",
            update_wallclock_ns: parse_u(parts[6])?,
        });
    }
    Ok(rows)
}
