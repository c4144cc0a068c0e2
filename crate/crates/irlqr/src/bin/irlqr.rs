//! Command-line front end for the benchmark harness.
//!
//! Exit codes: 0 on success, 1 on config validation or parse errors, 2 on
//! runtime failures (I/O, batch setup).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use irlqr::algorithm::{
    clip_level, min_epoch_concentration_branch, min_epoch_settle_branch, nominal_gain,
    stability_constants,
};
use irlqr::harness::{
    self, emit_summary_csv, emit_traces_csv, load_config, summarize, ExperimentConfig,
    HarnessError, Method,
};

#[derive(Parser)]
#[command(name = "irlqr", about = "Online LQR benchmarking: intrinsic-reward optimism vs baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark batch and write traces.csv and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of methods (irlqr,cec_pe,ts).
        #[arg(long)]
        methods: Option<String>,
        /// Override the number of seeds.
        #[arg(long)]
        seeds: Option<u64>,
        /// Override the horizon.
        #[arg(long)]
        horizon: Option<u64>,
        /// Worker threads for the batch (default: all cores).
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Validate a config and exit.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the derived constants of a config for inspection.
    Constants {
        #[arg(long)]
        config: PathBuf,
    },
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    methods: Option<String>,
    seeds: Option<u64>,
    horizon: Option<u64>,
) -> Result<(), HarnessError> {
    if let Some(list) = methods {
        let mut parsed = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let m = Method::parse(name).ok_or_else(|| HarnessError::Validation {
                field: "methods".into(),
                reason: format!("unknown method `{name}`"),
            })?;
            if !parsed.contains(&m) {
                parsed.push(m);
            }
        }
        if parsed.is_empty() {
            return Err(HarnessError::Validation {
                field: "methods".into(),
                reason: "at least one method required".into(),
            });
        }
        cfg.methods = parsed;
    }
    if let Some(s) = seeds {
        if s == 0 {
            return Err(HarnessError::Validation {
                field: "seeds".into(),
                reason: "must be at least 1".into(),
            });
        }
        cfg.seeds = s;
    }
    if let Some(t) = horizon {
        if t == 0 {
            return Err(HarnessError::Validation {
                field: "horizon".into(),
                reason: "must be at least 1".into(),
            });
        }
        cfg.horizon = t;
    }
    Ok(())
}

fn run_command(
    config: PathBuf,
    out: PathBuf,
    methods: Option<String>,
    seeds: Option<u64>,
    horizon: Option<u64>,
    parallel: Option<usize>,
) -> Result<(), (u8, String)> {
    let mut cfg = load_config(&config).map_err(config_code)?;
    apply_overrides(&mut cfg, methods, seeds, horizon).map_err(config_code)?;

    let traces = if let Some(workers) = parallel {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| (2, format!("failed to build thread pool: {e}")))?;
        pool.install(|| harness::run_batch(&cfg))
    } else {
        harness::run_batch(&cfg)
    }
    .map_err(runtime_code)?;

    std::fs::create_dir_all(&out).map_err(|e| (2, format!("{}: {e}", out.display())))?;
    let traces_path = out.join("traces.csv");
    let summary_path = out.join("summary.csv");
    emit_traces_csv(&traces, &traces_path).map_err(runtime_code)?;
    let summary = summarize(&traces, cfg.bootstrap_level, cfg.bootstrap_resamples, cfg.bootstrap_seed);
    emit_summary_csv(&summary, &summary_path).map_err(runtime_code)?;

    let failures = traces.iter().filter(|t| t.error.is_some()).count();
    println!(
        "{}: {} traces ({} failed), horizon {}, seeds {}",
        cfg.name,
        traces.len(),
        failures,
        cfg.horizon,
        cfg.seeds
    );
    for st in &summary.stats {
        let last = summary
            .rows
            .iter()
            .filter(|r| r.method == st.method)
            .last();
        if let Some(row) = last {
            println!(
                "  {:7} median regret at t={}: {:.4} [{:.4}, {:.4}], median updates {}, median update {:.1} us",
                st.method,
                row.t,
                row.median_regret,
                row.ci_lo,
                row.ci_hi,
                st.median_updates,
                st.median_update_ns / 1000.0
            );
        }
    }
    println!("wrote {} and {}", traces_path.display(), summary_path.display());
    Ok(())
}

fn constants_command(config: PathBuf) -> Result<(), (u8, String)> {
    let cfg = load_config(&config).map_err(config_code)?;
    let theta0 = cfg.theta0_matrix();
    let k0 = nominal_gain(&theta0, &cfg.q, &cfg.r)
        .map_err(|e| (2, format!("nominal synthesis failed: {e}")))?;
    let consts = stability_constants(&theta0, &k0, cfg.r_k, &cfg.q, &cfg.r, cfg.sigma_w, cfg.safety)
        .map_err(|e| (2, format!("constant computation failed: {e}")))?;
    let clip = clip_level(&consts, &cfg.q, &cfg.r, &theta0, cfg.lambda);
    let dx = cfg.a.nrows();
    println!("benchmark {}", cfg.name);
    println!("  C         = {:.6}", consts.c);
    println!("  rho       = {:.6}", consts.rho);
    println!("  K_bar     = {:.6}", consts.bar_k);
    println!("  P_bar     = {:.6}", consts.bar_p);
    println!("  Sigma_bar = {:.6}", consts.bar_sigma);
    println!("  c(lambda) = {:.6e}", clip);
    println!("  min epoch, settling branch      = {:.3}", min_epoch_settle_branch(&consts));
    println!(
        "  min epoch, concentration branch = {:.3e}  (m=1, t={})",
        min_epoch_concentration_branch(1, cfg.horizon, &consts, dx, cfg.sigma_w, cfg.delta),
        cfg.horizon
    );
    Ok(())
}

fn config_code(e: HarnessError) -> (u8, String) {
    match e {
        HarnessError::Io(err) => (2, err.to_string()),
        other => (1, other.to_string()),
    }
}

fn runtime_code(e: HarnessError) -> (u8, String) {
    match e {
        HarnessError::Validation { .. } | HarnessError::Parse(_) => (1, e.to_string()),
        HarnessError::Io(err) => (2, err.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, methods, seeds, horizon, parallel } => {
            run_command(config, out, methods, seeds, horizon, parallel)
        }
        Command::Check { config } => load_config(&config).map_err(config_code).map(|cfg| {
            println!("{}: ok ({} methods, horizon {})", cfg.name, cfg.methods.len(), cfg.horizon);
        }),
        Command::Constants { config } => constants_command(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
