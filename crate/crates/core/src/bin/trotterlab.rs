use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};

use trotterlab::harness::{run_experiment, Experiment, ExperimentConfig, JobStatus};
use trotterlab::linalg::blas_self_check;

/// Trotter-error experiments on the driven quantum Ising chain.
///
/// Exit codes: 0 all jobs succeeded, 2 invalid configuration, 3 some jobs
/// failed (see manifest.json), 1 anything else.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// One of dynamics, collapse, ipr-sweep, otoc-sweep, qe-sweep, coeffs,
    /// noise, lloyd-bound. Must match `experiment` in the config file.
    experiment: String,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers` in the config.
    #[arg(long)]
    workers: Option<usize>,
}

fn load(cli: &Cli) -> trotterlab::Result<ExperimentConfig> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut cfg = ExperimentConfig::from_path(&cli.config)?;
    if cfg.experiment != experiment {
        return Err(trotterlab::TrotterError::Config(format!(
            "command line asks for `{experiment}` but the config describes `{}`",
            cfg.experiment
        )));
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

const CORETYPE_VAR: &str = "OPENBLAS_CORETYPE";

fn rerun_with_pinned_kernels() -> ExitCode {
    log::warn!("BLAS self-check failed; restarting with {CORETYPE_VAR}=Haswell");
    let status = std::env::current_exe().and_then(|exe| {
        std::process::Command::new(exe).args(std::env::args_os().skip(1)).env(CORETYPE_VAR, "Haswell").status()
    });
    match status {
        Ok(s) => ExitCode::from(s.code().unwrap_or(1) as u8),
        Err(e) => {
            error!("cannot restart: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = blas_self_check() {
        // OpenBLAS picks its kernels when the library loads, so the only fix
        // from here is to run again with the core type pinned.
        if std::env::var_os(CORETYPE_VAR).is_none() {
            return rerun_with_pinned_kernels();
        }
        error!("{e}");
        return ExitCode::from(1);
    }
    info!("{} on N = {}: {} jobs, {} workers", cfg.experiment, cfg.model.n, cfg.jobs().len(), cfg.workers);
    let bundle = match run_experiment(&cfg) {
        Ok(b) => b,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(1);
        }
    };
    for job in bundle.jobs.iter().filter(|j| j.status == JobStatus::Failed) {
        error!("job {} failed: {}", job.idx, job.error.as_deref().unwrap_or("unknown error"));
    }
    if let Some(t) = &bundle.threshold {
        info!("threshold tau* = {:.4} +/- {:.4}", t.tau, t.uncertainty);
    } else if let Some(e) = &bundle.threshold_error {
        info!("{e}");
    }
    println!("{}", cfg.output.join(trotterlab::harness::MANIFEST_FILE).display());
    ExitCode::from(bundle.exit_code() as u8)
}
