//! Command-line experiment driver: train a federated model, compare it
//! against the centralized reference, or sweep roster parameters.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags,
//! unreadable config, invalid parameters), 3 for runtime failures inside a
//! run. Every flag can also be set through the documented FEDXGB_* variable.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fedxgb::config::{DatasetKind, RunConfig};
use fedxgb::experiment::{self, ExperimentError, SweepAxis};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fedxgb",
    version,
    about = "Federated gradient-boosted trees over secret shares",
    after_help = "Environment: every long flag may be supplied via FEDXGB_<FLAG> \
                  (for example FEDXGB_SEED=7, FEDXGB_DATASET=census)."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run federated training and write model + metrics artifacts.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train the federated and centralized arms on a shared holdout split
    /// and emit per-round test curves plus the accuracy gap.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Fraction of the corpus held out for testing.
        #[arg(long, env = "FEDXGB_TEST_FRACTION", default_value_t = 1.0 / 3.0)]
        test_fraction: f64,
    },
    /// One training run per axis value; emits a cost/overhead table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Which parameter the sweep varies.
        #[arg(long, value_enum)]
        axis: AxisName,
        /// Comma-separated axis values (integers for users/edges).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum AxisName {
    Users,
    Edges,
    Dropout,
}

#[derive(Copy, Clone, ValueEnum)]
enum DatasetName {
    /// Generated census-style sparse binary corpus.
    #[value(alias = "adult")]
    Census,
    /// Generated digit-image corpus.
    #[value(alias = "mnist")]
    Digits,
    /// Dense Gaussian blobs.
    #[value(alias = "synthetic")]
    Blobs,
}

#[derive(Args)]
struct Common {
    /// TOML run config; the flags below override its fields.
    #[arg(long, env = "FEDXGB_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "FEDXGB_SEED")]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, env = "FEDXGB_OUT", default_value = "out")]
    out: PathBuf,
    /// Named corpus (aliases: adult, mnist, synthetic).
    #[arg(long, env = "FEDXGB_DATASET", value_enum)]
    dataset: Option<DatasetName>,
    /// Instances to generate for named corpora.
    #[arg(long, env = "FEDXGB_DATASET_SIZE")]
    dataset_size: Option<usize>,
    /// Stratified cap applied after loading.
    #[arg(long, env = "FEDXGB_SUBSAMPLE")]
    subsample: Option<usize>,
    #[arg(long, env = "FEDXGB_DROPOUT_RATE")]
    dropout_rate: Option<f64>,
    /// Rounds between dropout events.
    #[arg(long, env = "FEDXGB_DROPOUT_PERIOD")]
    dropout_period: Option<usize>,
    /// Replacement identities provisioned for dropouts.
    #[arg(long, env = "FEDXGB_DROPOUT_RESERVE")]
    dropout_reserve: Option<usize>,
    #[arg(long, env = "FEDXGB_USERS")]
    users: Option<usize>,
    #[arg(long, env = "FEDXGB_EDGES")]
    edges: Option<usize>,
    /// Boosting rounds.
    #[arg(long, env = "FEDXGB_ROUNDS")]
    rounds: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(name) = self.dataset {
            cfg.dataset.kind = match name {
                DatasetName::Census => DatasetKind::Census,
                DatasetName::Digits => DatasetKind::Digits,
                DatasetName::Blobs => DatasetKind::Blobs,
            };
        }
        if let Some(n) = self.dataset_size {
            cfg.dataset.size = n;
        }
        if let Some(n) = self.subsample {
            cfg.dataset.subsample = Some(n);
        }
        if let Some(r) = self.dropout_rate {
            cfg.dropout.rate = r;
        }
        if let Some(p) = self.dropout_period {
            cfg.dropout.period = p;
        }
        if let Some(n) = self.dropout_reserve {
            cfg.dropout.reserve = n;
        }
        if let Some(n) = self.users {
            cfg.topology.users = n;
        }
        if let Some(t) = self.edges {
            cfg.topology.edges = t;
        }
        if let Some(k) = self.rounds {
            cfg.boost.rounds = k;
        }
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let train = experiment::load_dataset(&cfg)?;
    println!(
        "corpus: {} instances, {} features, {} classes",
        train.len(),
        train.n_features,
        train.n_classes
    );
    let run = experiment::run_federated(&cfg, &train)?;
    let paths = experiment::write_artifacts(&common.out, &cfg, &run)?;
    let s = &run.metrics.summary;
    println!(
        "trained {} rounds with {} users / {} edges",
        s.rounds, s.users, s.edges
    );
    println!(
        "final train accuracy {:.4}, loss {:.4}",
        s.final_accuracy.unwrap_or(f64::NAN),
        s.final_loss.unwrap_or(f64::NAN)
    );
    println!("messages {}, bytes {}, sim time {:.1}", s.total_messages, s.total_bytes, s.sim_time);
    println!("transcript {}", s.transcript);
    println!(
        "artifacts: {} {} {} {}",
        paths.config.display(),
        paths.metrics_csv.display(),
        paths.summary_json.display(),
        paths.model_json.display()
    );
    Ok(())
}

fn cmd_compare(common: &Common, test_fraction: f64) -> Result<()> {
    if !(0.0..=0.9).contains(&test_fraction) {
        return Err(anyhow!(ExperimentError::Invalid(format!(
            "test fraction {test_fraction} outside [0, 0.9]"
        ))));
    }
    let cfg = common.resolve()?;
    let report = experiment::run_compare(&cfg, test_fraction)?;
    std::fs::create_dir_all(&common.out)?;
    experiment::write_atomic(&common.out.join("compare.csv"), &report.to_csv())?;
    experiment::write_atomic(
        &common.out.join("compare.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "federated test accuracy {:.4}, centralized {:.4}",
        report.final_federated_accuracy, report.final_oracle_accuracy
    );
    println!("max per-round accuracy gap {:.4}", report.max_accuracy_gap);
    println!("tables: {}", common.out.join("compare.csv").display());
    Ok(())
}

fn cmd_sweep(common: &Common, axis: AxisName, values: &[f64]) -> Result<()> {
    let cfg = common.resolve()?;
    let axis = match axis {
        AxisName::Users => SweepAxis::Users(as_counts(values)?),
        AxisName::Edges => SweepAxis::Edges(as_counts(values)?),
        AxisName::Dropout => SweepAxis::Dropout(values.to_vec()),
    };
    let points = experiment::run_sweep(&cfg, &axis)?;
    std::fs::create_dir_all(&common.out)?;
    experiment::write_atomic(
        &common.out.join("sweep.csv"),
        &experiment::sweep_csv(&points),
    )?;
    experiment::write_atomic(
        &common.out.join("sweep.json"),
        &serde_json::to_string_pretty(&points)?,
    )?;
    for p in &points {
        if p.ok {
            println!(
                "{}={:<6} per-user bytes {:>12.1}  per-user time {:>10.1}  per-edge time {:>10.1}",
                axis.name(),
                axis_value(p, &axis),
                p.per_user_bytes,
                p.per_user_time,
                p.per_edge_time
            );
        } else {
            println!(
                "{}={:<6} failed: {}",
                axis.name(),
                axis_value(p, &axis),
                p.error.as_deref().unwrap_or("unknown")
            );
        }
    }
    if points.iter().all(|p| !p.ok) {
        return Err(anyhow!(ExperimentError::Federation(
            fedxgb::federation::FedError::Protocol("every sweep point failed".into())
        )));
    }
    Ok(())
}

fn axis_value(p: &experiment::SweepPoint, axis: &SweepAxis) -> String {
    match axis {
        SweepAxis::Users(_) => p.users.to_string(),
        SweepAxis::Edges(_) => p.edges.to_string(),
        SweepAxis::Dropout(_) => format!("{:.2}", p.dropout_rate),
    }
}

fn as_counts(values: &[f64]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && v >= 1.0 {
                Ok(v as usize)
            } else {
                Err(anyhow!(ExperimentError::Invalid(format!(
                    "axis value {v} must be a positive integer"
                ))))
            }
        })
        .collect()
}

/// Configuration problems exit 2; failures inside a run exit 3.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return match e {
                ExperimentError::Config(_)
                | ExperimentError::Invalid(_)
                | ExperimentError::Codec(_)
                | ExperimentError::Data(_) => 2,
                ExperimentError::Federation(_) | ExperimentError::Boost(_) => 3,
                ExperimentError::Io(_) => 2,
            };
        }
        if cause.downcast_ref::<fedxgb::config::ConfigError>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
        if cause.downcast_ref::<fedxgb::federation::FedError>().is_some() {
            return 3;
        }
    }
    3
}

/// Die silently on a closed pipe (`fedxgb ... | head`) instead of
/// panicking when a later print hits EPIPE.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train { common } => cmd_train(common),
        Cmd::Compare {
            common,
            test_fraction,
        } => cmd_compare(common, *test_fraction),
        Cmd::Sweep {
            common,
            axis,
            values,
        } => cmd_sweep(common, *axis, values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
