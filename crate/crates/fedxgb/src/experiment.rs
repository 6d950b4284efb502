//! Experiment driver shared by the command-line tool and the integration
//! tests: corpus loading, federated and centralized reference runs, per-round
//! comparisons, roster sweeps, and atomic artifact emission.

use crate::codec::FixedPointCodec;
use crate::config::{DatasetKind, RunConfig};
use crate::data::{idx, libsvm, partition, synthetic, DataError, Dataset};
use crate::federation::runner::{node_rng, World};
use crate::federation::FedError;
use crate::field::Field;
use crate::gbt::{train_plaintext, Forest, Instance};
use crate::sim::RunMetrics;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Federation(#[from] FedError),
    #[error(transparent)]
    Boost(#[from] crate::gbt::GbtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

pub fn codec_for(cfg: &RunConfig) -> Result<FixedPointCodec, ExperimentError> {
    Ok(FixedPointCodec::new(
        Field::default(),
        cfg.codec.fractional_bits,
        1 << cfg.codec.headroom_bits,
    )?)
}

/// Load (or generate) the corpus named by the config, quantized onto the
/// run's fixed-point grid, with the optional stratified subsample applied.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, ExperimentError> {
    let codec = codec_for(cfg)?;
    let d = &cfg.dataset;
    let ds = match d.kind {
        DatasetKind::Census => synthetic::census_dataset(d.size, d.data_seed, &codec)?,
        DatasetKind::Digits => synthetic::digits_dataset(d.size, d.data_seed, &codec)?,
        DatasetKind::Blobs => synthetic::blobs(
            d.size,
            d.blob_features,
            d.blob_classes,
            d.data_seed,
            &codec,
        )?,
        DatasetKind::LibsvmFile => {
            let path = d.path.as_ref().ok_or_else(|| {
                ExperimentError::Invalid("libsvm_file requires dataset.path".into())
            })?;
            let text = fs::read_to_string(path).map_err(|e| in_file(path, &e))?;
            let rows = libsvm::parse(&text).map_err(|e| in_file(path, &e))?;
            let classes = class_count(&rows.labels);
            Dataset::new(rows.instances, rows.labels, rows.n_features, classes, &codec)?
        }
        DatasetKind::IdxFiles => {
            let path = d.path.as_ref().ok_or_else(|| {
                ExperimentError::Invalid("idx_files requires dataset.path".into())
            })?;
            let labels_path = d.labels_path.as_ref().ok_or_else(|| {
                ExperimentError::Invalid("idx_files requires dataset.labels_path".into())
            })?;
            let images_bytes = fs::read(path).map_err(|e| in_file(path, &e))?;
            let images = idx::parse_images(&images_bytes).map_err(|e| in_file(path, &e))?;
            let labels_bytes = fs::read(labels_path).map_err(|e| in_file(labels_path, &e))?;
            let labels =
                idx::parse_labels(&labels_bytes).map_err(|e| in_file(labels_path, &e))?;
            if images.count != labels.len() {
                return Err(ExperimentError::Invalid(format!(
                    "{} images but {} labels",
                    images.count,
                    labels.len()
                )));
            }
            let classes = class_count(&labels);
            let n_features = (images.rows * images.cols) as u32;
            Dataset::new(idx::to_instances(&images), labels, n_features, classes, &codec)?
        }
    };
    Ok(match d.subsample {
        Some(n) if n < ds.len() => {
            let mut rng = node_rng(d.data_seed, b"subsample", 0);
            let idx = partition::stratified_subsample(&ds.labels, ds.n_classes, n, &mut rng);
            ds.select(&idx)
        }
        _ => ds,
    })
}

fn class_count(labels: &[u32]) -> u32 {
    labels.iter().copied().max().map_or(2, |m| (m + 1).max(2))
}

/// Attach the offending file's path to a read or parse error.
fn in_file(path: &std::path::Path, err: &dyn std::fmt::Display) -> ExperimentError {
    ExperimentError::Invalid(format!("{}: {err}", path.display()))
}

/// Deterministic stratified holdout: returns (train, test).
pub fn holdout_split(ds: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let n_test = ((ds.len() as f64) * test_fraction.clamp(0.0, 0.9)).round() as usize;
    let mut rng = node_rng(seed, b"holdout", 0);
    let mut test_idx = partition::stratified_subsample(&ds.labels, ds.n_classes, n_test, &mut rng);
    test_idx.sort_unstable();
    let test_set: BTreeSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..ds.len()).filter(|i| !test_set.contains(i)).collect();
    (ds.select(&train_idx), ds.select(&test_idx))
}

pub struct FederatedRun {
    pub metrics: RunMetrics,
    pub world: World,
}

/// Full protocol run over the given training corpus.
pub fn run_federated(cfg: &RunConfig, train: &Dataset) -> Result<FederatedRun, ExperimentError> {
    let mut world = World::new(cfg, train)?;
    let metrics = world.run()?;
    Ok(FederatedRun { metrics, world })
}

/// Centralized reference arm: same corpus, same feature stream seed, same
/// quantization grid, no protocol.
pub fn run_plaintext(cfg: &RunConfig, train: &Dataset) -> Result<Forest, ExperimentError> {
    let codec = codec_for(cfg)?;
    let mut feature_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    Ok(train_plaintext(
        &train.instances,
        &train.labels,
        train.n_features,
        &cfg.boost,
        &codec,
        &mut feature_rng,
    )?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRound {
    pub round: usize,
    pub federated_accuracy: f64,
    pub federated_loss: f64,
    pub oracle_accuracy: f64,
    pub oracle_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Held-out test curves after each boosting round, both arms.
    pub rounds: Vec<ComparisonRound>,
    pub final_federated_accuracy: f64,
    pub final_oracle_accuracy: f64,
    /// Largest per-round |federated - oracle| test accuracy difference.
    pub max_accuracy_gap: f64,
    pub confusion_federated: Vec<Vec<u64>>,
    pub confusion_oracle: Vec<Vec<u64>>,
    pub federated: RunMetrics,
}

/// Truncate an ensemble to its first `rounds` boosting rounds.
fn prefix_forest(f: &Forest, rounds: usize) -> Forest {
    Forest {
        version: f.version,
        eta: f.eta,
        loss: f.loss,
        trees: f.trees[..rounds.min(f.trees.len())].to_vec(),
    }
}

/// Label-by-label tally: rows are true classes, columns predictions.
pub fn confusion_matrix(
    forest: &Forest,
    data: &[Instance],
    labels: &[u32],
    n_classes: u32,
) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes as usize]; n_classes as usize];
    for (x, &y) in data.iter().zip(labels) {
        let p = forest.predict_label(x).min(n_classes - 1);
        m[y as usize][p as usize] += 1;
    }
    m
}

pub fn accuracy_from_confusion(m: &[Vec<u64>]) -> f64 {
    let total: u64 = m.iter().flatten().sum();
    let hits: u64 = (0..m.len()).map(|i| m[i][i]).sum();
    hits as f64 / total.max(1) as f64
}

/// Train both arms on a shared holdout split and tabulate per-round test
/// accuracy and loss for each.
pub fn run_compare(cfg: &RunConfig, test_fraction: f64) -> Result<ComparisonReport, ExperimentError> {
    let full = load_dataset(cfg)?;
    let (train, test) = holdout_split(&full, test_fraction, cfg.dataset.data_seed);
    let fed = run_federated(cfg, &train)?;
    let oracle = run_plaintext(cfg, &train)?;
    let fed_forest = fed.world.forest();

    let mut rounds = Vec::new();
    let mut max_gap = 0.0f64;
    for r in 1..=cfg.boost.rounds {
        let pf = prefix_forest(fed_forest, r);
        let po = prefix_forest(&oracle, r);
        let row = ComparisonRound {
            round: r,
            federated_accuracy: pf.accuracy(&test.instances, &test.labels),
            federated_loss: pf.mean_loss(&test.instances, &test.labels),
            oracle_accuracy: po.accuracy(&test.instances, &test.labels),
            oracle_loss: po.mean_loss(&test.instances, &test.labels),
        };
        max_gap = max_gap.max((row.federated_accuracy - row.oracle_accuracy).abs());
        rounds.push(row);
    }

    Ok(ComparisonReport {
        final_federated_accuracy: fed_forest.accuracy(&test.instances, &test.labels),
        final_oracle_accuracy: oracle.accuracy(&test.instances, &test.labels),
        max_accuracy_gap: max_gap,
        confusion_federated: confusion_matrix(
            fed_forest,
            &test.instances,
            &test.labels,
            full.n_classes,
        ),
        confusion_oracle: confusion_matrix(&oracle, &test.instances, &test.labels, full.n_classes),
        rounds,
        federated: fed.metrics,
    })
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "round,federated_accuracy,federated_loss,oracle_accuracy,oracle_loss\n",
        );
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.round,
                r.federated_accuracy,
                r.federated_loss,
                r.oracle_accuracy,
                r.oracle_loss
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum SweepAxis {
    Users(Vec<usize>),
    Edges(Vec<usize>),
    Dropout(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Users(_) => "users",
            SweepAxis::Edges(_) => "edges",
            SweepAxis::Dropout(_) => "dropout",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub users: usize,
    pub edges: usize,
    pub dropout_rate: f64,
    pub ok: bool,
    pub error: Option<String>,
    pub messages: u64,
    pub bytes: u64,
    pub sim_time: f64,
    /// Mean payload bytes sent per user over the whole run.
    pub per_user_bytes: f64,
    /// Mean simulated time spent in the user role.
    pub per_user_time: f64,
    pub per_edge_bytes: f64,
    pub per_edge_time: f64,
    pub final_accuracy: Option<f64>,
}

fn sweep_point(cfg: &RunConfig, train: &Dataset) -> Result<SweepPoint, ExperimentError> {
    let run = run_federated(cfg, train)?;
    let world = &run.world;
    let n_users = cfg.topology.users.max(1);
    let n_edges = cfg.topology.edges.max(1);

    let user_bytes: u64 = world.users.keys().map(|&id| world.bus.bytes_from(id)).sum();
    let edge_bytes: u64 = world.edges.keys().map(|&id| world.bus.bytes_from(id)).sum();
    let mut user_cost = crate::sim::CostLedger::default();
    for u in world.users.values() {
        user_cost.merge(&u.cost);
    }
    let mut edge_cost = crate::sim::CostLedger::default();
    for e in world.edges.values() {
        edge_cost.merge(&e.cost);
    }

    Ok(SweepPoint {
        users: cfg.topology.users,
        edges: cfg.topology.edges,
        dropout_rate: cfg.dropout.rate,
        ok: true,
        error: None,
        messages: run.metrics.summary.total_messages,
        bytes: run.metrics.summary.total_bytes,
        sim_time: run.metrics.summary.sim_time,
        per_user_bytes: user_bytes as f64 / n_users as f64,
        per_user_time: user_cost.simulated_time(&cfg.cost, user_bytes) / n_users as f64,
        per_edge_bytes: edge_bytes as f64 / n_edges as f64,
        per_edge_time: edge_cost.simulated_time(&cfg.cost, edge_bytes) / n_edges as f64,
        final_accuracy: run.metrics.summary.final_accuracy,
    })
}

/// One run per axis value over a shared corpus; per-point failures are
/// recorded and the sweep continues.
pub fn run_sweep(base: &RunConfig, axis: &SweepAxis) -> Result<Vec<SweepPoint>, ExperimentError> {
    let train = load_dataset(base)?;
    let configs: Vec<RunConfig> = match axis {
        SweepAxis::Users(vals) => vals
            .iter()
            .map(|&n| {
                let mut c = base.clone();
                c.topology.users = n;
                c
            })
            .collect(),
        SweepAxis::Edges(vals) => vals
            .iter()
            .map(|&t| {
                let mut c = base.clone();
                c.topology.edges = t;
                c
            })
            .collect(),
        SweepAxis::Dropout(vals) => vals
            .iter()
            .map(|&r| {
                let mut c = base.clone();
                c.dropout.rate = r;
                c
            })
            .collect(),
    };
    Ok(configs
        .iter()
        .map(|cfg| {
            sweep_point(cfg, &train).unwrap_or_else(|e| SweepPoint {
                users: cfg.topology.users,
                edges: cfg.topology.edges,
                dropout_rate: cfg.dropout.rate,
                ok: false,
                error: Some(e.to_string()),
                messages: 0,
                bytes: 0,
                sim_time: 0.0,
                per_user_bytes: 0.0,
                per_user_time: 0.0,
                per_edge_bytes: 0.0,
                per_edge_time: 0.0,
                final_accuracy: None,
            })
        })
        .collect())
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "users,edges,dropout_rate,ok,messages,bytes,sim_time,per_user_bytes,per_user_time,per_edge_bytes,per_edge_time,final_accuracy\n",
    );
    for p in points {
        out.push_str(&format!(
            "{},{},{:.2},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{}\n",
            p.users,
            p.edges,
            p.dropout_rate,
            p.ok,
            p.messages,
            p.bytes,
            p.sim_time,
            p.per_user_bytes,
            p.per_user_time,
            p.per_edge_bytes,
            p.per_edge_time,
            p.final_accuracy.map_or(String::from(""), |a| format!("{a:.6}")),
        ));
    }
    out
}

/// Serialized model artifact; the format version rides in the forest itself.
pub fn model_json(forest: &Forest) -> String {
    serde_json::to_string_pretty(forest).expect("model serializes")
}

/// Write via a temporary sibling then rename, so readers never observe a
/// half-written artifact.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub config: PathBuf,
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
    pub model_json: PathBuf,
}

/// Emit the standard training artifact set under `dir`.
pub fn write_artifacts(
    dir: &Path,
    cfg: &RunConfig,
    run: &FederatedRun,
) -> Result<Artifacts, ExperimentError> {
    fs::create_dir_all(dir)?;
    let paths = Artifacts {
        config: dir.join("config.toml"),
        metrics_csv: dir.join("metrics.csv"),
        summary_json: dir.join("summary.json"),
        model_json: dir.join("model.json"),
    };
    write_atomic(&paths.config, &cfg.to_toml_string())?;
    write_atomic(&paths.metrics_csv, &run.metrics.to_csv())?;
    write_atomic(
        &paths.summary_json,
        &serde_json::to_string_pretty(&run.metrics.summary).expect("summary serializes"),
    )?;
    write_atomic(&paths.model_json, &model_json(run.world.forest()))?;
    Ok(paths)
}
