//! Experiment workflows: config schema and the implementations behind the
//! `simulate`, `train`, `evaluate`, `sweep-memory`, and `confidence-report`
//! subcommands.
//!
//! Every command is a pure function of its config file and seeds; reruns
//! produce byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::confidence::build_confidence_table;
use crate::dataset::{load_dataset, CrowdDataset, Split};
use crate::dml::{history_to_jsonl, train, TrainConfig};
use crate::encoder::{
    forward, load_checkpoint, save_checkpoint, EncoderParams, EvalEncoder, Mode, RawFeatures,
};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, pearson_r, roc_auc, standardize, train_lr, worker_expertise, MetricStats,
    MetricsReport, DEFAULT_C_GRID,
};
use crate::synth::{build_synthetic_dataset, SynthConfig, SynthOutput, WorkerKind};
use crate::truth::{dawid_skene, majority_vote, InferenceResult};

const CONFIG_VERSION: u32 = 1;
const DS_MAX_ITER: usize = 500;
const DS_TOL: f64 = 1e-8;

/// Paths of a dataset stored in the three-file CSV format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub annotations: PathBuf,
    pub features: PathBuf,
    pub partition: PathBuf,
}

/// Experiment configuration file schema (JSON). Unknown keys are errors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Exactly one of `dataset` and `synth` must be present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Seeds for repeated evaluation runs; defaults to `[train.seed]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Memory sizes for `sweep-memory`; defaults to 3..=11.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_k: Option<Vec<usize>>,
    /// Penalty grid for the downstream classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_c_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_synth(synth: SynthConfig, train: TrainConfig) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            dataset: None,
            synth: Some(synth),
            train,
            seeds: None,
            sweep_k: None,
            lr_c_grid: None,
            out_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        match (&self.dataset, &self.synth) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "config must set exactly one of `dataset` and `synth`, found both".into(),
            )),
            (None, None) => Err(Error::InvalidConfig(
                "config must set exactly one of `dataset` and `synth`, found neither".into(),
            )),
            _ => Ok(()),
        }?;
        if let Some(synth) = &self.synth {
            synth.validate()?;
        }
        self.train.validate()?;
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(Error::InvalidConfig("seeds list must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Applies the `--seed` CLI override: the synth seed, the train seed, and
    /// the seeds list all become `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(synth) = &mut self.synth {
            synth.seed = seed;
        }
        self.train.seed = seed;
        self.seeds = Some(vec![seed]);
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.train.seed])
    }

    pub fn c_grid(&self) -> Vec<f64> {
        self.lr_c_grid
            .clone()
            .unwrap_or_else(|| DEFAULT_C_GRID.to_vec())
    }

    pub fn sweep_k_values(&self) -> Vec<usize> {
        self.sweep_k.clone().unwrap_or_else(|| (3..=11).collect())
    }
}

/// A dataset ready for experiments, with generator metadata when synthetic.
pub struct LoadedData {
    pub dataset: CrowdDataset,
    pub synth: Option<SynthOutput>,
}

pub fn acquire_dataset(cfg: &ExperimentConfig) -> Result<LoadedData> {
    match (&cfg.dataset, &cfg.synth) {
        (Some(paths), None) => Ok(LoadedData {
            dataset: load_dataset(&paths.annotations, &paths.features, &paths.partition)?,
            synth: None,
        }),
        (None, Some(synth_cfg)) => {
            let out = build_synthetic_dataset(synth_cfg)?;
            Ok(LoadedData {
                dataset: out.dataset.clone(),
                synth: Some(out),
            })
        }
        _ => Err(Error::InvalidConfig(
            "config must set exactly one of `dataset` and `synth`".into(),
        )),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write_bytes(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: u32,
    synth: &'a SynthConfig,
    kappa: f64,
    workers: Vec<ManifestWorker>,
}

#[derive(Serialize)]
struct ManifestWorker {
    worker_id: String,
    kind: WorkerKind,
    flip_probability: f64,
    seed: u64,
}

/// Generates a synthetic dataset and writes the three CSV files plus a
/// manifest with the config and the achieved Fleiss kappa.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let synth_cfg = cfg.synth.as_ref().ok_or_else(|| {
        Error::InvalidConfig("simulate requires a `synth` section".into())
    })?;
    let out = build_synthetic_dataset(synth_cfg)?;
    ensure_out_dir(out_dir)?;
    let ann = out_dir.join("annotations.csv");
    let feats = out_dir.join("features.csv");
    let part = out_dir.join("partition.csv");
    out.dataset.write_csv(&ann, &feats, &part)?;

    let manifest = Manifest {
        version: CONFIG_VERSION,
        synth: synth_cfg,
        kappa: out.kappa,
        workers: out
            .profiles
            .iter()
            .map(|(id, p)| ManifestWorker {
                worker_id: id.clone(),
                kind: p.kind,
                flip_probability: p.flip_probability,
                seed: p.seed,
            })
            .collect(),
    };
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    write_bytes(&manifest_path, &format!("{json}\n"))?;
    Ok(vec![ann, feats, part, manifest_path])
}

/// Eval-mode embeddings of every sample, keyed by id.
pub fn embed_all(ds: &CrowdDataset, params: &EncoderParams) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for sample in ds.samples() {
        out.insert(sample.id.clone(), forward(params, &sample.features, Mode::Eval)?);
    }
    Ok(out)
}

fn embeddings_csv(embeddings: &BTreeMap<String, Vec<f64>>) -> String {
    let dim = embeddings.values().next().map(|e| e.len()).unwrap_or(0);
    let mut out = String::from("sample_id");
    for m in 0..dim {
        out.push_str(&format!(",e{m}"));
    }
    out.push('\n');
    for (id, emb) in embeddings {
        out.push_str(id);
        for v in emb {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Trains the encoder and writes checkpoint, history, embeddings, and the
/// final confidence tables.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = acquire_dataset(cfg)?;
    let (params, history) = train(&data.dataset, &cfg.train)?;
    ensure_out_dir(out_dir)?;

    let ckpt = out_dir.join("checkpoint.txt");
    save_checkpoint(&params, &ckpt)?;

    let hist = out_dir.join("history.jsonl");
    write_bytes(&hist, &history_to_jsonl(&history))?;

    let emb_path = out_dir.join("embeddings.csv");
    let embeddings = embed_all(&data.dataset, &params)?;
    write_bytes(&emb_path, &embeddings_csv(&embeddings))?;

    let table = build_confidence_table(&data.dataset, &EvalEncoder(&params), cfg.train.memory_k)?;
    let cij = out_dir.join("confidence_per_worker.csv");
    table.write_per_worker_csv(&cij)?;
    let ci = out_dir.join("confidence_aggregated.csv");
    table.write_aggregated_csv(&ci)?;

    Ok(vec![ckpt, hist, emb_path, cij, ci])
}

fn test_truth(ds: &CrowdDataset) -> Result<(Vec<&str>, Vec<u8>)> {
    let test_ids = ds.split_ids(Split::Test);
    if test_ids.is_empty() {
        return Err(Error::InvalidDataset(
            "evaluation needs a test split with expert labels".into(),
        ));
    }
    let truth = test_ids
        .iter()
        .map(|id| ds.sample(id).expect("valid id").expert_label.expect("test sample"))
        .collect();
    Ok((test_ids, truth))
}

/// Downstream protocol for a representation: logistic regression on the
/// train-split embeddings under the given labels, penalty picked on the
/// validation split, accuracy/AUC on the test split against expert labels.
pub fn downstream_metrics(
    ds: &CrowdDataset,
    vectors: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, u8>,
    c_grid: &[f64],
) -> Result<(f64, f64)> {
    let train_ids = ds.split_ids(Split::Train);
    let val_ids = ds.split_ids(Split::Validation);
    let (test_ids, truth) = test_truth(ds)?;
    let rows = |ids: &[&str]| -> Vec<Vec<f64>> {
        ids.iter().map(|id| vectors[*id].clone()).collect()
    };
    let train_y: Vec<u8> = train_ids.iter().map(|id| labels[*id]).collect();
    let val_y: Vec<u8> = val_ids.iter().map(|id| labels[*id]).collect();
    let clf = train_lr(&rows(&train_ids), &train_y, c_grid, &rows(&val_ids), &val_y, 0)?;
    let test_x = rows(&test_ids);
    let preds: Vec<u8> = test_x.iter().map(|r| clf.predict(r)).collect();
    let scores: Vec<f64> = test_x.iter().map(|r| clf.score(r)).collect();
    Ok((accuracy(&preds, &truth)?, roc_auc(&scores, &truth)?))
}

/// Trains with `seed` and runs the downstream protocol on the learned
/// embeddings, labeling train/validation samples with the final confidence
/// table's estimated labels (or majority vote in that mode).
pub fn train_and_evaluate(
    ds: &CrowdDataset,
    train_cfg: &TrainConfig,
    seed: u64,
    c_grid: &[f64],
) -> Result<(f64, f64)> {
    let mut cfg = train_cfg.clone();
    cfg.seed = seed;
    let (params, _) = train(ds, &cfg)?;
    evaluate_params(ds, &cfg, &params, c_grid)
}

/// Downstream evaluation of an already-trained encoder under `cfg`'s
/// labeling mode.
pub fn evaluate_params(
    ds: &CrowdDataset,
    cfg: &TrainConfig,
    params: &EncoderParams,
    c_grid: &[f64],
) -> Result<(f64, f64)> {
    let labels = match cfg.label_mode {
        crate::dml::LabelMode::TemporalConfidence => {
            build_confidence_table(ds, &EvalEncoder(params), cfg.memory_k)?.estimated_labels
        }
        crate::dml::LabelMode::MajorityVote => majority_vote(ds).hard_labels,
    };
    let embeddings = embed_all(ds, params)?;
    downstream_metrics(ds, &embeddings, &labels, c_grid)
}

/// Downstream protocol for a truth-inference baseline: logistic regression
/// over the raw features with the inferred hard labels.
pub fn truth_baseline_metrics(
    ds: &CrowdDataset,
    inference: &InferenceResult,
    c_grid: &[f64],
) -> Result<(f64, f64)> {
    let vectors: BTreeMap<String, Vec<f64>> = ds
        .samples()
        .map(|s| (s.id.clone(), s.features.clone()))
        .collect();
    downstream_metrics(ds, &vectors, &inference.hard_labels, c_grid)
}

fn stats_pair(values: Vec<(f64, f64)>, n_test: usize) -> MetricsReport {
    let (accs, aucs): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
    MetricsReport {
        accuracy: MetricStats::from_values(accs),
        auc: MetricStats::from_values(aucs),
        n_test,
    }
}

/// Evaluates the confidence-weighted model plus the majority-vote and EM
/// baselines over the configured seeds and writes `metrics.json`.
///
/// With `--checkpoint`, the stored encoder is evaluated as-is for every seed
/// (no retraining); otherwise each seed retrains from scratch.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let data = acquire_dataset(cfg)?;
    let ds = &data.dataset;
    let (test_ids, _) = test_truth(ds)?;
    let n_test = test_ids.len();
    let c_grid = cfg.c_grid();
    let seeds = cfg.seeds();

    let fixed_params = match checkpoint {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };

    let mut weighted = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let pair = match &fixed_params {
            Some(params) => evaluate_params(ds, &cfg.train, params, &c_grid)?,
            None => train_and_evaluate(ds, &cfg.train, seed, &c_grid)?,
        };
        weighted.push(pair);
    }

    let mv = majority_vote(ds);
    let mv_pair = truth_baseline_metrics(ds, &mv, &c_grid)?;
    let em = dawid_skene(ds, DS_MAX_ITER, DS_TOL)?;
    let em_pair = truth_baseline_metrics(ds, &em, &c_grid)?;

    let mut report: BTreeMap<&str, MetricsReport> = BTreeMap::new();
    report.insert("crowdmem", stats_pair(weighted, n_test));
    report.insert("majority_vote", stats_pair(vec![mv_pair; seeds.len()], n_test));
    report.insert("dawid_skene", stats_pair(vec![em_pair; seeds.len()], n_test));

    ensure_out_dir(out_dir)?;
    mv.write_labels_csv(&out_dir.join("majority_vote_labels.csv"))?;
    em.write_labels_csv(&out_dir.join("dawid_skene_labels.csv"))?;
    em.write_worker_models_csv(&out_dir.join("dawid_skene_workers.csv"))?;
    let path = out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    write_bytes(&path, &format!("{json}\n"))?;
    Ok(path)
}

/// Retrains over a grid of memory sizes and writes a per-k accuracy table.
pub fn cmd_sweep_memory(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let k_values = cfg.sweep_k_values();
    if k_values.is_empty() {
        return Err(Error::InvalidConfig("sweep_k must not be empty".into()));
    }
    if let Some(&bad) = k_values.iter().find(|&&k| k == 0) {
        return Err(Error::InvalidConfig(format!(
            "memory window capacity must be >= 1, sweep_k contains {bad}"
        )));
    }
    let data = acquire_dataset(cfg)?;
    let c_grid = cfg.c_grid();
    let seeds = cfg.seeds();

    let mut rows = String::from("k,mean_accuracy,std_accuracy,mean_auc,std_auc\n");
    for &k in &k_values {
        let mut cfg_k = cfg.train.clone();
        cfg_k.memory_k = k;
        let mut pairs = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            pairs.push(train_and_evaluate(&data.dataset, &cfg_k, seed, &c_grid)?);
        }
        let report = stats_pair(pairs, 0);
        rows.push_str(&format!(
            "{k},{},{},{},{}\n",
            report.accuracy.mean, report.accuracy.std, report.auc.mean, report.auc.std
        ));
    }
    ensure_out_dir(out_dir)?;
    let path = out_dir.join("sweep_memory.csv");
    write_bytes(&path, &rows)?;
    Ok(path)
}

#[derive(Serialize)]
struct ConfidenceReportSummary {
    pearson_r: f64,
    n_workers: usize,
}

/// Per-worker averaged judgment confidence against per-worker downstream
/// expertise, both standardized; writes the scatter CSV and the Pearson r.
pub fn cmd_confidence_report(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let data = acquire_dataset(cfg)?;
    let ds = &data.dataset;
    let c_grid = cfg.c_grid();

    let table = match checkpoint {
        Some(path) => {
            let params = load_checkpoint(path)?;
            build_confidence_table(ds, &EvalEncoder(&params), cfg.train.memory_k)?
        }
        None => build_confidence_table(ds, &RawFeatures, cfg.train.memory_k)?,
    };
    let mean_conf = table.worker_mean_judgment_confidence(ds);
    let expertise = worker_expertise(ds, &c_grid)?;

    let worker_ids: Vec<&String> = mean_conf.keys().collect();
    let conf_values: Vec<f64> = worker_ids.iter().map(|w| mean_conf[*w]).collect();
    let acc_values: Vec<f64> = worker_ids.iter().map(|w| expertise[*w]).collect();
    let std_conf = standardize(&conf_values)?;
    let std_acc = standardize(&acc_values)?;
    let r = pearson_r(&std_conf, &std_acc)?;

    let random_workers: std::collections::BTreeSet<&str> = data
        .synth
        .as_ref()
        .map(|s| {
            s.profiles
                .iter()
                .filter(|(_, p)| p.kind == WorkerKind::Random)
                .map(|(id, _)| id.as_str())
                .collect()
        })
        .unwrap_or_default();

    let mut csv = String::from("worker_id,std_confidence,std_accuracy,is_random_worker\n");
    for ((w, c), a) in worker_ids.iter().zip(&std_conf).zip(&std_acc) {
        csv.push_str(&format!(
            "{w},{c},{a},{}\n",
            random_workers.contains(w.as_str())
        ));
    }

    ensure_out_dir(out_dir)?;
    let csv_path = out_dir.join("confidence_report.csv");
    write_bytes(&csv_path, &csv)?;
    let summary = ConfidenceReportSummary {
        pearson_r: r,
        n_workers: worker_ids.len(),
    };
    let json_path = out_dir.join("confidence_report.json");
    let json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    write_bytes(&json_path, &format!("{json}\n"))?;
    Ok(vec![csv_path, json_path])
}
