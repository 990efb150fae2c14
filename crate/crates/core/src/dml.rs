//! Group-based metric learning with confidence weighting.
//!
//! A group pairs two estimated-positive samples with n estimated-negative
//! samples. Training maximizes, per group, the softmax likelihood of
//! retrieving the paired positive from the candidate set given the anchor,
//! with logits `eta * c * r` where r is the cosine similarity to the anchor
//! and c is each candidate's aggregated confidence in its estimated label.
//! The loss is the mean negative log likelihood over groups plus the L2
//! penalty on encoder weights.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::build_confidence_table;
use crate::dataset::{CrowdDataset, Split};
use crate::encoder::{
    apply_update, backward, cosine_similarity, forward, forward_cached, init_params, EncoderConfig,
    EncoderParams, EvalEncoder, GroupTerm, Mode, OptimizerKind, OptimizerState, RawFeatures,
};
use crate::error::{Error, Result};
use crate::split_seed;
use crate::truth::majority_vote;

/// Comparison unit: an anchor positive, a paired positive, and n negatives,
/// with each member's confidence in its estimated label.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub anchor_positive: String,
    pub paired_positive: String,
    pub negatives: Vec<String>,
    pub confidences: BTreeMap<String, f64>,
}

impl Group {
    /// Candidate ids in scoring order: the paired positive first, then the
    /// negatives.
    pub fn candidates(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.paired_positive.as_str())
            .chain(self.negatives.iter().map(|s| s.as_str()))
    }
}

/// Which labels drive group sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Estimated labels from the aggregated temporal-aware confidence, with
    /// a periodic rebuild against the current encoder.
    #[default]
    TemporalConfidence,
    /// Majority-vote hard labels with all confidences forced to 1 (the
    /// unweighted baseline).
    MajorityVote,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of negatives per group.
    pub tuplet_size: usize,
    /// Softmax smoothing multiplier.
    pub eta: f64,
    pub epochs: usize,
    pub groups_per_epoch: usize,
    /// Groups per optimizer step.
    pub batch_groups: usize,
    /// Rebuild the confidence table with the current encoder every this many
    /// epochs (temporal mode only).
    pub confidence_refresh_period: usize,
    /// Short-term memory window capacity.
    pub memory_k: usize,
    pub label_mode: LabelMode,
    /// When false, all loss confidences are forced to 1 while labels still
    /// come from `label_mode`.
    pub confidence_weighting: bool,
    pub optimizer: OptimizerKind,
    /// Return the parameters of the epoch with the highest validation
    /// accuracy against the estimated labels instead of the final epoch.
    pub select_best_epoch: bool,
    /// Linear learning-rate decay target: the last epoch runs at
    /// `learning_rate * lr_final_fraction`. 1.0 keeps the rate constant.
    pub lr_final_fraction: f64,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tuplet_size: 5,
            eta: 10.0,
            epochs: 30,
            groups_per_epoch: 200,
            batch_groups: 10,
            confidence_refresh_period: 5,
            memory_k: 7,
            label_mode: LabelMode::TemporalConfidence,
            confidence_weighting: true,
            optimizer: OptimizerKind::Adadelta,
            select_best_epoch: true,
            lr_final_fraction: 1.0,
            encoder: EncoderConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tuplet_size == 0 {
            return Err(Error::InvalidConfig("tuplet_size must be >= 1".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        if self.groups_per_epoch == 0 || self.batch_groups == 0 {
            return Err(Error::InvalidConfig(
                "groups_per_epoch and batch_groups must be >= 1".into(),
            ));
        }
        if self.confidence_refresh_period == 0 {
            return Err(Error::InvalidConfig(
                "confidence_refresh_period must be >= 1".into(),
            ));
        }
        if self.memory_k == 0 {
            return Err(Error::InvalidConfig("memory_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::InvalidConfig(
                "lr_final_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `count` groups. Members are drawn uniformly without replacement
/// within each group; groups are independent.
pub fn sample_groups(
    labels: &BTreeMap<String, u8>,
    confidences: &BTreeMap<String, f64>,
    count: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Group>> {
    let positives: Vec<&String> = labels.iter().filter(|(_, &l)| l == 1).map(|(id, _)| id).collect();
    let negatives: Vec<&String> = labels.iter().filter(|(_, &l)| l == 0).map(|(id, _)| id).collect();
    if positives.len() < 2 {
        return Err(Error::InsufficientClass {
            class: "positive".into(),
            needed: 2,
            available: positives.len(),
        });
    }
    if negatives.len() < n {
        return Err(Error::InsufficientClass {
            class: "negative".into(),
            needed: n,
            available: negatives.len(),
        });
    }
    let conf_of = |id: &str| confidences.get(id).copied().unwrap_or(1.0);

    let mut groups = Vec::with_capacity(count);
    let mut neg_indices: Vec<usize> = (0..negatives.len()).collect();
    for _ in 0..count {
        let a = rng.random_range(0..positives.len());
        let mut b = rng.random_range(0..positives.len() - 1);
        if b >= a {
            b += 1;
        }
        // partial Fisher-Yates: the first n entries become the negatives
        for t in 0..n {
            let pick = rng.random_range(t..neg_indices.len());
            neg_indices.swap(t, pick);
        }
        let anchor = positives[a].clone();
        let paired = positives[b].clone();
        let negs: Vec<String> = neg_indices[..n].iter().map(|&i| negatives[i].clone()).collect();
        let mut conf = BTreeMap::new();
        conf.insert(anchor.clone(), conf_of(&anchor));
        conf.insert(paired.clone(), conf_of(&paired));
        for id in &negs {
            conf.insert(id.clone(), conf_of(id));
        }
        groups.push(Group {
            anchor_positive: anchor,
            paired_positive: paired,
            negatives: negs,
            confidences: conf,
        });
    }
    Ok(groups)
}

/// Softmax probabilities over the group's candidates (paired positive first,
/// negatives after), each with logit `eta * c * r`.
pub fn candidate_probabilities(
    g: &Group,
    embeddings: &BTreeMap<String, Vec<f64>>,
    eta: f64,
) -> Vec<f64> {
    let anchor = &embeddings[&g.anchor_positive];
    let logits: Vec<f64> = g
        .candidates()
        .map(|id| {
            let r = cosine_similarity(anchor, &embeddings[id]);
            eta * g.confidences[id] * r
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Probability of retrieving the paired positive from the candidate set.
pub fn group_likelihood(g: &Group, embeddings: &BTreeMap<String, Vec<f64>>, eta: f64) -> f64 {
    candidate_probabilities(g, embeddings, eta)[0]
}

/// Mean negative log likelihood over groups.
pub fn group_loss(groups: &[Group], embeddings: &BTreeMap<String, Vec<f64>>, eta: f64) -> f64 {
    assert!(!groups.is_empty(), "group_loss needs at least one group");
    let total: f64 = groups
        .iter()
        .map(|g| -group_likelihood(g, embeddings, eta).ln())
        .sum();
    total / groups.len() as f64
}

/// One line of the training history.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc_estimated: f64,
    pub mean_confidence: f64,
    pub confidence_refresh: bool,
}

/// Estimated labels and loss confidences currently supervising training.
struct Supervision {
    labels: BTreeMap<String, u8>,
    /// Confidence in the estimated label: c for estimated positives,
    /// 1 - c for estimated negatives.
    conf_in_label: BTreeMap<String, f64>,
    mean_confidence: f64,
}

impl Supervision {
    fn from_confidence(ds: &CrowdDataset, embed: &dyn crate::encoder::Embed, k: usize, weighted: bool) -> Result<Self> {
        let table = build_confidence_table(ds, embed, k)?;
        let labels = table.estimated_labels.clone();
        let conf_in_label = table
            .aggregated
            .iter()
            .map(|(id, &c)| {
                let in_label = if !weighted {
                    1.0
                } else if labels[id] == 1 {
                    c
                } else {
                    1.0 - c
                };
                (id.clone(), in_label)
            })
            .collect();
        Ok(Supervision {
            labels,
            conf_in_label,
            mean_confidence: table.mean_aggregated(),
        })
    }

    fn from_majority_vote(ds: &CrowdDataset) -> Self {
        let mv = majority_vote(ds);
        let conf_in_label = mv.hard_labels.keys().map(|id| (id.clone(), 1.0)).collect();
        Supervision {
            labels: mv.hard_labels,
            conf_in_label,
            mean_confidence: 1.0,
        }
    }

    fn restrict(&self, ids: &[&str]) -> (BTreeMap<String, u8>, BTreeMap<String, f64>) {
        let labels = ids
            .iter()
            .map(|id| (id.to_string(), self.labels[*id]))
            .collect();
        let confs = ids
            .iter()
            .map(|id| (id.to_string(), self.conf_in_label[*id]))
            .collect();
        (labels, confs)
    }
}

/// Cosine nearest-centroid accuracy on the validation split against the
/// current estimated labels; a cheap per-epoch monitor, not the downstream
/// classifier.
fn centroid_val_accuracy(
    ds: &CrowdDataset,
    params: &EncoderParams,
    supervision: &Supervision,
    train_ids: &[&str],
    val_ids: &[&str],
) -> Result<f64> {
    let mut centroids = [vec![0.0; params.embedding_dim], vec![0.0; params.embedding_dim]];
    let mut counts = [0usize; 2];
    for id in train_ids {
        let emb = forward(params, &ds.sample(id).expect("valid id").features, Mode::Eval)?;
        let class = supervision.labels[*id] as usize;
        for (c, e) in centroids[class].iter_mut().zip(&emb) {
            *c += e;
        }
        counts[class] += 1;
    }
    for class in 0..2 {
        if counts[class] > 0 {
            let inv = 1.0 / counts[class] as f64;
            centroids[class].iter_mut().for_each(|c| *c *= inv);
        }
    }
    let mut agree = 0usize;
    for id in val_ids {
        let emb = forward(params, &ds.sample(id).expect("valid id").features, Mode::Eval)?;
        let pred = if counts[0] == 0 {
            1
        } else if counts[1] == 0 {
            0
        } else {
            let s0 = cosine_similarity(&emb, &centroids[0]);
            let s1 = cosine_similarity(&emb, &centroids[1]);
            (s1 >= s0) as u8
        };
        if pred == supervision.labels[*id] {
            agree += 1;
        }
    }
    Ok(agree as f64 / val_ids.len() as f64)
}

// stream indices under the training master seed
const STREAM_INIT: u64 = 0;
const STREAM_DROPOUT: u64 = 1;
const STREAM_EPOCH_BASE: u64 = 2;

/// Trains the encoder on a dataset.
///
/// Epoch 0 estimates labels and confidences from raw-feature cosine
/// attention; every `confidence_refresh_period` epochs the table is rebuilt
/// with the current encoder. Each epoch resamples groups from the current
/// estimated labels and takes one optimizer step per `batch_groups` groups.
/// The run is a pure function of `(ds, cfg)`.
pub fn train(ds: &CrowdDataset, cfg: &TrainConfig) -> Result<(EncoderParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mut enc_cfg = cfg.encoder.clone();
    if enc_cfg.input_dim == 0 {
        enc_cfg.input_dim = ds.feature_dim();
    } else if enc_cfg.input_dim != ds.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "encoder input_dim {} != dataset feature dim {}",
            enc_cfg.input_dim,
            ds.feature_dim()
        )));
    }
    enc_cfg.seed = split_seed(cfg.seed, STREAM_INIT);
    enc_cfg.validate()?;

    let train_ids = ds.split_ids(Split::Train);
    let val_ids = ds.split_ids(Split::Validation);
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(Error::InvalidDataset(
            "training needs nonempty train and validation splits".into(),
        ));
    }

    let mut params = init_params(&enc_cfg)?;
    let mut opt_state = OptimizerState::new(&params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, STREAM_DROPOUT));

    let mut supervision = match cfg.label_mode {
        LabelMode::TemporalConfidence => {
            Supervision::from_confidence(ds, &RawFeatures, cfg.memory_k, cfg.confidence_weighting)?
        }
        LabelMode::MajorityVote => Supervision::from_majority_vote(ds),
    };

    let features_of = |id: &str| -> &[f64] { &ds.sample(id).expect("valid id").features };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, EncoderParams)> = None;
    for epoch in 0..cfg.epochs {
        let refresh = cfg.label_mode == LabelMode::TemporalConfidence
            && epoch > 0
            && epoch % cfg.confidence_refresh_period == 0;
        if refresh {
            supervision = Supervision::from_confidence(
                ds,
                &EvalEncoder(&params),
                cfg.memory_k,
                cfg.confidence_weighting,
            )?;
        }

        let lr = if cfg.epochs > 1 {
            let progress = epoch as f64 / (cfg.epochs - 1) as f64;
            enc_cfg.learning_rate * (1.0 - (1.0 - cfg.lr_final_fraction) * progress)
        } else {
            enc_cfg.learning_rate
        };

        let (train_labels, train_confs) = supervision.restrict(&train_ids);
        let mut group_rng =
            ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, STREAM_EPOCH_BASE + epoch as u64));
        let groups = sample_groups(
            &train_labels,
            &train_confs,
            cfg.groups_per_epoch,
            cfg.tuplet_size,
            &mut group_rng,
        )?;

        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in groups.chunks(cfg.batch_groups) {
            let mut terms = Vec::with_capacity(chunk.len());
            for g in chunk {
                let anchor = forward_cached(
                    &params,
                    features_of(&g.anchor_positive),
                    Mode::Train {
                        dropout_rate: enc_cfg.dropout_rate,
                        rng: &mut dropout_rng,
                    },
                )?;
                let mut candidates = Vec::with_capacity(1 + g.negatives.len());
                let mut candidate_conf = Vec::with_capacity(1 + g.negatives.len());
                for id in g.candidates() {
                    candidates.push(forward_cached(
                        &params,
                        features_of(id),
                        Mode::Train {
                            dropout_rate: enc_cfg.dropout_rate,
                            rng: &mut dropout_rng,
                        },
                    )?);
                    candidate_conf.push(g.confidences[id]);
                }
                terms.push(GroupTerm {
                    anchor,
                    candidates,
                    candidate_conf,
                    target: 0,
                    eta: cfg.eta,
                });
            }
            let (loss, grads) = backward(&params, &terms, enc_cfg.l2_scale);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("batch loss {loss} over {} groups", chunk.len()),
                });
            }
            apply_update(&mut params, &grads, &mut opt_state, cfg.optimizer, lr);
            loss_sum += loss;
            n_batches += 1;
        }

        let val_acc = centroid_val_accuracy(ds, &params, &supervision, &train_ids, &val_ids)?;
        if cfg.select_best_epoch && best.as_ref().map_or(true, |(acc, _)| val_acc >= *acc) {
            best = Some((val_acc, params.clone()));
        }
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / n_batches.max(1) as f64,
            val_acc_estimated: val_acc,
            mean_confidence: supervision.mean_confidence,
            confidence_refresh: refresh,
        });
    }
    if let Some((_, selected)) = best {
        params = selected;
    }
    Ok((params, history))
}

/// Serializes the history as JSON lines, one record per epoch.
pub fn history_to_jsonl(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for record in history {
        out.push_str(&serde_json::to_string(record).expect("finite fields"));
        out.push('\n');
    }
    out
}
