//! Temporal-aware memory confidence.
//!
//! For worker j at position i of their labeling order, the short-term memory
//! window holds the current item plus up to k most recently labeled items.
//! Attention over the window is a softmax of embedding dot products against
//! the current item; the memory confidence c_ij is the attention mass on
//! positively-labeled window entries, so c_ij estimates how strongly the
//! worker's recent context supports the positive label. Per-sample scores
//! are aggregated across workers by mean pooling.
//!
//! Embeddings are L2-normalized before the dot product, keeping logits in
//! [-1, 1]; a zero-norm embedding contributes logit 0.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::{CrowdDataset, WorkerTrace};
use crate::encoder::{l2_normalize, Embed};
use crate::error::{Error, Result};

/// The current item plus up to `k` preceding items of one worker's trace,
/// most recent first.
#[derive(Debug, Clone)]
pub struct MemoryWindow {
    pub current: (Vec<f64>, u8),
    pub history: Vec<(Vec<f64>, u8)>,
    pub k: usize,
}

impl MemoryWindow {
    pub fn len(&self) -> usize {
        1 + self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Labels in window order: current first, then history, most recent first.
    pub fn labels(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.current.1);
        out.extend(self.history.iter().map(|(_, l)| *l));
        out
    }
}

/// Builds the memory window at `position` of `trace`.
///
/// The window holds the entry at `position` as the current item plus
/// `min(position, k)` preceding entries; windows near the start of a trace
/// are truncated rather than padded.
pub fn short_term_memory(
    trace: &WorkerTrace,
    position: usize,
    k: usize,
    ds: &CrowdDataset,
) -> Result<MemoryWindow> {
    if position >= trace.len() {
        return Err(Error::Other(format!(
            "position {position} out of range for trace of length {}",
            trace.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("memory window capacity k must be >= 1".into()));
    }
    let item = |pos: usize| -> Result<(Vec<f64>, u8)> {
        let (sample_id, label) = &trace.entries[pos];
        let sample = ds
            .sample(sample_id)
            .ok_or_else(|| Error::InvalidDataset(format!("unknown sample {sample_id:?}")))?;
        Ok((sample.features.clone(), *label))
    };
    let current = item(position)?;
    let mut history = Vec::with_capacity(k.min(position));
    for offset in 1..=k.min(position) {
        history.push(item(position - offset)?);
    }
    Ok(MemoryWindow {
        current,
        history,
        k,
    })
}

/// Softmax attention over the window.
///
/// Index 0 is the current item (its logit is the normalized self dot
/// product, i.e. 1 unless the embedding is zero), index l >= 1 the l-th most
/// recent history item. Weights are nonnegative and sum to 1.
pub fn attention_weights(window: &MemoryWindow, embed: &dyn Embed) -> Vec<f64> {
    let current = l2_normalize(&embed.embed(&window.current.0));
    let mut logits = Vec::with_capacity(window.len());
    logits.push(dot(&current, &current));
    for (features, _) in &window.history {
        let e = l2_normalize(&embed.embed(features));
        logits.push(dot(&e, &current));
    }
    softmax(&logits)
}

/// Attention mass on positively-labeled window entries.
///
/// The weights sum to 1, so the mass itself is the probability; it is
/// computed as the positive share of the window's total mass, which keeps
/// unanimous windows at exactly 0 or 1 under floating point.
pub fn memory_confidence(window: &MemoryWindow, weights: &[f64]) -> f64 {
    positive_share(&window.labels(), weights)
}

fn positive_share(labels: &[u8], weights: &[f64]) -> f64 {
    let (mut pos, mut total) = (0.0, 0.0);
    for (&label, &w) in labels.iter().zip(weights) {
        total += w;
        if label == 1 {
            pos += w;
        }
    }
    pos / total
}

/// Mean pooling of one sample's per-worker confidences.
pub fn aggregate_confidence(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("aggregate_confidence".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Hard label from an aggregated confidence; the tie at exactly 0.5 resolves
/// to 1.
pub fn estimate_label(c: f64) -> u8 {
    if c >= 0.5 {
        1
    } else {
        0
    }
}

/// Per-worker and aggregated confidences with estimated labels for every
/// annotated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    /// (sample_id, worker_id) -> c_ij.
    pub per_worker: BTreeMap<(String, String), f64>,
    /// sample_id -> mean-pooled confidence.
    pub aggregated: BTreeMap<String, f64>,
    pub estimated_labels: BTreeMap<String, u8>,
}

impl ConfidenceTable {
    pub fn mean_aggregated(&self) -> f64 {
        if self.aggregated.is_empty() {
            return 0.0;
        }
        self.aggregated.values().sum::<f64>() / self.aggregated.len() as f64
    }

    /// Mean, over one worker's judgments, of the confidence in the label the
    /// worker actually assigned (c_ij for an assigned 1, 1 - c_ij for an
    /// assigned 0). Consistent workers score near 1, coin-flip workers near
    /// 0.5.
    pub fn worker_mean_judgment_confidence(&self, ds: &CrowdDataset) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for ((sample_id, worker_id), &c) in &self.per_worker {
            let label = ds
                .worker_trace(worker_id)
                .ok()
                .and_then(|t| t.label_of(sample_id))
                .unwrap_or(0);
            let in_label = if label == 1 { c } else { 1.0 - c };
            let e = sums.entry(worker_id.clone()).or_insert((0.0, 0));
            e.0 += in_label;
            e.1 += 1;
        }
        sums.into_iter()
            .map(|(w, (s, n))| (w, s / n as f64))
            .collect()
    }

    /// CSV export `sample_id,worker_id,c_ij`.
    pub fn write_per_worker_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sample_id,worker_id,c_ij\n");
        for ((sample_id, worker_id), c) in &self.per_worker {
            out.push_str(&format!("{sample_id},{worker_id},{c}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// CSV export `sample_id,c_i,estimated_label`.
    pub fn write_aggregated_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sample_id,c_i,estimated_label\n");
        for (sample_id, c) in &self.aggregated {
            out.push_str(&format!(
                "{sample_id},{c},{}\n",
                self.estimated_labels[sample_id]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Computes the full confidence table for a dataset under one embedding
/// function and window capacity `k`.
///
/// Each sample is embedded once and the normalized vectors are reused across
/// windows, which matches evaluating `attention_weights` window by window
/// because the embedding function is deterministic.
pub fn build_confidence_table(
    ds: &CrowdDataset,
    embed: &dyn Embed,
    k: usize,
) -> Result<ConfidenceTable> {
    if k == 0 {
        return Err(Error::InvalidConfig("memory window capacity k must be >= 1".into()));
    }
    let mut normalized: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for id in ds.annotated_ids() {
        let sample = ds.sample(id).expect("annotated ids exist");
        normalized.insert(id, l2_normalize(&embed.embed(&sample.features)));
    }

    let mut per_worker = BTreeMap::new();
    let mut per_sample: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for trace in ds.traces() {
        for position in 0..trace.len() {
            let (current_id, _) = &trace.entries[position];
            let current = &normalized[current_id.as_str()];
            let lo = position.saturating_sub(k);
            let mut logits = Vec::with_capacity(position - lo + 1);
            let mut labels = Vec::with_capacity(position - lo + 1);
            for pos in (lo..=position).rev() {
                let (sample_id, label) = &trace.entries[pos];
                logits.push(dot(&normalized[sample_id.as_str()], current));
                labels.push(*label);
            }
            let weights = softmax(&logits);
            let c = positive_share(&labels, &weights);
            per_worker.insert((current_id.clone(), trace.worker_id.clone()), c);
            per_sample.entry(current_id.clone()).or_default().push(c);
        }
    }

    let mut aggregated = BTreeMap::new();
    let mut estimated_labels = BTreeMap::new();
    for (sample_id, scores) in per_sample {
        let c = aggregate_confidence(&scores)?;
        estimated_labels.insert(sample_id.clone(), estimate_label(c));
        aggregated.insert(sample_id, c);
    }
    Ok(ConfidenceTable {
        per_worker,
        aggregated,
        estimated_labels,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
