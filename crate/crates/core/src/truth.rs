//! Truth-inference baselines: majority voting and confusion-matrix EM in the
//! Dawid–Skene style.
//!
//! EM alternates between re-estimating class priors and per-worker 2x2
//! confusion matrices from the current label posteriors (M-step) and
//! updating the posteriors from those parameters (E-step). Posteriors are
//! initialized from majority-vote fractions.
//!
//! The M-step adds a pseudo-count of 3% of the item count to every
//! confusion cell and class-prior count. With few workers the unpenalized
//! likelihood peaks at degenerate solutions where a confusion cell runs to
//! zero and the posteriors lock in; a pseudo-count proportional to the data
//! shrinks each row toward chance by a size-independent fraction, which
//! blocks that collapse at every dataset scale while keeping the
//! observed-data log-likelihood ascent intact.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::CrowdDataset;
use crate::error::{Error, Result};

const SMOOTHING_FRACTION: f64 = 0.03;

/// Inferred labels plus per-worker reliability models.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// sample_id -> probability that the true label is 1.
    pub posterior: BTreeMap<String, f64>,
    pub hard_labels: BTreeMap<String, u8>,
    /// worker_id -> confusion matrix, row = true label, column = assigned
    /// label; rows sum to 1. Empty for majority vote.
    pub worker_models: BTreeMap<String, [[f64; 2]; 2]>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Observed-data log-likelihood after each iteration's M-step.
    pub log_likelihoods: Vec<f64>,
}

impl InferenceResult {
    pub fn write_labels_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sample_id,posterior,hard_label\n");
        for (id, p) in &self.posterior {
            out.push_str(&format!("{id},{p},{}\n", self.hard_labels[id]));
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn write_worker_models_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("worker_id,p00,p01,p10,p11\n");
        for (w, m) in &self.worker_models {
            out.push_str(&format!("{w},{},{},{},{}\n", m[0][0], m[0][1], m[1][0], m[1][1]));
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn hard_label(p: f64) -> u8 {
    // same tie rule as the confidence module: 0.5 resolves to 1
    if p >= 0.5 {
        1
    } else {
        0
    }
}

/// Per-sample fraction of workers voting 1, with the >0.5 / tie-to-1 rule.
pub fn majority_vote(ds: &CrowdDataset) -> InferenceResult {
    let mut votes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for trace in ds.traces() {
        for (sample_id, label) in &trace.entries {
            let e = votes.entry(sample_id.clone()).or_insert((0, 0));
            e.0 += *label as usize;
            e.1 += 1;
        }
    }
    let mut posterior = BTreeMap::new();
    let mut hard_labels = BTreeMap::new();
    for (id, (ones, total)) in votes {
        let p = ones as f64 / total as f64;
        hard_labels.insert(id.clone(), hard_label(p));
        posterior.insert(id, p);
    }
    InferenceResult {
        posterior,
        hard_labels,
        worker_models: BTreeMap::new(),
        iterations_run: 0,
        converged: true,
        log_likelihoods: Vec::new(),
    }
}

/// EM over class priors and per-worker confusion matrices.
///
/// Stops when the largest posterior change falls below `tol` or after
/// `max_iter` iterations.
pub fn dawid_skene(ds: &CrowdDataset, max_iter: usize, tol: f64) -> Result<InferenceResult> {
    if max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidConfig("tol must be positive".into()));
    }

    let sample_ids: Vec<String> = majority_vote(ds).posterior.keys().cloned().collect();
    let index: BTreeMap<&str, usize> = sample_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let workers: Vec<&str> = ds.worker_ids().collect();
    // annotations[j] = (sample index, assigned label) for worker j
    let annotations: Vec<Vec<(usize, u8)>> = workers
        .iter()
        .map(|w| {
            ds.worker_trace(w)
                .expect("worker ids come from the dataset")
                .entries
                .iter()
                .map(|(sid, l)| (index[sid.as_str()], *l))
                .collect()
        })
        .collect();

    let mv = majority_vote(ds);
    let mut q: Vec<f64> = sample_ids.iter().map(|id| mv.posterior[id]).collect();
    let n = q.len() as f64;
    let smoothing = SMOOTHING_FRACTION * n;

    let mut confusion = vec![[[0.5f64; 2]; 2]; workers.len()];
    let mut log_likelihoods = Vec::new();
    let mut iterations_run = 0;
    let mut converged = false;

    for _ in 0..max_iter {
        iterations_run += 1;

        // M-step: priors and confusion matrices from current posteriors,
        // additive smoothing on every count.
        let q1: f64 = q.iter().sum();
        let prior1 = (q1 + smoothing) / (n + 2.0 * smoothing);
        for (j, rows) in annotations.iter().enumerate() {
            let mut counts = [[smoothing; 2]; 2];
            for &(i, label) in rows {
                counts[1][label as usize] += q[i];
                counts[0][label as usize] += 1.0 - q[i];
            }
            for t in 0..2 {
                let total = counts[t][0] + counts[t][1];
                confusion[j][t][0] = counts[t][0] / total;
                confusion[j][t][1] = counts[t][1] / total;
            }
        }

        // Observed-data log-likelihood under the new parameters.
        let mut log_pos = vec![prior1.ln(); q.len()];
        let mut log_neg = vec![(1.0 - prior1).ln(); q.len()];
        for (j, rows) in annotations.iter().enumerate() {
            for &(i, label) in rows {
                log_pos[i] += confusion[j][1][label as usize].ln();
                log_neg[i] += confusion[j][0][label as usize].ln();
            }
        }
        let ll: f64 = log_pos
            .iter()
            .zip(&log_neg)
            .map(|(&lp, &ln_)| {
                let m = lp.max(ln_);
                m + ((lp - m).exp() + (ln_ - m).exp()).ln()
            })
            .sum();
        log_likelihoods.push(ll);

        // E-step: posterior per sample.
        let mut max_change = 0.0f64;
        for i in 0..q.len() {
            let m = log_pos[i].max(log_neg[i]);
            let p = (log_pos[i] - m).exp() / ((log_pos[i] - m).exp() + (log_neg[i] - m).exp());
            max_change = max_change.max((p - q[i]).abs());
            q[i] = p;
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }

    let mut posterior = BTreeMap::new();
    let mut hard_labels = BTreeMap::new();
    for (id, &p) in sample_ids.iter().zip(&q) {
        posterior.insert(id.clone(), p);
        hard_labels.insert(id.clone(), hard_label(p));
    }
    let worker_models = workers
        .iter()
        .zip(&confusion)
        .map(|(w, m)| (w.to_string(), *m))
        .collect();
    Ok(InferenceResult {
        posterior,
        hard_labels,
        worker_models,
        iterations_run,
        converged,
        log_likelihoods,
    })
}
