//! Metrics (accuracy, ROC-AUC, Fleiss' kappa, Pearson r, standardization)
//! and the downstream L2-regularized logistic-regression classifier.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{CrowdDataset, Split};
use crate::error::{Error, Result};

/// Fraction of positions where `pred` and `truth` agree.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("accuracy".into()));
    }
    let agree = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / pred.len() as f64)
}

/// ROC-AUC as the Mann–Whitney rank statistic: the probability that a random
/// positive outscores a random negative, ties counted 0.5. Computed in
/// O(n log n) via midranks.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch(scores.len(), truth.len()));
    }
    let n_pos = truth.iter().filter(|&&l| l == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(
            "roc_auc needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied scores share the midrank
        let midrank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if truth[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fleiss' kappa over the annotated samples of a dataset.
///
/// Every annotated item must have the same number of raters, which the
/// dataset invariants guarantee (every worker labels every train/validation
/// sample).
pub fn fleiss_kappa(ds: &CrowdDataset) -> Result<f64> {
    let n_raters = ds.n_workers();
    if n_raters < 2 {
        return Err(Error::UndefinedAgreement("need at least 2 raters".into()));
    }
    let mut counts: BTreeMap<&str, usize> = ds.annotated_ids().into_iter().map(|id| (id, 0)).collect();
    for trace in ds.traces() {
        for (sample_id, label) in &trace.entries {
            if *label == 1 {
                *counts.get_mut(sample_id.as_str()).expect("validated trace") += 1;
            }
        }
    }
    let n_items = counts.len();
    if n_items == 0 {
        return Err(Error::EmptyInput("fleiss_kappa".into()));
    }
    let r = n_raters as f64;
    let mut p_bar = 0.0;
    let mut frac_pos = 0.0;
    for &ones in counts.values() {
        let ones = ones as f64;
        let zeros = r - ones;
        p_bar += (ones * (ones - 1.0) + zeros * (zeros - 1.0)) / (r * (r - 1.0));
        frac_pos += ones / r;
    }
    p_bar /= n_items as f64;
    frac_pos /= n_items as f64;
    let p_e = frac_pos * frac_pos + (1.0 - frac_pos) * (1.0 - frac_pos);
    if p_e == 1.0 {
        return Err(Error::UndefinedAgreement(
            "all raters always assign a single class; chance agreement is 1".into(),
        ));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("pearson_r needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("pearson_r input".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Shifts to zero mean and scales to unit sample (n-1) standard deviation.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::EmptyInput("standardize needs at least 2 values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::ZeroVariance("standardize input".into()));
    }
    let std = var.sqrt();
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Default penalty-strength grid for the logistic regression, 1e-2 to 1e4.
pub const DEFAULT_C_GRID: [f64; 7] = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4];

const LR_ITERS: usize = 2000;
const LR_STEP: f64 = 0.1;

/// L2-regularized logistic regression over standardized inputs.
///
/// Trained by full-batch gradient descent (2000 iterations, step 0.1) on the
/// objective `mean cross-entropy + ||w||^2 / (2C)`; inputs are standardized
/// with training-set statistics that the classifier carries for prediction.
#[derive(Debug, Clone)]
pub struct LRClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LRClassifier {
    /// P(label = 1 | x).
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut z = self.bias;
        for ((&xi, &m), (&s, &w)) in x
            .iter()
            .zip(&self.mean)
            .zip(self.scale.iter().zip(&self.weights))
        {
            z += w * (xi - m) / s;
        }
        sigmoid(z)
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        if self.score(x) >= 0.5 {
            1
        } else {
            0
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn fit_lr_fixed_c(x: &[Vec<f64>], y: &[u8], c: f64, mean: &[f64], scale: &[f64]) -> LRClassifier {
    let dim = mean.len();
    let n = x.len() as f64;
    let xs: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            row.iter()
                .zip(mean)
                .zip(scale)
                .map(|((&v, &m), &s)| (v - m) / s)
                .collect()
        })
        .collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..LR_ITERS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (row, &label) in xs.iter().zip(y) {
            let z = b + row.iter().zip(&w).map(|(&xi, &wi)| xi * wi).sum::<f64>();
            let err = sigmoid(z) - label as f64;
            for (g, &xi) in gw.iter_mut().zip(row) {
                *g += err * xi;
            }
            gb += err;
        }
        for (g, &wi) in gw.iter_mut().zip(&w) {
            *g = *g / n + wi / c;
        }
        gb /= n;
        for (wi, &g) in w.iter_mut().zip(&gw) {
            *wi -= LR_STEP * g;
        }
        b -= LR_STEP * gb;
    }
    LRClassifier {
        weights: w,
        bias: b,
        c,
        mean: mean.to_vec(),
        scale: scale.to_vec(),
    }
}

/// Trains the downstream classifier, selecting the penalty strength from
/// `c_grid` by validation accuracy (ties resolve to the smaller C). The
/// procedure is deterministic; `seed` is accepted for interface stability
/// but unused.
pub fn train_lr(
    train_x: &[Vec<f64>],
    train_y: &[u8],
    c_grid: &[f64],
    val_x: &[Vec<f64>],
    val_y: &[u8],
    _seed: u64,
) -> Result<LRClassifier> {
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::LengthMismatch(train_x.len(), train_y.len()));
    }
    if c_grid.is_empty() {
        return Err(Error::InvalidConfig("empty C grid".into()));
    }
    let pos = train_y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == train_y.len() {
        return Err(Error::SingleClass(
            "logistic regression needs both classes in the training labels".into(),
        ));
    }
    let dim = train_x[0].len();
    let n = train_x.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in train_x {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; dim];
    for row in train_x {
        for ((s, &v), &m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in scale.iter_mut() {
        let var = *s / (n - 1.0).max(1.0);
        // constant feature columns pass through unscaled
        *s = if var < 1e-24 { 1.0 } else { var.sqrt() };
    }

    let mut best: Option<(f64, LRClassifier)> = None;
    for &c in c_grid {
        let clf = fit_lr_fixed_c(train_x, train_y, c, &mean, &scale);
        let acc = if val_x.is_empty() {
            let preds: Vec<u8> = train_x.iter().map(|r| clf.predict(r)).collect();
            accuracy(&preds, train_y)?
        } else {
            let preds: Vec<u8> = val_x.iter().map(|r| clf.predict(r)).collect();
            accuracy(&preds, val_y)?
        };
        let better = match &best {
            None => true,
            Some((best_acc, _)) => acc > *best_acc,
        };
        if better {
            best = Some((acc, clf));
        }
    }
    Ok(best.expect("grid nonempty").1)
}

/// Per-worker expertise: test-set accuracy of a logistic regression trained
/// on that worker's own labels over the raw features. Model selection uses
/// the worker's validation labels, so the estimate never touches expert
/// labels outside the test split.
pub fn worker_expertise(ds: &CrowdDataset, c_grid: &[f64]) -> Result<BTreeMap<String, f64>> {
    let train_ids = ds.split_ids(Split::Train);
    let val_ids = ds.split_ids(Split::Validation);
    let test_ids = ds.split_ids(Split::Test);
    if test_ids.is_empty() {
        return Err(Error::InvalidDataset(
            "worker_expertise needs a test split with expert labels".into(),
        ));
    }
    let feats = |ids: &[&str]| -> Vec<Vec<f64>> {
        ids.iter()
            .map(|id| ds.sample(id).expect("validated id").features.clone())
            .collect()
    };
    let train_x = feats(&train_ids);
    let val_x = feats(&val_ids);
    let test_x = feats(&test_ids);
    let test_y: Vec<u8> = test_ids
        .iter()
        .map(|id| ds.sample(id).unwrap().expert_label.expect("test sample"))
        .collect();

    let mut out = BTreeMap::new();
    for trace in ds.traces() {
        let labels: BTreeMap<&str, u8> = trace
            .entries
            .iter()
            .map(|(id, l)| (id.as_str(), *l))
            .collect();
        let train_y: Vec<u8> = train_ids.iter().map(|id| labels[id]).collect();
        let val_y: Vec<u8> = val_ids.iter().map(|id| labels[id]).collect();
        let acc = match train_lr(&train_x, &train_y, c_grid, &val_x, &val_y, 0) {
            Ok(clf) => {
                let preds: Vec<u8> = test_x.iter().map(|r| clf.predict(r)).collect();
                accuracy(&preds, &test_y)?
            }
            // a worker who assigned a single label everywhere gets the
            // accuracy of that constant prediction
            Err(Error::SingleClass(_)) => {
                let constant = train_y[0];
                let preds = vec![constant; test_y.len()];
                accuracy(&preds, &test_y)?
            }
            Err(e) => return Err(e),
        };
        out.insert(trace.worker_id.clone(), acc);
    }
    Ok(out)
}

/// Mean, sample standard deviation, and the raw per-seed values of one metric.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricStats {
    pub fn from_values(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = if per_seed.len() < 2 {
            0.0
        } else {
            (per_seed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MetricStats {
            mean,
            std,
            per_seed,
        }
    }
}

/// Test-set accuracy and AUC over repeated runs.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsReport {
    pub accuracy: MetricStats,
    pub auc: MetricStats,
    pub n_test: usize,
}
