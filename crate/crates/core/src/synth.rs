//! Synthetic data and annotator simulation.
//!
//! Features are two spherical unit-variance Gaussian blobs whose means sit
//! `class_separation` apart along the first axis. Skilled workers flip the
//! true label independently with a configurable probability; irresponsible
//! workers assign fair-coin labels regardless of the features. Each worker
//! labels the train/validation samples in an independent uniform shuffle.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CrowdDataset, Sample, Split, WorkerTrace};
use crate::error::{Error, Result};
use crate::eval::fleiss_kappa;
use crate::split_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerKind {
    Skilled,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorkerProfile {
    pub kind: WorkerKind,
    /// Per-item probability that a skilled worker flips the true label;
    /// ignored for random workers.
    #[serde(default)]
    pub flip_probability: f64,
    /// When set, the flip probability doubles for the 10 items following
    /// each error. Normally supplied once via `SynthConfig::bursty_errors`.
    #[serde(default)]
    pub bursty: bool,
    /// Stream seed; derived from the master seed and worker index by
    /// `build_synthetic_dataset`, so configs normally leave it at 0.
    #[serde(default)]
    pub seed: u64,
}

impl WorkerProfile {
    pub fn skilled(flip_probability: f64) -> Self {
        WorkerProfile {
            kind: WorkerKind::Skilled,
            flip_probability,
            bursty: false,
            seed: 0,
        }
    }

    pub fn random() -> Self {
        WorkerProfile {
            kind: WorkerKind::Random,
            flip_probability: 0.0,
            bursty: false,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind == WorkerKind::Skilled && !(0.0..=0.5).contains(&self.flip_probability) {
            return Err(Error::InvalidConfig(format!(
                "skilled flip_probability must be in [0, 0.5], got {}",
                self.flip_probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    /// Distance between the two class means, in units of the noise std.
    pub class_separation: f64,
    /// Probability that a sample belongs to class 1.
    pub class_ratio: f64,
    pub workers: Vec<WorkerProfile>,
    /// When set, a skilled worker's flip probability doubles for the 10
    /// items following each error, producing bursty error runs.
    pub bursty_errors: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 400,
            n_val: 100,
            n_test: 400,
            feature_dim: 8,
            class_separation: 3.3,
            class_ratio: 0.5,
            workers: vec![
                WorkerProfile::skilled(0.1),
                WorkerProfile::skilled(0.1),
                WorkerProfile::skilled(0.1),
                WorkerProfile::skilled(0.1),
                WorkerProfile::skilled(0.1),
            ],
            bursty_errors: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("sample counts must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.class_separation < 0.0 {
            return Err(Error::InvalidConfig("class_separation must be nonnegative".into()));
        }
        if !(0.0 < self.class_ratio && self.class_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "class_ratio must be in (0, 1), got {}",
                self.class_ratio
            )));
        }
        if self.workers.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 workers, got {}",
                self.workers.len()
            )));
        }
        for w in &self.workers {
            w.validate()?;
        }
        Ok(())
    }
}

/// A generated sample together with the hidden generating truth.
#[derive(Debug, Clone)]
pub struct BlobSample {
    pub id: String,
    pub features: Vec<f64>,
    pub true_label: u8,
    pub split: Split,
}

/// Draws `n_train + n_val + n_test` samples from the two-blob mixture and
/// assigns splits in id order.
pub fn make_blobs(cfg: &SynthConfig) -> Result<Vec<BlobSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, 0));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let total = cfg.n_train + cfg.n_val + cfg.n_test;
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let split = if i < cfg.n_train {
            Split::Train
        } else if i < cfg.n_train + cfg.n_val {
            Split::Validation
        } else {
            Split::Test
        };
        let label = rng.random_bool(cfg.class_ratio) as u8;
        let shift = if label == 1 {
            cfg.class_separation / 2.0
        } else {
            -cfg.class_separation / 2.0
        };
        let mut features: Vec<f64> = (0..cfg.feature_dim).map(|_| noise.sample(&mut rng)).collect();
        features[0] += shift;
        out.push(BlobSample {
            id: format!("s{i:05}"),
            features,
            true_label: label,
            split,
        });
    }
    Ok(out)
}

/// Simulates one worker's trace over `items` (pairs of sample id and true
/// label). The labeling order is an independent uniform shuffle; labels are
/// drawn along that order.
pub fn simulate_worker(
    profile: &WorkerProfile,
    items: &[(String, u8)],
    seed: u64,
) -> Result<WorkerTrace> {
    profile.validate()?;
    if items.is_empty() {
        return Err(Error::EmptyInput("simulate_worker".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);

    let mut entries = Vec::with_capacity(items.len());
    let mut burst_left = 0usize;
    for &idx in &order {
        let (id, truth) = &items[idx];
        let label = match profile.kind {
            WorkerKind::Random => rng.random_bool(0.5) as u8,
            WorkerKind::Skilled => {
                let p = if burst_left > 0 {
                    (2.0 * profile.flip_probability).min(1.0)
                } else {
                    profile.flip_probability
                };
                let flip = p > 0.0 && rng.random_bool(p);
                if profile.bursty {
                    if flip {
                        burst_left = 10;
                    } else {
                        burst_left = burst_left.saturating_sub(1);
                    }
                }
                if flip {
                    1 - truth
                } else {
                    *truth
                }
            }
        };
        entries.push((id.clone(), label));
    }
    Ok(WorkerTrace {
        worker_id: String::new(),
        entries,
    })
}

/// Everything `build_synthetic_dataset` produces besides the dataset itself.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: CrowdDataset,
    /// sample_id -> generating truth for every sample, including train/val.
    pub true_labels: std::collections::BTreeMap<String, u8>,
    /// Worker profiles with their derived stream seeds, in worker-id order.
    pub profiles: Vec<(String, WorkerProfile)>,
    pub kappa: f64,
}

/// Generates a full dataset: blobs, partition, expert labels on test, one
/// simulated trace per worker, and the achieved Fleiss kappa.
///
/// Worker `i` draws from a stream seeded with `split_seed(cfg.seed, 1 + i)`;
/// the feature generator uses stream 0.
pub fn build_synthetic_dataset(cfg: &SynthConfig) -> Result<SynthOutput> {
    let blobs = make_blobs(cfg)?;
    let mut true_labels = std::collections::BTreeMap::new();
    let mut samples = Vec::with_capacity(blobs.len());
    let mut partition = Vec::with_capacity(blobs.len());
    let mut annotated: Vec<(String, u8)> = Vec::new();
    for b in &blobs {
        true_labels.insert(b.id.clone(), b.true_label);
        samples.push(Sample {
            id: b.id.clone(),
            features: b.features.clone(),
            expert_label: (b.split == Split::Test).then_some(b.true_label),
        });
        partition.push((b.id.clone(), b.split));
        if b.split != Split::Test {
            annotated.push((b.id.clone(), b.true_label));
        }
    }

    let mut traces = Vec::with_capacity(cfg.workers.len());
    let mut profiles = Vec::with_capacity(cfg.workers.len());
    for (i, profile) in cfg.workers.iter().enumerate() {
        let worker_id = format!("w{i:02}");
        let seed = split_seed(cfg.seed, 1 + i as u64);
        let mut effective = profile.clone();
        effective.seed = seed;
        effective.bursty = effective.bursty || cfg.bursty_errors;
        let mut trace = simulate_worker(&effective, &annotated, seed)?;
        trace.worker_id = worker_id.clone();
        traces.push(trace);
        profiles.push((worker_id, effective));
    }

    let dataset = CrowdDataset::new(samples, traces, partition)?;
    let kappa = fleiss_kappa(&dataset)?;
    Ok(SynthOutput {
        dataset,
        true_labels,
        profiles,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{accuracy, train_lr, DEFAULT_C_GRID};

    fn items(n: usize) -> Vec<(String, u8)> {
        (0..n).map(|i| (format!("s{i:05}"), (i % 2) as u8)).collect()
    }

    #[test]
    fn blobs_are_deterministic() {
        let cfg = SynthConfig::default();
        let a = make_blobs(&cfg).unwrap();
        let b = make_blobs(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.true_label, y.true_label);
        }
    }

    #[test]
    fn wide_separation_is_linearly_separable() {
        let cfg = SynthConfig {
            feature_dim: 2,
            class_separation: 10.0,
            n_train: 200,
            n_val: 50,
            n_test: 200,
            seed: 5,
            ..SynthConfig::default()
        };
        let blobs = make_blobs(&cfg).unwrap();
        let (train, rest): (Vec<_>, Vec<_>) = blobs.iter().partition(|b| b.split == Split::Train);
        let test: Vec<_> = rest.iter().filter(|b| b.split == Split::Test).collect();
        let x: Vec<Vec<f64>> = train.iter().map(|b| b.features.clone()).collect();
        let y: Vec<u8> = train.iter().map(|b| b.true_label).collect();
        let clf = train_lr(&x, &y, &DEFAULT_C_GRID, &[], &[], 0).unwrap();
        let preds: Vec<u8> = test.iter().map(|b| clf.predict(&b.features)).collect();
        let truth: Vec<u8> = test.iter().map(|b| b.true_label).collect();
        assert!(accuracy(&preds, &truth).unwrap() >= 0.99);
    }

    #[test]
    fn zero_separation_is_indistinguishable() {
        let cfg = SynthConfig {
            feature_dim: 2,
            class_separation: 0.0,
            n_train: 400,
            n_val: 100,
            n_test: 400,
            seed: 6,
            ..SynthConfig::default()
        };
        let blobs = make_blobs(&cfg).unwrap();
        let (train, rest): (Vec<_>, Vec<_>) = blobs.iter().partition(|b| b.split == Split::Train);
        let test: Vec<_> = rest.iter().filter(|b| b.split == Split::Test).collect();
        let x: Vec<Vec<f64>> = train.iter().map(|b| b.features.clone()).collect();
        let y: Vec<u8> = train.iter().map(|b| b.true_label).collect();
        let clf = train_lr(&x, &y, &DEFAULT_C_GRID, &[], &[], 0).unwrap();
        let preds: Vec<u8> = test.iter().map(|b| clf.predict(&b.features)).collect();
        let truth: Vec<u8> = test.iter().map(|b| b.true_label).collect();
        let acc = accuracy(&preds, &truth).unwrap();
        assert!((acc - 0.5).abs() < 0.12, "accuracy {acc}");
    }

    #[test]
    fn zero_flip_worker_reproduces_truth() {
        let profile = WorkerProfile::skilled(0.0);
        let trace = simulate_worker(&profile, &items(50), 9).unwrap();
        for (id, label) in &trace.entries {
            let truth = (id[1..].parse::<usize>().unwrap() % 2) as u8;
            assert_eq!(*label, truth);
        }
    }

    #[test]
    fn random_worker_agrees_about_half_the_time() {
        let profile = WorkerProfile::random();
        let all = items(2000);
        let trace = simulate_worker(&profile, &all, 11).unwrap();
        let agree = trace
            .entries
            .iter()
            .filter(|(id, label)| (id[1..].parse::<usize>().unwrap() % 2) as u8 == *label)
            .count() as f64
            / 2000.0;
        assert!((agree - 0.5).abs() < 0.03, "agreement {agree}");
    }

    #[test]
    fn different_seeds_shuffle_differently() {
        let profile = WorkerProfile::skilled(0.0);
        let a = simulate_worker(&profile, &items(100), 1).unwrap();
        let b = simulate_worker(&profile, &items(100), 2).unwrap();
        let ia: Vec<&str> = a.entries.iter().map(|(id, _)| id.as_str()).collect();
        let ib: Vec<&str> = b.entries.iter().map(|(id, _)| id.as_str()).collect();
        assert_ne!(ia, ib);
    }

    #[test]
    fn skilled_workers_give_high_kappa() {
        let cfg = SynthConfig {
            workers: vec![WorkerProfile::skilled(0.05); 5],
            n_train: 800,
            n_val: 200,
            n_test: 100,
            seed: 3,
            ..SynthConfig::default()
        };
        let out = build_synthetic_dataset(&cfg).unwrap();
        assert!(out.kappa >= 0.7, "kappa {}", out.kappa);
    }

    #[test]
    fn many_random_workers_crush_kappa() {
        let mut workers = vec![WorkerProfile::skilled(0.05); 5];
        workers.extend(vec![WorkerProfile::random(); 8]);
        let cfg = SynthConfig {
            workers,
            n_train: 800,
            n_val: 200,
            n_test: 100,
            seed: 3,
            ..SynthConfig::default()
        };
        let out = build_synthetic_dataset(&cfg).unwrap();
        assert!(out.kappa < 0.15, "kappa {}", out.kappa);
    }

    #[test]
    fn extra_random_worker_lowers_mean_kappa() {
        let base_kappa = |n_random: usize, seed: u64| {
            let mut workers = vec![WorkerProfile::skilled(0.1); 5];
            workers.extend(vec![WorkerProfile::random(); n_random]);
            let cfg = SynthConfig {
                workers,
                n_train: 300,
                n_val: 100,
                n_test: 50,
                seed,
                ..SynthConfig::default()
            };
            build_synthetic_dataset(&cfg).unwrap().kappa
        };
        let mean = |n_random: usize| -> f64 {
            (0..10).map(|s| base_kappa(n_random, s)).sum::<f64>() / 10.0
        };
        let k0 = mean(0);
        let k1 = mean(1);
        let k2 = mean(2);
        assert!(k1 < k0, "kappa means {k0} {k1}");
        assert!(k2 < k1, "kappa means {k1} {k2}");
    }

    #[test]
    fn dataset_generation_is_a_pure_function_of_the_seed() {
        let cfg = SynthConfig {
            n_train: 60,
            n_val: 20,
            n_test: 30,
            seed: 77,
            ..SynthConfig::default()
        };
        let a = build_synthetic_dataset(&cfg).unwrap();
        let b = build_synthetic_dataset(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.kappa, b.kappa);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.workers = vec![WorkerProfile::skilled(0.1)];
        assert!(build_synthetic_dataset(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.workers[0].flip_probability = 0.7;
        assert!(build_synthetic_dataset(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.class_ratio = 1.0;
        assert!(build_synthetic_dataset(&cfg).is_err());
    }
}
