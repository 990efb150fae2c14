//! Crowdsourced dataset ingestion, validation, and indexing.
//!
//! A dataset is three CSV files:
//!   * annotations (`worker_id,sample_id,order_index,label`): one row per
//!     judgment, `order_index` 0-based per worker in that worker's labeling
//!     order, `label` in {0,1};
//!   * features (`sample_id,f0,...,f{d-1}`): dense real feature vectors;
//!   * partition (`sample_id,split,expert_label`): `split` in
//!     {train,validation,test}, `expert_label` filled only for test rows.
//!
//! Every worker labels every train/validation sample exactly once; test
//! samples carry expert labels and no crowd labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Dataset partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single data item: feature vector plus, for test items, the expert label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub expert_label: Option<u8>,
}

/// One worker's judgments in that worker's labeling order.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerTrace {
    pub worker_id: String,
    /// `(sample_id, assigned_label)` pairs, position = order index.
    pub entries: Vec<(String, u8)>,
}

impl WorkerTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Assigned label for `sample_id`, if this worker labeled it.
    pub fn label_of(&self, sample_id: &str) -> Option<u8> {
        self.entries
            .iter()
            .find(|(id, _)| id == sample_id)
            .map(|(_, l)| *l)
    }
}

/// A validated, immutable crowdsourced dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdDataset {
    samples: BTreeMap<String, Sample>,
    traces: BTreeMap<String, WorkerTrace>,
    partition: BTreeMap<String, Split>,
    feature_dim: usize,
}

impl CrowdDataset {
    /// Builds a dataset from parts, checking every structural invariant.
    pub fn new(
        samples: Vec<Sample>,
        traces: Vec<WorkerTrace>,
        partition: Vec<(String, Split)>,
    ) -> Result<Self> {
        let mut sample_map = BTreeMap::new();
        let mut feature_dim = None;
        for s in samples {
            match feature_dim {
                None => feature_dim = Some(s.features.len()),
                Some(d) if d != s.features.len() => {
                    return Err(Error::DimensionMismatch(format!(
                        "sample {:?} has {} features, expected {}",
                        s.id,
                        s.features.len(),
                        d
                    )));
                }
                _ => {}
            }
            if sample_map.insert(s.id.clone(), s).is_some() {
                return Err(Error::InvalidDataset("duplicate sample id".into()));
            }
        }
        let feature_dim = feature_dim
            .ok_or_else(|| Error::InvalidDataset("dataset contains no samples".into()))?;

        let mut partition_map = BTreeMap::new();
        for (id, split) in partition {
            if !sample_map.contains_key(&id) {
                return Err(Error::InvalidDataset(format!(
                    "partition references unknown sample {id:?}"
                )));
            }
            if partition_map.insert(id.clone(), split).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "sample {id:?} appears twice in the partition"
                )));
            }
        }
        for id in sample_map.keys() {
            if !partition_map.contains_key(id) {
                return Err(Error::InvalidDataset(format!(
                    "sample {id:?} is missing from the partition"
                )));
            }
        }
        for (id, sample) in &sample_map {
            let is_test = partition_map[id] == Split::Test;
            if is_test && sample.expert_label.is_none() {
                return Err(Error::InvalidDataset(format!(
                    "test sample {id:?} has no expert label"
                )));
            }
            if !is_test && sample.expert_label.is_some() {
                return Err(Error::InvalidDataset(format!(
                    "non-test sample {id:?} carries an expert label"
                )));
            }
        }

        let annotated: BTreeSet<&String> = partition_map
            .iter()
            .filter(|(_, s)| **s != Split::Test)
            .map(|(id, _)| id)
            .collect();

        if traces.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 workers, have {}",
                traces.len()
            )));
        }
        let mut trace_map = BTreeMap::new();
        for trace in traces {
            let mut seen = BTreeSet::new();
            for (sample_id, label) in &trace.entries {
                if *label > 1 {
                    return Err(Error::InvalidDataset(format!(
                        "worker {:?} assigned non-binary label {} to {:?}",
                        trace.worker_id, label, sample_id
                    )));
                }
                if !annotated.contains(sample_id) {
                    return Err(Error::InvalidDataset(format!(
                        "worker {:?} annotated {:?}, which is not a train/validation sample",
                        trace.worker_id, sample_id
                    )));
                }
                if !seen.insert(sample_id) {
                    return Err(Error::InvalidDataset(format!(
                        "worker {:?} annotated sample {:?} more than once",
                        trace.worker_id, sample_id
                    )));
                }
            }
            if seen.len() != annotated.len() {
                let missing = annotated
                    .iter()
                    .find(|id| !seen.contains(**id))
                    .map(|id| id.as_str())
                    .unwrap_or("?");
                return Err(Error::InvalidDataset(format!(
                    "worker {:?} annotated {} of {} train/validation samples (missing {:?})",
                    trace.worker_id,
                    seen.len(),
                    annotated.len(),
                    missing
                )));
            }
            if trace_map
                .insert(trace.worker_id.clone(), trace)
                .is_some()
            {
                return Err(Error::InvalidDataset("duplicate worker id".into()));
            }
        }

        Ok(CrowdDataset {
            samples: sample_map,
            traces: trace_map,
            partition: partition_map,
            feature_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_workers(&self) -> usize {
        self.traces.len()
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.get(id)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.values()
    }

    pub fn worker_ids(&self) -> impl Iterator<Item = &str> {
        self.traces.keys().map(|s| s.as_str())
    }

    pub fn traces(&self) -> impl Iterator<Item = &WorkerTrace> {
        self.traces.values()
    }

    pub fn split_of(&self, sample_id: &str) -> Option<Split> {
        self.partition.get(sample_id).copied()
    }

    /// Sample ids in `split`, sorted.
    pub fn split_ids(&self, split: Split) -> Vec<&str> {
        self.partition
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Sorted ids of the annotated (train plus validation) samples.
    pub fn annotated_ids(&self) -> Vec<&str> {
        self.partition
            .iter()
            .filter(|(_, s)| **s != Split::Test)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// The trace of one worker, entries sorted by that worker's labeling order.
    pub fn worker_trace(&self, worker_id: &str) -> Result<&WorkerTrace> {
        self.traces
            .get(worker_id)
            .ok_or_else(|| Error::UnknownWorker(worker_id.to_string()))
    }

    /// Writes the dataset back out in the three-file CSV format.
    ///
    /// Feature values use Rust's shortest round-trip float formatting, so a
    /// write/load cycle reproduces every value bit-exactly.
    pub fn write_csv(
        &self,
        annotations_path: &Path,
        features_path: &Path,
        partition_path: &Path,
    ) -> Result<()> {
        let mut ann = String::from("worker_id,sample_id,order_index,label\n");
        for trace in self.traces.values() {
            for (order, (sample_id, label)) in trace.entries.iter().enumerate() {
                ann.push_str(&format!(
                    "{},{},{},{}\n",
                    trace.worker_id, sample_id, order, label
                ));
            }
        }
        write_file(annotations_path, &ann)?;

        let mut feats = String::from("sample_id");
        for d in 0..self.feature_dim {
            feats.push_str(&format!(",f{d}"));
        }
        feats.push('\n');
        for sample in self.samples.values() {
            feats.push_str(&sample.id);
            for v in &sample.features {
                feats.push_str(&format!(",{v}"));
            }
            feats.push('\n');
        }
        write_file(features_path, &feats)?;

        let mut part = String::from("sample_id,split,expert_label\n");
        for (id, split) in &self.partition {
            let label = match self.samples[id].expert_label {
                Some(l) => l.to_string(),
                None => String::new(),
            };
            part.push_str(&format!("{id},{split},{label}\n"));
        }
        write_file(partition_path, &part)?;
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn parse_error(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads and validates a dataset from the three-file CSV format.
pub fn load_dataset(
    annotations_path: &Path,
    features_path: &Path,
    partition_path: &Path,
) -> Result<CrowdDataset> {
    // features
    let text = read_file(features_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(features_path, 1, "empty file"))?;
    if !header.starts_with("sample_id,") {
        return Err(parse_error(
            features_path,
            1,
            "expected header starting with `sample_id,`",
        ));
    }
    let dim = header.split(',').count() - 1;
    let mut features: Vec<(String, Vec<f64>)> = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| parse_error(features_path, lineno, "missing sample_id"))?
            .to_string();
        let mut vec = Vec::with_capacity(dim);
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_error(features_path, lineno, format!("bad feature value {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(parse_error(features_path, lineno, "non-finite feature value"));
            }
            vec.push(v);
        }
        if vec.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{}:{}: sample {:?} has {} features, header declares {}",
                features_path.display(),
                lineno,
                id,
                vec.len(),
                dim
            )));
        }
        features.push((id, vec));
    }

    // partition
    let text = read_file(partition_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(partition_path, 1, "empty file"))?;
    if header != "sample_id,split,expert_label" {
        return Err(parse_error(
            partition_path,
            1,
            "expected header `sample_id,split,expert_label`",
        ));
    }
    let mut partition: Vec<(String, Split)> = Vec::new();
    let mut expert: BTreeMap<String, u8> = BTreeMap::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_error(partition_path, lineno, "expected 3 fields"));
        }
        let split = match fields[1] {
            "train" => Split::Train,
            "validation" => Split::Validation,
            "test" => Split::Test,
            other => {
                return Err(parse_error(
                    partition_path,
                    lineno,
                    format!("unknown split {other:?}"),
                ))
            }
        };
        match (split, fields[2].trim()) {
            (Split::Test, "") => {
                return Err(parse_error(
                    partition_path,
                    lineno,
                    "test sample has empty expert_label",
                ))
            }
            (Split::Test, raw) => {
                let label = parse_label(raw)
                    .ok_or_else(|| Error::InvalidLabel {
                        file: partition_path.display().to_string(),
                        line: lineno,
                        label: raw.to_string(),
                    })?;
                expert.insert(fields[0].to_string(), label);
            }
            (_, "") => {}
            (_, raw) => {
                return Err(parse_error(
                    partition_path,
                    lineno,
                    format!("non-test sample carries expert_label {raw:?}"),
                ))
            }
        }
        partition.push((fields[0].to_string(), split));
    }

    // annotations, grouped per worker with explicit order indices
    let text = read_file(annotations_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(annotations_path, 1, "empty file"))?;
    if header != "worker_id,sample_id,order_index,label" {
        return Err(parse_error(
            annotations_path,
            1,
            "expected header `worker_id,sample_id,order_index,label`",
        ));
    }
    let mut per_worker: BTreeMap<String, Vec<(usize, String, u8)>> = BTreeMap::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_error(annotations_path, lineno, "expected 4 fields"));
        }
        let order: usize = fields[2].trim().parse().map_err(|_| {
            parse_error(
                annotations_path,
                lineno,
                format!("bad order_index {:?}", fields[2]),
            )
        })?;
        let label = parse_label(fields[3].trim()).ok_or_else(|| Error::InvalidLabel {
            file: annotations_path.display().to_string(),
            line: lineno,
            label: fields[3].to_string(),
        })?;
        let rows = per_worker.entry(fields[0].to_string()).or_default();
        if rows.iter().any(|(_, sid, _)| sid == fields[1]) {
            return Err(parse_error(
                annotations_path,
                lineno,
                format!("duplicate (worker, sample) pair ({:?}, {:?})", fields[0], fields[1]),
            ));
        }
        rows.push((order, fields[1].to_string(), label));
    }

    let mut traces = Vec::new();
    for (worker_id, mut rows) in per_worker {
        rows.sort_by_key(|(order, _, _)| *order);
        for (pos, (order, _, _)) in rows.iter().enumerate() {
            if *order != pos {
                return Err(Error::InvalidDataset(format!(
                    "{}: worker {:?} has an order-index gap or duplicate: expected {}, found {}",
                    annotations_path.display(),
                    worker_id,
                    pos,
                    order
                )));
            }
        }
        traces.push(WorkerTrace {
            worker_id,
            entries: rows.into_iter().map(|(_, sid, l)| (sid, l)).collect(),
        });
    }

    let samples = features
        .into_iter()
        .map(|(id, feats)| Sample {
            expert_label: expert.get(&id).copied(),
            id,
            features: feats,
        })
        .collect();

    CrowdDataset::new(samples, traces, partition)
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, contents).unwrap();
        path
    }

    fn minimal_files(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let ann = write(
            dir,
            "annotations.csv",
            "worker_id,sample_id,order_index,label\n\
             w0,a,0,1\nw0,b,1,0\nw0,c,2,1\n\
             w1,c,0,1\nw1,a,1,1\nw1,b,2,0\n",
        );
        let feats = write(
            dir,
            "features.csv",
            "sample_id,f0,f1\na,1.0,2.0\nb,0.5,-1.25\nc,3.0,0.125\nt,0.0,1.0\n",
        );
        let part = write(
            dir,
            "partition.csv",
            "sample_id,split,expert_label\na,train,\nb,train,\nc,validation,\nt,test,1\n",
        );
        (ann, feats, part)
    }

    #[test]
    fn loads_minimal_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, feats, part) = minimal_files(dir.path());
        let ds = load_dataset(&ann, &feats, &part).unwrap();
        assert_eq!(ds.n_samples(), 4);
        assert_eq!(ds.n_workers(), 2);
        assert_eq!(ds.feature_dim(), 2);
        for trace in ds.traces() {
            assert_eq!(trace.len(), 3);
        }
        assert_eq!(ds.sample("t").unwrap().expert_label, Some(1));
        assert_eq!(ds.annotated_ids(), vec!["a", "b", "c"]);
    }

    #[test]
    fn trace_sorted_by_order_index() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, feats, part) = minimal_files(dir.path());
        let ds = load_dataset(&ann, &feats, &part).unwrap();
        // w1 labeled c first, then a, then b.
        let trace = ds.worker_trace("w1").unwrap();
        let order: Vec<&str> = trace.entries.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(order, vec!["c", "a", "b"]);
    }

    #[test]
    fn unknown_worker_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, feats, part) = minimal_files(dir.path());
        let ds = load_dataset(&ann, &feats, &part).unwrap();
        assert!(matches!(
            ds.worker_trace("w99"),
            Err(Error::UnknownWorker(_))
        ));
    }

    #[test]
    fn wrong_feature_length_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, _, part) = minimal_files(dir.path());
        let feats = write(
            dir.path(),
            "bad_features.csv",
            "sample_id,f0,f1\na,1.0,2.0\nb,0.5\nc,3.0,0.125\nt,0.0,1.0\n",
        );
        let err = load_dataset(&ann, &feats, &part).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn label_two_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let (_, feats, part) = minimal_files(dir.path());
        let ann = write(
            dir.path(),
            "bad_annotations.csv",
            "worker_id,sample_id,order_index,label\n\
             w0,a,0,2\nw0,b,1,0\nw0,c,2,1\n\
             w1,c,0,1\nw1,a,1,1\nw1,b,2,0\n",
        );
        let err = load_dataset(&ann, &feats, &part).unwrap_err();
        match err {
            Error::InvalidLabel { line, label, .. } => {
                assert_eq!(line, 2);
                assert_eq!(label, "2");
            }
            other => panic!("expected InvalidLabel, got {other}"),
        }
    }

    #[test]
    fn order_gap_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, feats, part) = minimal_files(dir.path());
        let ann = write(
            dir.path(),
            "gap_annotations.csv",
            "worker_id,sample_id,order_index,label\n\
             w0,a,0,1\nw0,b,2,0\nw0,c,3,1\n\
             w1,c,0,1\nw1,a,1,1\nw1,b,2,0\n",
        );
        let err = load_dataset(&ann, &feats, &part).unwrap_err();
        assert!(err.to_string().contains("order-index gap"), "{err}");
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, feats, part) = minimal_files(dir.path());
        let ann = write(
            dir.path(),
            "dup_annotations.csv",
            "worker_id,sample_id,order_index,label\n\
             w0,a,0,1\nw0,a,1,0\nw0,c,2,1\n\
             w1,c,0,1\nw1,a,1,1\nw1,b,2,0\n",
        );
        let err = load_dataset(&ann, &feats, &part).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn annotation_on_test_sample_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, feats, part) = minimal_files(dir.path());
        let ann = write(
            dir.path(),
            "test_annotations.csv",
            "worker_id,sample_id,order_index,label\n\
             w0,a,0,1\nw0,b,1,0\nw0,c,2,1\nw0,t,3,1\n\
             w1,c,0,1\nw1,a,1,1\nw1,b,2,0\n",
        );
        let err = load_dataset(&ann, &feats, &part).unwrap_err();
        assert!(err.to_string().contains("not a train/validation"), "{err}");
    }

    #[test]
    fn incomplete_trace_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, feats, part) = minimal_files(dir.path());
        let ann = write(
            dir.path(),
            "short_annotations.csv",
            "worker_id,sample_id,order_index,label\n\
             w0,a,0,1\nw0,b,1,0\n\
             w1,c,0,1\nw1,a,1,1\nw1,b,2,0\n",
        );
        let err = load_dataset(&ann, &feats, &part).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }

    #[test]
    fn single_worker_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, feats, part) = minimal_files(dir.path());
        let ann = write(
            dir.path(),
            "one_worker.csv",
            "worker_id,sample_id,order_index,label\nw0,a,0,1\nw0,b,1,0\nw0,c,2,1\n",
        );
        let err = load_dataset(&ann, &feats, &part).unwrap_err();
        assert!(err.to_string().contains("at least 2 workers"), "{err}");
    }

    #[test]
    fn write_then_load_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, feats, part) = minimal_files(dir.path());
        let ds = load_dataset(&ann, &feats, &part).unwrap();

        let ann2 = dir.path().join("rt_annotations.csv");
        let feats2 = dir.path().join("rt_features.csv");
        let part2 = dir.path().join("rt_partition.csv");
        ds.write_csv(&ann2, &feats2, &part2).unwrap();
        let reloaded = load_dataset(&ann2, &feats2, &part2).unwrap();
        assert_eq!(ds, reloaded);
    }

    #[test]
    fn trace_multiset_equals_annotated_set() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, feats, part) = minimal_files(dir.path());
        let ds = load_dataset(&ann, &feats, &part).unwrap();
        let annotated: std::collections::BTreeSet<&str> =
            ds.annotated_ids().into_iter().collect();
        for trace in ds.traces() {
            let ids: std::collections::BTreeSet<&str> =
                trace.entries.iter().map(|(id, _)| id.as_str()).collect();
            assert_eq!(ids, annotated);
            assert_eq!(trace.len(), annotated.len());
        }
    }
}
