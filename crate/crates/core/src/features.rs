//! Feature extraction, dataset assembly, CSV persistence and k-fold splitting.
//!
//! Feature order, for `v` instances and `s` servers:
//!
//! | block | columns | count |
//! |---|---|---|
//! | instance demands | `inst{i}_cpu`, `inst{i}_mem` per instance | `2v` |
//! | server capacities | `srv{j}_cpu`, `srv{j}_mem` per server | `2s` |
//! | hop tolerances | `tol_hss_mme`, `tol_mme_sgw`, `tol_sgw_pgw` | `3` |
//! | delays | `delay_{a}_{b}` for `a < b`, row-major upper triangle | `s(s-1)/2` |
//! | dependency levels | `inst{i}_dep` (chain position 0..3) | `v` |
//!
//! Labels follow as `label_inst{i}`, the server id of instance `i`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::{ReplicaCounts, SfcSpec, Topology};
use crate::placer::Placement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub n_servers: usize,
    pub replica_counts: ReplicaCounts,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(n_servers: usize, replica_counts: ReplicaCounts) -> Self {
        let v = replica_counts.total();
        let mut names = Vec::with_capacity(feature_width(n_servers, v));
        for i in 0..v {
            names.push(format!("inst{i}_cpu"));
            names.push(format!("inst{i}_mem"));
        }
        for j in 0..n_servers {
            names.push(format!("srv{j}_cpu"));
            names.push(format!("srv{j}_mem"));
        }
        names.extend(["tol_hss_mme", "tol_mme_sgw", "tol_sgw_pgw"].map(String::from));
        for a in 0..n_servers {
            for b in (a + 1)..n_servers {
                names.push(format!("delay_{a}_{b}"));
            }
        }
        for i in 0..v {
            names.push(format!("inst{i}_dep"));
        }
        FeatureSchema {
            n_servers,
            replica_counts,
            feature_names: names,
            label_names: (0..v).map(|i| format!("label_inst{i}")).collect(),
        }
    }

    pub fn for_snapshot(topo: &Topology, sfc: &SfcSpec) -> Self {
        FeatureSchema::new(topo.n_servers(), sfc.replica_counts())
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.label_names.len()
    }

    fn check(&self, topo: &Topology, sfc: &SfcSpec) -> Result<()> {
        if topo.n_servers() != self.n_servers {
            return Err(Error::DimensionMismatch {
                what: "servers in snapshot",
                expected: self.n_servers,
                actual: topo.n_servers(),
            });
        }
        if sfc.replica_counts() != self.replica_counts {
            return Err(Error::InvalidInput(format!(
                "replica counts {:?} differ from dataset configuration {:?}",
                sfc.replica_counts(),
                self.replica_counts
            )));
        }
        Ok(())
    }
}

/// `2v + 2s + 3 + s(s-1)/2 + v`.
pub fn feature_width(n_servers: usize, n_instances: usize) -> usize {
    2 * n_instances + 2 * n_servers + 3 + n_servers * (n_servers - 1) / 2 + n_instances
}

pub fn extract_features(topo: &Topology, sfc: &SfcSpec) -> Vec<f64> {
    let s = topo.n_servers();
    let mut x = Vec::with_capacity(feature_width(s, sfc.n_instances()));
    for inst in sfc.instances() {
        x.push(inst.cpu_demand);
        x.push(inst.mem_demand);
    }
    for server in topo.servers() {
        x.push(server.cpu_capacity);
        x.push(server.mem_capacity);
    }
    x.extend(sfc.tolerances());
    for a in 0..s {
        for b in (a + 1)..s {
            x.push(topo.server_delay(a, b));
        }
    }
    for inst in sfc.instances() {
        x.push(sfc.dependency_level(inst.vnf_type) as f64);
    }
    x
}

/// Feature rows with one server label per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    features: Vec<Vec<f64>>,
    labels: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn empty(schema: FeatureSchema) -> Self {
        Dataset {
            schema,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, features: Vec<f64>, labels: Vec<usize>) -> Result<()> {
        if features.len() != self.schema.width() {
            return Err(Error::DimensionMismatch {
                what: "feature row",
                expected: self.schema.width(),
                actual: features.len(),
            });
        }
        if labels.len() != self.schema.n_outputs() {
            return Err(Error::DimensionMismatch {
                what: "label row",
                expected: self.schema.n_outputs(),
                actual: labels.len(),
            });
        }
        if let Some(pos) = labels.iter().position(|&l| l >= self.schema.n_servers) {
            return Err(Error::Schema {
                column: self.schema.label_names[pos].clone(),
                reason: format!("server id {} out of range", labels[pos]),
            });
        }
        self.features.push(features);
        self.labels.push(labels);
        Ok(())
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_samples(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.width()
    }

    pub fn n_outputs(&self) -> usize {
        self.schema.n_outputs()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// One row per `(topology, chain, teacher placement)`; labels are the teacher's servers.
pub fn build_dataset(schema: FeatureSchema, pairs: &[(Topology, SfcSpec, Placement)]) -> Result<Dataset> {
    let mut ds = Dataset::empty(schema);
    for (topo, sfc, placement) in pairs {
        ds.schema.check(topo, sfc)?;
        ds.push(extract_features(topo, sfc), placement.assignment.clone())?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
}

impl FoldSplit {
    pub fn b(&self) -> usize {
        self.folds.len()
    }
}

/// Shuffles `0..n_samples` with `seed` and cuts it into `b` folds whose sizes differ by at most one.
pub fn kfold_indices(n_samples: usize, b: usize, seed: u64) -> Result<FoldSplit> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {b}")));
    }
    if b > n_samples {
        return Err(Error::InvalidInput(format!("{b} folds requested for {n_samples} samples")));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n_samples / b;
    let extra = n_samples % b;
    let mut folds = Vec::with_capacity(b);
    let mut start = 0;
    for f in 0..b {
        let len = base + usize::from(f < extra);
        let mut validation = order[start..start + len].to_vec();
        validation.sort_unstable();
        let mut in_val = vec![false; n_samples];
        validation.iter().for_each(|&i| in_val[i] = true);
        let train = (0..n_samples).filter(|&i| !in_val[i]).collect();
        folds.push(Fold { train, validation });
        start += len;
    }
    Ok(FoldSplit { folds })
}

pub fn kfold(ds: &Dataset, b: usize, seed: u64) -> Result<FoldSplit> {
    kfold_indices(ds.n_samples(), b, seed)
}

/// Path of the schema file written next to a dataset CSV: `dataset.csv` -> `dataset.schema.json`.
pub fn schema_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("schema.json")
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::io::write_json(schema_path(path), &ds.schema)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(ds.schema.feature_names.iter().chain(&ds.schema.label_names))?;
    for (x, y) in ds.features.iter().zip(&ds.labels) {
        let record: Vec<String> = x
            .iter()
            .map(|v| v.to_string())
            .chain(y.iter().map(|l| l.to_string()))
            .collect();
        w.write_record(&record)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let schema: FeatureSchema = crate::io::read_json(schema_path(path))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));

    let expected: Vec<String> = schema.feature_names.iter().chain(&schema.label_names).cloned().collect();
    let header = r.headers()?.clone();
    for (pos, name) in expected.iter().enumerate() {
        match header.get(pos) {
            Some(h) if h == name => {}
            Some(h) => {
                return Err(Error::Schema {
                    column: name.to_string(),
                    reason: format!("header has `{h}` at position {pos}"),
                })
            }
            None => {
                return Err(Error::Schema {
                    column: name.to_string(),
                    reason: "missing from header".into(),
                })
            }
        }
    }
    if header.len() != expected.len() {
        return Err(Error::Schema {
            column: header.get(expected.len()).unwrap_or_default().to_string(),
            reason: format!("unexpected extra column ({} columns, expected {})", header.len(), expected.len()),
        });
    }

    let width = schema.width();
    let mut ds = Dataset::empty(schema);
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let mut x = Vec::with_capacity(width);
        let mut y = Vec::with_capacity(ds.n_outputs());
        for (pos, field) in record.iter().enumerate() {
            let bad = |what: &str| Error::Schema {
                column: expected[pos].to_string(),
                reason: format!("row {row}: `{field}` is not {what}"),
            };
            if pos < width {
                x.push(field.parse::<f64>().map_err(|_| bad("a number"))?);
            } else {
                y.push(field.parse::<usize>().map_err(|_| bad("a server id"))?);
            }
        }
        ds.push(x, y).map_err(|e| match e {
            Error::Schema { column, reason } => Error::Schema {
                column,
                reason: format!("row {row}: {reason}"),
            },
            other => other,
        })?;
    }
    Ok(ds)
}
