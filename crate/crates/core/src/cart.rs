//! Multi-output CART classifier with a hard depth limit.
//!
//! Splits minimise the unweighted mean over outputs of the size-weighted child Gini
//! impurity. Candidate thresholds are midpoints between consecutive distinct values of a
//! feature within the node. Scores are compared exactly in integer arithmetic; on equal
//! scores the lower feature index wins, then the lower threshold.
//!
//! Every node, internal or leaf, stores the label vector it would predict as a leaf, so a
//! tree cut at depth `d` is exactly the tree grown with `max_depth = d`. By default each
//! output takes its own majority label (ties to the smaller label). Such a vector may
//! combine labels no training row had, so the training exact-match rate can dip as depth
//! grows. [`LeafRule::JointMode`] instead takes the most frequent complete label vector
//! (ties to the lexicographically smallest), which keeps that rate monotone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperparameterSet {
    pub max_depth: usize,
}

impl HyperparameterSet {
    pub fn new(max_depth: usize) -> Result<Self> {
        if max_depth == 0 {
            return Err(Error::InvalidInput("max_depth must be >= 1".into()));
        }
        Ok(HyperparameterSet { max_depth })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafRule {
    #[default]
    PerOutputMajority,
    JointMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Labels predicted for samples that stop at this node.
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub max_depth: usize,
    #[serde(default)]
    pub leaf_rule: LeafRule,
    pub depth: usize,
    pub n_features: usize,
    pub n_outputs: usize,
    pub n_classes: Vec<usize>,
    pub nodes: Vec<Node>,
}

/// `seed` is accepted for interface stability; the fit is fully determined by the tie rules.
pub fn fit(ds: &Dataset, h: HyperparameterSet, _seed: u64) -> Result<DecisionTreeModel> {
    fit_with_rule(ds, h, LeafRule::default())
}

pub fn fit_with_rule(ds: &Dataset, h: HyperparameterSet, rule: LeafRule) -> Result<DecisionTreeModel> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    HyperparameterSet::new(h.max_depth)?;
    Ok(Builder::new(ds, rule).grow(h.max_depth))
}

/// Grows the tree with no depth limit other than purity and separability.
pub fn fit_unbounded(ds: &Dataset) -> Result<DecisionTreeModel> {
    fit(ds, HyperparameterSet { max_depth: usize::MAX }, 0)
}

struct Builder<'a> {
    columns: Vec<Vec<f64>>,
    labels: &'a [Vec<usize>],
    rule: LeafRule,
    n_outputs: usize,
    n_classes: Vec<usize>,
    offsets: Vec<usize>,
    /// Per feature, sample ids sorted by value; each node owns a contiguous range.
    orders: Vec<Vec<u32>>,
    /// Sample ids partitioned alongside `orders`, for features-free bookkeeping.
    samples: Vec<u32>,
}

struct Task {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

/// `sl / nl + sr / nr` kept as an exact fraction.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(sl: u64, nl: u64, sr: u64, nr: u64) -> Self {
        Score {
            num: sl as u128 * nr as u128 + sr as u128 * nl as u128,
            den: nl as u128 * nr as u128,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

impl<'a> Builder<'a> {
    fn new(ds: &'a Dataset, rule: LeafRule) -> Self {
        let n = ds.n_samples();
        let f = ds.n_features();
        let columns: Vec<Vec<f64>> = (0..f).map(|j| ds.features().iter().map(|row| row[j]).collect()).collect();
        let n_outputs = ds.n_outputs();
        let n_classes: Vec<usize> = (0..n_outputs)
            .map(|o| ds.labels().iter().map(|l| l[o]).max().unwrap_or(0) + 1)
            .collect();
        let mut offsets = vec![0; n_outputs + 1];
        for o in 0..n_outputs {
            offsets[o + 1] = offsets[o] + n_classes[o];
        }
        let orders = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Builder {
            columns,
            labels: ds.labels(),
            rule,
            n_outputs,
            n_classes,
            offsets,
            orders,
            samples: (0..n as u32).collect(),
        }
    }

    fn counts(&self, samples: &[u32]) -> Vec<u32> {
        let mut counts = vec![0u32; self.offsets[self.n_outputs]];
        for &i in samples {
            for (o, &c) in self.labels[i as usize].iter().enumerate() {
                counts[self.offsets[o] + c] += 1;
            }
        }
        counts
    }

    fn majority(&self, counts: &[u32]) -> Vec<usize> {
        (0..self.n_outputs)
            .map(|o| {
                let block = &counts[self.offsets[o]..self.offsets[o + 1]];
                let mut best = 0;
                for (c, &k) in block.iter().enumerate() {
                    if k > block[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    fn joint_mode(&self, samples: &[u32]) -> Vec<usize> {
        let mut rows: Vec<&Vec<usize>> = samples.iter().map(|&i| &self.labels[i as usize]).collect();
        rows.sort_unstable();
        let (mut best, mut best_run) = (rows[0], 0);
        let mut r = 0;
        while r < rows.len() {
            let run = rows[r..].iter().take_while(|&&v| v == rows[r]).count();
            if run > best_run {
                (best, best_run) = (rows[r], run);
            }
            r += run;
        }
        best.clone()
    }

    fn is_pure(&self, counts: &[u32], m: usize) -> bool {
        (0..self.n_outputs).all(|o| counts[self.offsets[o]..self.offsets[o + 1]].iter().any(|&k| k as usize == m))
    }

    /// Best `(feature, threshold, n_left)` over the node's samples, if any feature varies.
    fn best_split(&self, start: usize, end: usize, total: &[u32]) -> Option<(usize, f64, usize)> {
        let m = end - start;
        let sum_sq = |c: &[u32]| c.iter().map(|&k| k as u64 * k as u64).sum::<u64>();
        let total_sq = sum_sq(total);
        let mut left = vec![0u32; total.len()];
        let mut best: Option<(Score, usize, f64, usize)> = None;

        for (j, order) in self.orders.iter().enumerate() {
            let slice = &order[start..end];
            let col = &self.columns[j];
            if col[slice[0] as usize] == col[slice[m - 1] as usize] {
                continue;
            }
            left.iter_mut().for_each(|k| *k = 0);
            let (mut sl, mut sr) = (0u64, total_sq);
            for k in 0..m - 1 {
                let i = slice[k] as usize;
                for (o, &c) in self.labels[i].iter().enumerate() {
                    let slot = self.offsets[o] + c;
                    let l = left[slot] as u64;
                    let r = (total[slot] - left[slot]) as u64;
                    sl += 2 * l + 1;
                    sr -= 2 * r - 1;
                    left[slot] += 1;
                }
                let (a, b) = (col[i], col[slice[k + 1] as usize]);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as u64;
                let score = Score::new(sl, nl, sr, m as u64 - nl);
                if best.as_ref().is_none_or(|(s, ..)| score.beats(s)) {
                    best = Some((score, j, midpoint(a, b), k + 1));
                }
            }
        }
        best.map(|(_, j, t, nl)| (j, t, nl))
    }

    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64, scratch: &mut Vec<u32>) {
        let col = &self.columns[feature];
        for order in self.orders.iter_mut().chain(std::iter::once(&mut self.samples)) {
            scratch.clear();
            let slice = &mut order[start..end];
            let mut w = 0;
            for r in 0..slice.len() {
                let i = slice[r];
                if col[i as usize] <= threshold {
                    slice[w] = i;
                    w += 1;
                } else {
                    scratch.push(i);
                }
            }
            slice[w..].copy_from_slice(scratch);
        }
    }

    fn grow(mut self, max_depth: usize) -> DecisionTreeModel {
        let n = self.samples.len();
        let mut nodes = vec![Node { labels: Vec::new(), split: None }];
        let mut stack = vec![Task { node: 0, start: 0, end: n, depth: 0 }];
        let mut realized = 0;
        let mut scratch = Vec::new();

        while let Some(Task { node, start, end, depth }) = stack.pop() {
            let samples = &self.samples[start..end];
            let counts = self.counts(samples);
            nodes[node].labels = match self.rule {
                LeafRule::JointMode => self.joint_mode(samples),
                LeafRule::PerOutputMajority => self.majority(&counts),
            };
            realized = realized.max(depth);

            let m = end - start;
            if depth >= max_depth || m < 2 || self.is_pure(&counts, m) {
                continue;
            }
            let Some((feature, threshold, n_left)) = self.best_split(start, end, &counts) else {
                continue;
            };
            self.partition(start, end, feature, threshold, &mut scratch);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node { labels: Vec::new(), split: None });
            nodes.push(Node { labels: Vec::new(), split: None });
            nodes[node].split = Some(Split { feature, threshold, left, right });
            stack.push(Task { node: right, start: start + n_left, end, depth: depth + 1 });
            stack.push(Task { node: left, start, end: start + n_left, depth: depth + 1 });
        }

        DecisionTreeModel {
            max_depth,
            leaf_rule: self.rule,
            depth: realized,
            n_features: self.columns.len(),
            n_outputs: self.n_outputs,
            n_classes: self.n_classes,
            nodes,
        }
    }
}

/// Threshold between two distinct sorted values `a < b`; always satisfies `a <= t < b`.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t < b {
        t
    } else {
        a
    }
}

impl DecisionTreeModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.predict_at_depth(x, usize::MAX)
    }

    /// Prediction of this tree cut at `depth`.
    pub fn predict_at_depth(&self, x: &[f64], depth: usize) -> Result<Vec<usize>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(self.leaf_for(x, depth).labels.clone())
    }

    /// Leaf reached by `x`; `x` must have the training width.
    pub fn leaf_for(&self, x: &[f64], depth: usize) -> &Node {
        let mut node = &self.nodes[0];
        let mut d = 0;
        while let (Some(split), true) = (&node.split, d < depth) {
            node = if x[split.feature] <= split.threshold {
                &self.nodes[split.left]
            } else {
                &self.nodes[split.right]
            };
            d += 1;
        }
        node
    }

    pub fn tree_depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// The tree cut at `depth`, renumbered exactly as [`fit`] would number it.
    pub fn truncate(&self, depth: usize) -> DecisionTreeModel {
        let mut nodes = vec![Node { labels: Vec::new(), split: None }];
        let mut stack = vec![(0usize, 0usize, 0usize)];
        let mut realized = 0;
        while let Some((src, dst, d)) = stack.pop() {
            nodes[dst].labels = self.nodes[src].labels.clone();
            realized = realized.max(d);
            let Some(split) = self.nodes[src].split.filter(|_| d < depth) else { continue };
            let left = nodes.len();
            nodes.push(Node { labels: Vec::new(), split: None });
            nodes.push(Node { labels: Vec::new(), split: None });
            nodes[dst].split = Some(Split { left, right: left + 1, ..split });
            stack.push((split.right, left + 1, d + 1));
            stack.push((split.left, left, d + 1));
        }
        DecisionTreeModel {
            max_depth: depth,
            leaf_rule: self.leaf_rule,
            depth: realized,
            n_features: self.n_features,
            n_outputs: self.n_outputs,
            n_classes: self.n_classes.clone(),
            nodes,
        }
    }

    fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("model file: {msg}")));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if node.labels.len() != self.n_outputs {
                return bad(format!("node {id} has {} labels", node.labels.len()));
            }
            if let Some(s) = node.split {
                if s.feature >= self.n_features || s.left >= self.nodes.len() || s.right >= self.nodes.len() {
                    return bad(format!("node {id} has an out-of-range split"));
                }
                if s.left <= id || s.right <= id || s.left == s.right {
                    return bad(format!("node {id} has invalid children"));
                }
                parents[s.left] += 1;
                parents[s.right] += 1;
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return bad("nodes do not form a binary tree".into());
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: DecisionTreeModel = crate::io::read_json(path)?;
        model.check_structure()?;
        Ok(model)
    }
}

pub fn predict(m: &DecisionTreeModel, x: &[f64]) -> Result<Vec<usize>> {
    m.predict(x)
}

pub fn tree_depth(m: &DecisionTreeModel) -> usize {
    m.tree_depth()
}

pub fn node_count(m: &DecisionTreeModel) -> usize {
    m.node_count()
}
