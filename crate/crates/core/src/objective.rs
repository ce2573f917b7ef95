//! Cross-validated placement objective `P(h)` for a tree of maximum depth `h`.
//!
//! Each fold's tree predicts a placement for every validation row; the placement is
//! checked against that row's own topology and chain. Invalid predictions count toward
//! `ip`. The delay term averages `avg_cp_delay` over the valid predictions only. A fold
//! with no valid prediction uses [`delay_ceiling`] as its delay term.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit, fit_unbounded, DecisionTreeModel, HyperparameterSet};
use crate::error::{Error, Result};
use crate::features::{Dataset, FoldSplit};
use crate::net_model::{SfcSpec, Topology};
use crate::placer::{avg_cp_delay, validate_placement, Placement};
use crate::pso::ObjectiveResult;

/// Dataset rows together with the snapshot each row was extracted from.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub ds: &'a Dataset,
    pub snapshots: &'a [(Topology, SfcSpec)],
}

impl<'a> EvalContext<'a> {
    pub fn new(ds: &'a Dataset, snapshots: &'a [(Topology, SfcSpec)]) -> Result<Self> {
        if ds.n_samples() != snapshots.len() {
            return Err(Error::DimensionMismatch {
                what: "snapshots per dataset row",
                expected: ds.n_samples(),
                actual: snapshots.len(),
            });
        }
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(EvalContext { ds, snapshots })
    }

    fn check_folds(&self, folds: &FoldSplit) -> Result<()> {
        let n = self.ds.n_samples();
        for f in &folds.folds {
            if f.validation.is_empty() || f.train.is_empty() {
                return Err(Error::InvalidInput("every fold needs training and validation rows".into()));
            }
            for &i in f.train.iter().chain(&f.validation) {
                if i >= n {
                    return Err(Error::InvalidInput(format!("fold row {i} out of range for {n} rows")));
                }
            }
        }
        Ok(())
    }
}

/// 99th percentile (nearest rank) of the teacher's per-row average CP delay, read from
/// the dataset labels.
pub fn delay_ceiling(ctx: &EvalContext) -> f64 {
    let mut delays: Vec<f64> = ctx
        .ds
        .labels()
        .iter()
        .zip(ctx.snapshots)
        .map(|(y, (topo, sfc))| avg_cp_delay(topo, &Placement::new(y.clone()), sfc))
        .collect();
    delays.sort_by(f64::total_cmp);
    let rank = ((0.99 * delays.len() as f64).ceil() as usize).max(1);
    delays[rank - 1]
}

/// Outcome of one fold's validation rows at one depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub n_rows: usize,
    pub ip: u64,
    /// `avg_cp_delay` of each valid prediction, in validation order.
    pub valid_delays: Vec<f64>,
}

impl FoldEval {
    pub fn objective(&self, ceiling: f64) -> ObjectiveResult {
        let delay = if self.valid_delays.is_empty() {
            ceiling
        } else {
            self.valid_delays.iter().sum::<f64>() / self.valid_delays.len() as f64
        };
        ObjectiveResult::new(delay, self.ip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEval {
    pub h: usize,
    pub folds: Vec<FoldEval>,
}

impl DepthEval {
    pub fn fold_objectives(&self, ceiling: f64) -> Vec<ObjectiveResult> {
        self.folds.iter().map(|f| f.objective(ceiling)).collect()
    }

    /// Mean of the fold objectives.
    pub fn p(&self, ceiling: f64) -> f64 {
        self.fold_objectives(ceiling).iter().map(|r| r.o_pso).sum::<f64>() / self.folds.len() as f64
    }

    pub fn mean_ip(&self) -> f64 {
        self.folds.iter().map(|f| f.ip as f64).sum::<f64>() / self.folds.len() as f64
    }

    /// Invalid predictions over all validation rows.
    pub fn ip_rate(&self) -> f64 {
        let ip: u64 = self.folds.iter().map(|f| f.ip).sum();
        let rows: usize = self.folds.iter().map(|f| f.n_rows).sum();
        ip as f64 / rows as f64
    }
}

fn evaluate_fold(ctx: &EvalContext, rows: &[usize], predict: impl Fn(&[f64]) -> Vec<usize>) -> FoldEval {
    let mut eval = FoldEval { n_rows: rows.len(), ip: 0, valid_delays: Vec::new() };
    for &r in rows {
        let (topo, sfc) = &ctx.snapshots[r];
        let p = Placement::new(predict(&ctx.ds.features()[r]));
        if validate_placement(topo, sfc, &p).valid {
            eval.valid_delays.push(avg_cp_delay(topo, &p, sfc));
        } else {
            eval.ip += 1;
        }
    }
    eval
}

/// Fits every fold at depth `h` from scratch and evaluates it.
pub fn evaluate_depth(h: usize, ctx: &EvalContext, folds: &FoldSplit) -> Result<DepthEval> {
    ctx.check_folds(folds)?;
    let hp = HyperparameterSet::new(h)?;
    let folds = folds
        .folds
        .par_iter()
        .map(|f| {
            let tree = fit(&ctx.ds.subset(&f.train), hp, 0)?;
            Ok(evaluate_fold(ctx, &f.validation, |x| tree.leaf_for(x, usize::MAX).labels.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DepthEval { h, folds })
}

/// `P(h)`: mean over folds of delay term plus `reg_term(ip)`.
pub fn objective_full(h: usize, ds: &Dataset, snapshots: &[(Topology, SfcSpec)], folds: &FoldSplit) -> Result<f64> {
    let ctx = EvalContext::new(ds, snapshots)?;
    Ok(evaluate_depth(h, &ctx, folds)?.p(delay_ceiling(&ctx)))
}

/// Mean invalid-prediction count over folds.
pub fn objective_invalid_only(
    h: usize,
    ds: &Dataset,
    snapshots: &[(Topology, SfcSpec)],
    folds: &FoldSplit,
) -> Result<f64> {
    let ctx = EvalContext::new(ds, snapshots)?;
    Ok(evaluate_depth(h, &ctx, folds)?.mean_ip())
}

/// Evaluates many depths against one set of folds.
///
/// Each fold's tree is grown once without a depth limit; the tree for depth `h` is that
/// tree cut at `h`, which is identical to fitting with `max_depth = h`. Results are
/// cached per depth.
pub struct CrossValidator<'a> {
    ctx: EvalContext<'a>,
    folds: &'a FoldSplit,
    trees: Vec<DecisionTreeModel>,
    ceiling: f64,
    cache: Mutex<BTreeMap<usize, Arc<DepthEval>>>,
}

impl<'a> CrossValidator<'a> {
    pub fn new(ctx: EvalContext<'a>, folds: &'a FoldSplit) -> Result<Self> {
        ctx.check_folds(folds)?;
        let trees = folds
            .folds
            .par_iter()
            .map(|f| fit_unbounded(&ctx.ds.subset(&f.train)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CrossValidator {
            ceiling: delay_ceiling(&ctx),
            ctx,
            folds,
            trees,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    /// Deepest depth at which any fold tree still splits; deeper cuts change nothing.
    pub fn saturation_depth(&self) -> usize {
        self.trees.iter().map(|t| t.tree_depth()).max().unwrap_or(0)
    }

    pub fn eval(&self, h: usize) -> Result<Arc<DepthEval>> {
        HyperparameterSet::new(h)?;
        if let Some(e) = self.cache.lock().expect("cache lock").get(&h) {
            return Ok(Arc::clone(e));
        }
        let folds = self
            .folds
            .folds
            .iter()
            .zip(&self.trees)
            .map(|(f, tree)| evaluate_fold(&self.ctx, &f.validation, |x| tree.leaf_for(x, h).labels.clone()))
            .collect();
        let e = Arc::new(DepthEval { h, folds });
        self.cache.lock().expect("cache lock").insert(h, Arc::clone(&e));
        Ok(e)
    }

    pub fn objective_full(&self, h: usize) -> Result<f64> {
        Ok(self.eval(h)?.p(self.ceiling))
    }

    pub fn objective_invalid_only(&self, h: usize) -> Result<f64> {
        Ok(self.eval(h)?.mean_ip())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_dataset, kfold, Fold, FeatureSchema};
    use crate::net_model::{build_sfc, generate_topology, GenConfig};
    use crate::placer::place_teacher;
    use crate::pso::reg_term;

    fn batch(n: u64) -> (Dataset, Vec<(Topology, SfcSpec)>) {
        let cfg = GenConfig::default();
        let rows: Vec<_> = (0..n)
            .map(|i| {
                let t = generate_topology(&cfg, i).unwrap();
                let s = build_sfc(&cfg, i).unwrap();
                let p = place_teacher(&t, &s).unwrap();
                (t, s, p)
            })
            .collect();
        let ds = build_dataset(FeatureSchema::for_snapshot(&rows[0].0, &rows[0].1), &rows).unwrap();
        (ds, rows.into_iter().map(|(t, s, _)| (t, s)).collect())
    }

    #[test]
    fn fold_objective_arithmetic() {
        let f = FoldEval { n_rows: 2, ip: 0, valid_delays: vec![500.0, 700.0] };
        assert_eq!(f.objective(1e9).o_pso, 600.0);

        let dead = FoldEval { n_rows: 5, ip: 5, valid_delays: vec![] };
        assert_eq!(dead.objective(1234.0).o_pso, 1234.0 + 1000.0 * 6f64.log2());

        let two = DepthEval {
            h: 3,
            folds: vec![
                FoldEval { n_rows: 1, ip: 0, valid_delays: vec![600.0] },
                FoldEval { n_rows: 1, ip: 0, valid_delays: vec![800.0] },
            ],
        };
        assert_eq!(two.p(0.0), 700.0);

        let invalid = DepthEval {
            h: 3,
            folds: vec![
                FoldEval { n_rows: 4, ip: 3, valid_delays: vec![1.0] },
                FoldEval { n_rows: 4, ip: 3, valid_delays: vec![1.0] },
            ],
        };
        assert_eq!(invalid.mean_ip(), 3.0);
        assert_eq!(invalid.ip_rate(), 0.75);
    }

    #[test]
    fn ceiling_is_nearest_rank_p99() {
        let (ds, snaps) = batch(30);
        let ctx = EvalContext::new(&ds, &snaps).unwrap();
        let mut d: Vec<f64> = ds
            .labels()
            .iter()
            .zip(&snaps)
            .map(|(y, (t, s))| avg_cp_delay(t, &Placement::new(y.clone()), s))
            .collect();
        d.sort_by(f64::total_cmp);
        // ceil(0.99 * 30) = 30, so the maximum
        assert_eq!(delay_ceiling(&ctx), d[29]);
    }

    #[test]
    fn cached_truncation_matches_direct_fits() {
        let (ds, snaps) = batch(60);
        let ctx = EvalContext::new(&ds, &snaps).unwrap();
        let folds = kfold(&ds, 3, 11).unwrap();
        let cv = CrossValidator::new(ctx, &folds).unwrap();
        for h in [1, 2, 4, 7, 12, 40] {
            let direct = evaluate_depth(h, &ctx, &folds).unwrap();
            assert_eq!(*cv.eval(h).unwrap(), direct, "depth {h}");
            assert_eq!(cv.objective_full(h).unwrap(), objective_full(h, &ds, &snaps, &folds).unwrap());
            assert_eq!(cv.objective_invalid_only(h).unwrap(), objective_invalid_only(h, &ds, &snaps, &folds).unwrap());
        }
    }

    #[test]
    fn zero_invalid_reduces_to_plain_delay_average() {
        let (ds, snaps) = batch(40);
        let ctx = EvalContext::new(&ds, &snaps).unwrap();
        // training and validating on the same rows at full depth reproduces the teacher
        let all: Vec<usize> = (0..40).collect();
        let folds = FoldSplit { folds: vec![Fold { train: all.clone(), validation: all }] };
        let e = evaluate_depth(1000, &ctx, &folds).unwrap();
        assert_eq!(e.folds[0].ip, 0);
        let teacher: Vec<f64> = ds
            .labels()
            .iter()
            .zip(&snaps)
            .map(|(y, (t, s))| avg_cp_delay(t, &Placement::new(y.clone()), s))
            .collect();
        let mean = teacher.iter().sum::<f64>() / teacher.len() as f64;
        assert_eq!(e.p(0.0), mean);
        assert_eq!(reg_term(0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_misaligned_context_and_bad_folds() {
        let (ds, snaps) = batch(10);
        assert!(EvalContext::new(&ds, &snaps[..9]).is_err());
        let ctx = EvalContext::new(&ds, &snaps).unwrap();
        let bad = FoldSplit { folds: vec![Fold { train: vec![0, 1], validation: vec![10] }] };
        assert!(evaluate_depth(3, &ctx, &bad).is_err());
        assert!(evaluate_depth(0, &ctx, &kfold(&ds, 2, 0).unwrap()).is_err());
    }
}
