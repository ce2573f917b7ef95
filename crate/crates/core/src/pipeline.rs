//! Three-stage depth selection.
//!
//! Stage 1 searches for the depth with the fewest invalid predictions, widening the
//! upper bound until the error threshold is met, and records the invalid-rate curve over
//! the searched interval. The functional range is read off that curve. Stage 2 minimizes
//! the full objective over the range. Stage 3 fits the final tree at the chosen depth.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit, DecisionTreeModel, HyperparameterSet};
use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::objective::CrossValidator;
use crate::pso::{pso_minimize, PsoParams, PsoTrace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    #[default]
    Exhaustive,
    Pso,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    /// Invalid-prediction rate that starts the functional range.
    pub error_threshold: f64,
    pub max_tolerable_error: f64,
    pub steady_window: usize,
    /// Relative tolerance under which stage-2 objective values count as one plateau.
    pub plateau_epsilon: f64,
    /// Largest upper bound stage 1 may double to.
    pub max_upper_bound: i64,
    #[serde(default)]
    pub stage2_mode: Stage2Mode,
    /// Stage-1 swarm; its bounds are the initial search interval.
    pub pso: PsoParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            error_threshold: 0.075,
            max_tolerable_error: 0.10,
            steady_window: 10,
            plateau_epsilon: 0.001,
            max_upper_bound: 800,
            stage2_mode: Stage2Mode::Exhaustive,
            pso: PsoParams::default(),
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("pipeline: {m}")));
        self.pso.validate()?;
        if !(0.0..=1.0).contains(&self.error_threshold) {
            return bad(format!("error_threshold {} outside [0, 1]", self.error_threshold));
        }
        if !(0.0..=1.0).contains(&self.max_tolerable_error) {
            return bad(format!("max_tolerable_error {} outside [0, 1]", self.max_tolerable_error));
        }
        if self.steady_window == 0 {
            return bad("steady_window must be >= 1".into());
        }
        if !(self.plateau_epsilon >= 0.0 && self.plateau_epsilon.is_finite()) {
            return bad(format!("plateau_epsilon {} must be a non-negative number", self.plateau_epsilon));
        }
        if self.pso.lo < 1 {
            return bad(format!("depth bounds must start at >= 1, got {}", self.pso.lo));
        }
        if self.max_upper_bound < self.pso.hi {
            return bad(format!("max_upper_bound {} below initial bound {}", self.max_upper_bound, self.pso.hi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalRange {
    pub a1: i64,
    pub a2: i64,
}

impl FunctionalRange {
    pub fn depths(&self) -> RangeInclusive<i64> {
        self.a1..=self.a2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub depth: i64,
    pub ip_rate: f64,
    pub mean_ip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Round {
    pub upper_bound: i64,
    pub best_h: i64,
    pub best_mean_ip: f64,
    pub best_ip_rate: f64,
    pub trace: PsoTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Outcome {
    pub rounds: Vec<Stage1Round>,
    /// Invalid-prediction rate at every depth of the final search interval.
    pub curve: Vec<CurvePoint>,
}

impl Stage1Outcome {
    pub fn final_round(&self) -> &Stage1Round {
        self.rounds.last().expect("stage 1 always runs a round")
    }

    pub fn rate_at(&self, depth: i64) -> Option<f64> {
        self.curve.iter().find(|p| p.depth == depth).map(|p| p.ip_rate)
    }
}

pub fn stage1(cv: &CrossValidator, params: &PipelineParams) -> Result<Stage1Outcome> {
    params.validate()?;
    let mut rounds = Vec::new();
    let mut pso = params.pso;
    loop {
        let out = pso_minimize(|h| cv.objective_invalid_only(h as usize), &pso)?;
        let rate = cv.eval(out.best_h as usize)?.ip_rate();
        rounds.push(Stage1Round {
            upper_bound: pso.hi,
            best_h: out.best_h,
            best_mean_ip: out.best_value,
            best_ip_rate: rate,
            trace: out.trace,
        });
        if rate <= params.error_threshold {
            break;
        }
        let next = pso.hi.saturating_mul(2);
        if next > params.max_upper_bound {
            return Err(Error::ThresholdUnreachable {
                best_rate: rate,
                best_depth: out.best_h,
                threshold: params.error_threshold,
                upper_bound: pso.hi,
            });
        }
        pso = PsoParams { hi: next, seed: pso.seed.wrapping_add(1), ..pso };
    }
    let curve = (pso.lo..=pso.hi)
        .into_par_iter()
        .map(|h| {
            let e = cv.eval(h as usize)?;
            Ok(CurvePoint { depth: h, ip_rate: e.ip_rate(), mean_ip: e.mean_ip() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage1Outcome { rounds, curve })
}

/// Range over a contiguous depth curve of invalid rates.
///
/// `a1` is the first depth at or below `threshold`. The steady depth is the first depth
/// from `a1` on with no strictly lower rate in the following `steady_window` depths (the
/// window is cut at the end of the curve). `a2` is the steady depth plus the window,
/// capped at the last depth of the curve.
pub fn detect_functional_range(curve: &[(i64, f64)], threshold: f64, steady_window: usize) -> Result<FunctionalRange> {
    if curve.is_empty() {
        return Err(Error::InvalidInput("empty curve".into()));
    }
    if curve.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(Error::InvalidInput("curve depths must be consecutive integers".into()));
    }
    let first = curve.iter().position(|&(_, r)| r <= threshold).ok_or(Error::RangeNotFound { threshold })?;
    let steady = (first..curve.len())
        .find(|&i| {
            let end = (i + steady_window).min(curve.len() - 1);
            curve[i + 1..=end].iter().all(|&(_, r)| r >= curve[i].1)
        })
        .expect("the last depth is always steady");
    let last = curve[curve.len() - 1].0;
    Ok(FunctionalRange {
        a1: curve[first].0,
        a2: (curve[steady].0 + steady_window as i64).min(last),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Point {
    pub depth: i64,
    pub objective: f64,
    pub mean_ip: f64,
    pub ip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Outcome {
    pub mode: Stage2Mode,
    /// Evaluated depths in increasing order.
    pub points: Vec<Stage2Point>,
    pub raw_argmin: i64,
    pub h_star: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PsoTrace>,
}

/// Smallest depth whose objective lies within `epsilon` (relative) of the minimum, and
/// the plain argmin (first on ties). `points` must be sorted by depth.
pub fn plateau_choice(points: &[(i64, f64)], epsilon: f64) -> (i64, i64) {
    let mut argmin = points[0];
    for &p in &points[1..] {
        if p.1 < argmin.1 {
            argmin = p;
        }
    }
    let limit = argmin.1 + epsilon * argmin.1.abs();
    let chosen = points.iter().find(|&&(_, v)| v <= limit).expect("the minimum is within its own limit");
    (chosen.0, argmin.0)
}

pub fn stage2(range: FunctionalRange, cv: &CrossValidator, params: &PipelineParams) -> Result<Stage2Outcome> {
    let point = |h: i64| -> Result<Stage2Point> {
        let e = cv.eval(h as usize)?;
        Ok(Stage2Point { depth: h, objective: e.p(cv.ceiling()), mean_ip: e.mean_ip(), ip_rate: e.ip_rate() })
    };
    let (depths, trace): (Vec<i64>, Option<PsoTrace>) = match params.stage2_mode {
        Stage2Mode::Exhaustive => (range.depths().collect(), None),
        Stage2Mode::Pso if range.a1 == range.a2 => (vec![range.a1], None),
        Stage2Mode::Pso => {
            let pso = PsoParams { lo: range.a1, hi: range.a2, ..params.pso };
            let out = pso_minimize(|h| cv.objective_full(h as usize), &pso)?;
            (out.evaluations.keys().copied().collect(), Some(out.trace))
        }
    };
    let points = depths.into_par_iter().map(point).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(i64, f64)> = points.iter().map(|p| (p.depth, p.objective)).collect();
    let (h_star, raw_argmin) = plateau_choice(&pairs, params.plateau_epsilon);
    Ok(Stage2Outcome { mode: params.stage2_mode, points, raw_argmin, h_star, trace })
}

pub fn stage3_build(ds: &Dataset, h_star: i64) -> Result<DecisionTreeModel> {
    let depth = usize::try_from(h_star).map_err(|_| Error::InvalidInput(format!("depth {h_star} is negative")))?;
    fit(ds, HyperparameterSet::new(depth)?, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub params: PipelineParams,
    pub n_train: usize,
    pub n_folds: usize,
    pub delay_ceiling_us: f64,
    pub stage1: Stage1Outcome,
    pub functional_range: FunctionalRange,
    pub stage2: Stage2Outcome,
    pub h_star: i64,
    pub model_depth: usize,
    pub model_nodes: usize,
}

/// Runs all three stages; the caller owns fold construction and persistence.
pub fn run_pipeline(ds: &Dataset, cv: &CrossValidator, n_folds: usize, params: &PipelineParams) -> Result<(PipelineReport, DecisionTreeModel)> {
    params.validate()?;
    let s1 = stage1(cv, params)?;
    let curve: Vec<(i64, f64)> = s1.curve.iter().map(|p| (p.depth, p.ip_rate)).collect();
    let range = detect_functional_range(&curve, params.error_threshold, params.steady_window)?;
    let s2 = stage2(range, cv, params)?;
    let model = stage3_build(ds, s2.h_star)?;
    let report = PipelineReport {
        params: *params,
        n_train: ds.n_samples(),
        n_folds,
        delay_ceiling_us: cv.ceiling(),
        functional_range: range,
        h_star: s2.h_star,
        stage1: s1,
        stage2: s2,
        model_depth: model.tree_depth(),
        model_nodes: model.node_count(),
    };
    Ok((report, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: impl IntoIterator<Item = (i64, f64)>) -> Vec<(i64, f64)> {
        points.into_iter().collect()
    }

    /// Falls to 7.5% at depth 20, keeps falling, and is zero from 25 on.
    fn reference_curve() -> Vec<(i64, f64)> {
        curve((2..=100).map(|d| {
            let r = match d {
                ..=19 => 0.40 - 0.017 * (d - 2) as f64,
                20 => 0.075,
                21..=24 => 0.075 - 0.015 * (d - 20) as f64,
                _ => 0.0,
            };
            (d, r)
        }))
    }

    #[test]
    fn reference_curve_gives_twenty_to_thirty_five() {
        let c = reference_curve();
        assert!(c[17].1 > 0.075);
        let r = detect_functional_range(&c, 0.075, 10).unwrap();
        assert_eq!(r, FunctionalRange { a1: 20, a2: 35 });
    }

    #[test]
    fn never_below_threshold_is_not_found() {
        let c = curve((2..=50).map(|d| (d, 0.5 - d as f64 * 0.001)));
        assert!(matches!(detect_functional_range(&c, 0.075, 10), Err(Error::RangeNotFound { .. })));
    }

    #[test]
    fn all_zero_curve_starts_at_first_depth() {
        let c = curve((2..=100).map(|d| (d, 0.0)));
        assert_eq!(detect_functional_range(&c, 0.075, 10).unwrap(), FunctionalRange { a1: 2, a2: 12 });
    }

    #[test]
    fn a2_is_capped_at_curve_end() {
        let c = curve((2..=30).map(|d| (d, if d < 28 { 0.2 } else { 0.0 })));
        assert_eq!(detect_functional_range(&c, 0.075, 10).unwrap(), FunctionalRange { a1: 28, a2: 30 });
    }

    #[test]
    fn gaps_in_curve_rejected() {
        assert!(detect_functional_range(&[(2, 0.0), (4, 0.0)], 0.075, 10).is_err());
    }

    #[test]
    fn plateau_picks_start_of_flat_run() {
        // strictly falling to 29, then flat within 0.05%
        let pts: Vec<(i64, f64)> = (20..=35)
            .map(|d| (d, if d < 29 { 900.0 - 10.0 * d as f64 } else { 610.0 - 0.01 * (d - 29) as f64 }))
            .collect();
        let (h, raw) = plateau_choice(&pts, 0.001);
        assert_eq!(h, 29);
        assert_eq!(raw, 35);
    }

    #[test]
    fn convex_objective_gives_exact_argmin() {
        let pts: Vec<(i64, f64)> = (20..=35).map(|d| (d, 600.0 + ((d - 27) * (d - 27)) as f64)).collect();
        assert_eq!(plateau_choice(&pts, 0.001), (27, 27));
    }

    #[test]
    fn params_validation() {
        assert!(PipelineParams::default().validate().is_ok());
        let p = PipelineParams { steady_window: 0, ..PipelineParams::default() };
        assert!(p.validate().is_err());
        let p = PipelineParams { max_upper_bound: 50, ..PipelineParams::default() };
        assert!(p.validate().is_err());
    }
}
