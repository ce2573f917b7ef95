//! Particle swarm over one integer hyperparameter, and the regularized placement objective.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Penalty for `ip` invalid predictions: `1000 * log2(ip + 1)`.
pub fn reg_term(ip: i64) -> Result<f64> {
    if ip < 0 {
        return Err(Error::InvalidInput(format!("invalid-prediction count {ip} is negative")));
    }
    Ok(1000.0 * ((ip + 1) as f64).log2())
}

/// One fold's objective: mean per-row CP delay plus the invalid-count penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveResult {
    pub avg_delay_cp: f64,
    pub ip: u64,
    pub reg_term: f64,
    pub o_pso: f64,
}

impl ObjectiveResult {
    pub fn new(avg_delay_cp: f64, ip: u64) -> Self {
        let reg = 1000.0 * ((ip + 1) as f64).log2();
        ObjectiveResult {
            avg_delay_cp,
            ip,
            reg_term: reg,
            o_pso: avg_delay_cp + reg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoParams {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub lo: i64,
    pub hi: i64,
    pub seed: u64,
}

impl Default for PsoParams {
    fn default() -> Self {
        PsoParams {
            swarm_size: 10,
            iterations: 30,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            lo: 2,
            hi: 100,
            seed: 0,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("pso: {m}")));
        if self.swarm_size < 2 {
            return bad(format!("swarm_size must be >= 2, got {}", self.swarm_size));
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.inertia > 0.0 && self.inertia <= 1.0) {
            return bad(format!("inertia must lie in (0, 1], got {}", self.inertia));
        }
        if !(self.cognitive > 0.0 && self.cognitive.is_finite()) || !(self.social > 0.0 && self.social.is_finite()) {
            return bad("cognitive and social coefficients must be positive".into());
        }
        if self.lo >= self.hi {
            return bad(format!("bounds [{}, {}] are empty", self.lo, self.hi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub best_h: i64,
    pub best_objective: f64,
}

/// Global best after the initial evaluation (iteration 0) and after every iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PsoTrace {
    pub entries: Vec<TraceEntry>,
}

impl PsoTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_csv_rows(path, &self.entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoOutcome {
    pub best_h: i64,
    pub best_value: f64,
    pub trace: PsoTrace,
    /// Every distinct integer evaluated, with its value.
    pub evaluations: BTreeMap<i64, f64>,
}

/// Lexicographic `(value, h)`: equal values prefer the smaller depth.
fn better(a: (f64, i64), b: (f64, i64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Minimizes `f` over the integers in `[lo, hi]`.
///
/// Positions are continuous, rounded and clamped for evaluation, and every integer is
/// evaluated at most once. New integers within an iteration are evaluated in parallel;
/// random draws happen sequentially, so the run depends only on `params.seed`.
pub fn pso_minimize<F>(f: F, params: &PsoParams) -> Result<PsoOutcome>
where
    F: Fn(i64) -> Result<f64> + Sync,
{
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (lo, hi) = (params.lo as f64, params.hi as f64);
    let vmax = hi - lo;
    let n = params.swarm_size;

    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-vmax..=vmax)).collect();
    let mut memo: BTreeMap<i64, f64> = BTreeMap::new();

    let to_int = |p: f64| (p.round() as i64).clamp(params.lo, params.hi);
    let evaluate = |xs: &[f64], memo: &mut BTreeMap<i64, f64>| -> Result<Vec<f64>> {
        let mut fresh: Vec<i64> = xs.iter().map(|&p| to_int(p)).filter(|h| !memo.contains_key(h)).collect();
        fresh.sort_unstable();
        fresh.dedup();
        let values: Vec<Result<f64>> = fresh.par_iter().map(|&h| f(h)).collect();
        for (h, r) in fresh.into_iter().zip(values) {
            let value = r.map_err(|e| Error::Objective { h, source: Box::new(e) })?;
            if value.is_nan() {
                return Err(Error::Objective {
                    h,
                    source: Box::new(Error::InvalidInput("objective returned NaN".into())),
                });
            }
            memo.insert(h, value);
        }
        Ok(xs.iter().map(|&p| memo[&to_int(p)]).collect())
    };

    let values = evaluate(&x, &mut memo)?;
    let mut pbest: Vec<(f64, f64, i64)> = x.iter().zip(&values).map(|(&p, &val)| (p, val, to_int(p))).collect();
    let mut gbest = pbest[0];
    for &p in &pbest[1..] {
        if better((p.1, p.2), (gbest.1, gbest.2)) {
            gbest = p;
        }
    }
    let mut trace = PsoTrace::default();
    trace.entries.push(TraceEntry { iteration: 0, best_h: gbest.2, best_objective: gbest.1 });

    for it in 1..=params.iterations {
        for i in 0..n {
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            v[i] = params.inertia * v[i]
                + params.cognitive * r1 * (pbest[i].0 - x[i])
                + params.social * r2 * (gbest.0 - x[i]);
            v[i] = v[i].clamp(-vmax, vmax);
            x[i] = (x[i] + v[i]).clamp(lo, hi);
        }
        let values = evaluate(&x, &mut memo)?;
        for i in 0..n {
            let cand = (x[i], values[i], to_int(x[i]));
            if better((cand.1, cand.2), (pbest[i].1, pbest[i].2)) {
                pbest[i] = cand;
            }
            if better((cand.1, cand.2), (gbest.1, gbest.2)) {
                gbest = cand;
            }
        }
        trace.entries.push(TraceEntry { iteration: it, best_h: gbest.2, best_objective: gbest.1 });
    }

    Ok(PsoOutcome {
        best_h: gbest.2,
        best_value: gbest.1,
        trace,
        evaluations: memo,
    })
}
