//! Head-to-head comparison of placement strategies on a held-out batch.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::{SfcSpec, Topology};
use crate::placer::{cp_delays, pair_delays, validate_placement, Placement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub topology_index: u64,
    pub valid: bool,
    /// Empty for invalid rows.
    pub cp_delays_us: Vec<f64>,
    pub pair_delays_us: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub name: String,
    pub rows: Vec<RowResult>,
    /// Mean over every CP of every valid row; `None` when no row is valid.
    pub mean_cp_delay_us: Option<f64>,
    pub mean_pair_delay_us: Option<f64>,
    pub ip_rate: f64,
}

fn mean_of<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl StrategyResult {
    pub fn from_rows(name: impl Into<String>, rows: Vec<RowResult>) -> Self {
        let invalid = rows.iter().filter(|r| !r.valid).count();
        StrategyResult {
            name: name.into(),
            mean_cp_delay_us: mean_of(rows.iter().flat_map(|r| &r.cp_delays_us)),
            mean_pair_delay_us: mean_of(rows.iter().flat_map(|r| &r.pair_delays_us)),
            ip_rate: if rows.is_empty() { 0.0 } else { invalid as f64 / rows.len() as f64 },
            rows,
        }
    }

    pub fn n_valid(&self) -> usize {
        self.rows.iter().filter(|r| r.valid).count()
    }
}

/// Places, validates and measures every test row. A placement error counts as invalid.
pub fn evaluate_strategy<F>(name: &str, place: F, test: &[(Topology, SfcSpec)]) -> StrategyResult
where
    F: Fn(&Topology, &SfcSpec) -> Result<Placement> + Sync,
{
    let rows = test
        .par_iter()
        .map(|(topo, sfc)| {
            let placed = place(topo, sfc).ok().filter(|p| validate_placement(topo, sfc, p).valid);
            match placed {
                Some(p) => RowResult {
                    topology_index: topo.index(),
                    valid: true,
                    cp_delays_us: cp_delays(topo, &p, sfc),
                    pair_delays_us: pair_delays(topo, &p, sfc),
                },
                None => RowResult {
                    topology_index: topo.index(),
                    valid: false,
                    cp_delays_us: Vec::new(),
                    pair_delays_us: Vec::new(),
                },
            }
        })
        .collect();
    StrategyResult::from_rows(name, rows)
}

fn check_aligned(results: &[&StrategyResult]) -> Result<()> {
    let Some(first) = results.first() else {
        return Err(Error::Misaligned("no strategies given".into()));
    };
    for r in &results[1..] {
        if r.rows.len() != first.rows.len() {
            return Err(Error::Misaligned(format!(
                "{} has {} rows, {} has {}",
                first.name,
                first.rows.len(),
                r.name,
                r.rows.len()
            )));
        }
        for (i, (a, b)) in first.rows.iter().zip(&r.rows).enumerate() {
            if a.topology_index != b.topology_index {
                return Err(Error::Misaligned(format!(
                    "row {i}: {} has topology {}, {} has {}",
                    first.name, a.topology_index, r.name, b.topology_index
                )));
            }
            if a.valid && b.valid && a.cp_delays_us.len() != b.cp_delays_us.len() {
                return Err(Error::Misaligned(format!("row {i}: CP counts differ")));
            }
        }
    }
    Ok(())
}

/// Cells where one strategy had strictly the least delay. Ties award nobody.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinTable {
    pub strategies: Vec<String>,
    pub wins: Vec<u64>,
    pub ties: u64,
    pub compared_cells: u64,
    /// Cells skipped because some strategy was invalid on that row.
    pub excluded_cells: u64,
}

impl WinTable {
    /// Wins joined by colons, e.g. `13:9:14`.
    pub fn ratio(&self) -> String {
        self.wins.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(":")
    }
}

pub fn win_ratios(results: &[&StrategyResult]) -> Result<WinTable> {
    check_aligned(results)?;
    let mut table = WinTable {
        strategies: results.iter().map(|r| r.name.clone()).collect(),
        wins: vec![0; results.len()],
        ties: 0,
        compared_cells: 0,
        excluded_cells: 0,
    };
    for i in 0..results[0].rows.len() {
        let rows: Vec<&RowResult> = results.iter().map(|r| &r.rows[i]).collect();
        if rows.iter().any(|r| !r.valid) {
            table.excluded_cells += rows.iter().map(|r| r.cp_delays_us.len()).max().unwrap_or(0) as u64;
            continue;
        }
        for j in 0..rows[0].cp_delays_us.len() {
            let best = rows.iter().map(|r| r.cp_delays_us[j]).fold(f64::INFINITY, f64::min);
            let at_best: Vec<usize> = (0..rows.len()).filter(|&s| rows[s].cp_delays_us[j] == best).collect();
            table.compared_cells += 1;
            if let [winner] = at_best[..] {
                table.wins[winner] += 1;
            } else {
                table.ties += 1;
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffStats {
    pub a: String,
    pub b: String,
    /// `true` when the strategies share no valid cell; samples and bins are then empty.
    pub empty: bool,
    pub samples: Vec<f64>,
    pub mean_us: Option<f64>,
    pub bin_width_us: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Per-CP `delay(a) - delay(b)` over rows valid under both, binned at `bin_width`.
pub fn delay_difference_stats(a: &StrategyResult, b: &StrategyResult, bin_width: f64) -> Result<DiffStats> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidInput(format!("bin width {bin_width} must be positive")));
    }
    check_aligned(&[a, b])?;
    let samples: Vec<f64> = a
        .rows
        .iter()
        .zip(&b.rows)
        .filter(|(x, y)| x.valid && y.valid)
        .flat_map(|(x, y)| x.cp_delays_us.iter().zip(&y.cp_delays_us).map(|(p, q)| p - q))
        .collect();
    let mut histogram = Vec::new();
    if !samples.is_empty() {
        let bin = |v: f64| (v / bin_width).floor() as i64;
        let lo = samples.iter().map(|&v| bin(v)).min().expect("non-empty");
        let hi = samples.iter().map(|&v| bin(v)).max().expect("non-empty");
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        for &v in &samples {
            counts[(bin(v) - lo) as usize] += 1;
        }
        histogram = counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| {
                let edge = (lo + k as i64) as f64 * bin_width;
                HistogramBin { lo: edge, hi: edge + bin_width, count }
            })
            .collect();
    }
    Ok(DiffStats {
        a: a.name.clone(),
        b: b.name.clone(),
        empty: samples.is_empty(),
        mean_us: mean_of(samples.iter()),
        bin_width_us: bin_width,
        histogram,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub n_rows: usize,
    pub n_valid: usize,
    pub ip_rate: f64,
    pub mean_cp_delay_us: Option<f64>,
    pub mean_pair_delay_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub strategies: Vec<StrategySummary>,
    pub win_table: WinTable,
    pub pairwise: Vec<WinTable>,
    pub differences: Vec<DiffStats>,
}

/// All-strategy and pairwise win tables plus pairwise delay differences.
pub fn compare(results: &[&StrategyResult], bin_width: f64) -> Result<ComparisonReport> {
    let win_table = win_ratios(results)?;
    let mut pairwise = Vec::new();
    let mut differences = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            pairwise.push(win_ratios(&[results[i], results[j]])?);
            differences.push(delay_difference_stats(results[j], results[i], bin_width)?);
        }
    }
    Ok(ComparisonReport {
        strategies: results
            .iter()
            .map(|r| StrategySummary {
                name: r.name.clone(),
                n_rows: r.rows.len(),
                n_valid: r.n_valid(),
                ip_rate: r.ip_rate,
                mean_cp_delay_us: r.mean_cp_delay_us,
                mean_pair_delay_us: r.mean_pair_delay_us,
            })
            .collect(),
        win_table,
        pairwise,
        differences,
    })
}

#[derive(Serialize)]
struct PositionRow<'a> {
    strategy: &'a str,
    index: usize,
    mean_delay_us: f64,
    n_rows: usize,
}

/// Mean delay at each position (CP or dependent pair) over a strategy's valid rows.
fn position_means<'a>(r: &'a StrategyResult, pick: impl Fn(&RowResult) -> &[f64]) -> Vec<PositionRow<'a>> {
    let valid: Vec<&[f64]> = r.rows.iter().filter(|x| x.valid).map(&pick).collect();
    let width = valid.first().map_or(0, |v| v.len());
    (0..width)
        .map(|k| PositionRow {
            strategy: &r.name,
            index: k,
            mean_delay_us: valid.iter().map(|v| v[k]).sum::<f64>() / valid.len() as f64,
            n_rows: valid.len(),
        })
        .collect()
}

#[derive(Serialize)]
struct HistRow<'a> {
    a: &'a str,
    b: &'a str,
    bin_lo_us: f64,
    bin_hi_us: f64,
    count: u64,
}

/// Plot-ready CSVs: per-CP delay bars, per-pair delay bars, and difference histograms.
pub fn write_plot_csvs(results: &[&StrategyResult], report: &ComparisonReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let cp: Vec<PositionRow> = results.iter().flat_map(|r| position_means(r, |x| &x.cp_delays_us)).collect();
    crate::io::write_csv_rows(dir.join("plot_cp_delay.csv"), &cp)?;
    let pairs: Vec<PositionRow> = results.iter().flat_map(|r| position_means(r, |x| &x.pair_delays_us)).collect();
    crate::io::write_csv_rows(dir.join("plot_pair_delay.csv"), &pairs)?;
    let hist: Vec<HistRow> = report
        .differences
        .iter()
        .flat_map(|d| {
            d.histogram.iter().map(move |b| HistRow { a: &d.a, b: &d.b, bin_lo_us: b.lo, bin_hi_us: b.hi, count: b.count })
        })
        .collect();
    crate::io::write_csv_rows(dir.join("plot_delay_difference.csv"), &hist)
}
