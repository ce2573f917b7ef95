use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vnfplace::cart::{fit, DecisionTreeModel, HyperparameterSet};
use vnfplace::evaluation::{compare, evaluate_strategy, write_plot_csvs, ComparisonReport, StrategyResult};
use vnfplace::features::{build_dataset, extract_features, kfold, load_dataset, save_dataset, FeatureSchema};
use vnfplace::io::{read_json, read_json_lines, write_csv_rows, write_json, write_json_lines};
use vnfplace::net_model::{build_sfc, generate_topology, SfcSpec, Topology};
use vnfplace::objective::{CrossValidator, EvalContext};
use vnfplace::pipeline::{run_pipeline, PipelineReport};
use vnfplace::placer::{place_teacher, Placement, PlacementRecord};

use crate::config::RunConfig;
use crate::CliError;

/// File layout of a run directory.
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact(p))
        }
    }
}

pub const TOPOLOGIES: &str = "topologies.json";
pub const SFCS: &str = "sfcs.json";
pub const PLACEMENTS: &str = "placements.jsonl";
pub const DATASET: &str = "dataset.csv";
pub const SPLIT: &str = "split.json";
pub const GENERATE_SUMMARY: &str = "generate_summary.json";
pub const FOLDS: &str = "folds.json";
pub const PIPELINE_REPORT: &str = "pipeline_report.json";
pub const STAGE1_CURVE: &str = "stage1_curve.csv";
pub const STAGE1_TRACE: &str = "stage1_trace.csv";
pub const STAGE2: &str = "stage2.csv";
pub const MODEL_DAT: &str = "model_dat.json";
pub const MODEL_DODAT: &str = "model_dodat.json";
pub const COMPARISON_REPORT: &str = "comparison_report.json";
pub const STRATEGY_RESULTS: &str = "strategy_results.json";

/// Topology indices of the train and test split, and the train indices that became dataset rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub dataset_rows: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub n_topologies: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub teacher_valid: usize,
    pub teacher_infeasible: Vec<u64>,
}

fn core<T>(stage: &str, r: vnfplace::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::from_core(stage, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary, CliError> {
    cfg.validate()?;
    let out = Artifacts::new(&cfg.output_dir);
    create_dir(&out.dir)?;
    let n = cfg.generator.n_topologies as u64;
    eprintln!("generate: {n} topologies, seed {}", cfg.seed);

    let snapshots: Vec<(Topology, SfcSpec)> = core(
        "generate",
        (0..n)
            .into_par_iter()
            .map(|i| Ok((generate_topology(&cfg.generator, i)?, build_sfc(&cfg.generator, i)?)))
            .collect(),
    )?;
    let records: Vec<PlacementRecord> = snapshots
        .par_iter()
        .map(|(t, s)| match place_teacher(t, s) {
            Ok(p) => PlacementRecord::new(t, s, &p),
            Err(_) => PlacementRecord { topology_index: t.index(), assignment: vec![], valid: false, cp_delays_us: vec![] },
        })
        .collect();

    let infeasible: Vec<u64> = records.iter().filter(|r| !r.valid).map(|r| r.topology_index).collect();
    let summary = GenerateSummary {
        n_topologies: n as usize,
        n_train: cfg.n_train(),
        n_test: cfg.n_test(),
        teacher_valid: records.len() - infeasible.len(),
        teacher_infeasible: infeasible,
    };
    eprintln!(
        "generate: teacher valid on {}/{} topologies",
        summary.teacher_valid, summary.n_topologies
    );
    let fraction = summary.teacher_infeasible.len() as f64 / n as f64;
    if fraction > cfg.infeasible_tolerance {
        return Err(CliError::Failure(format!(
            "generate: teacher failed on {} topologies ({:.2}%), above the tolerated {:.2}%",
            summary.teacher_infeasible.len(),
            100.0 * fraction,
            100.0 * cfg.infeasible_tolerance
        )));
    }

    let n_train = cfg.n_train() as u64;
    let split = Split {
        train: (0..n_train).collect(),
        test: (n_train..n).collect(),
        dataset_rows: (0..n_train).filter(|&i| records[i as usize].valid).collect(),
    };
    let labelled: Vec<(Topology, SfcSpec, Placement)> = split
        .dataset_rows
        .iter()
        .map(|&i| {
            let (t, s) = &snapshots[i as usize];
            (t.clone(), s.clone(), Placement::new(records[i as usize].assignment.clone()))
        })
        .collect();
    let schema = FeatureSchema::for_snapshot(&snapshots[0].0, &snapshots[0].1);
    let ds = core("generate", build_dataset(schema, &labelled))?;

    let topologies: Vec<&Topology> = snapshots.iter().map(|(t, _)| t).collect();
    let sfcs: Vec<&SfcSpec> = snapshots.iter().map(|(_, s)| s).collect();
    core("generate", write_json(out.path(TOPOLOGIES), &topologies))?;
    core("generate", write_json(out.path(SFCS), &sfcs))?;
    core("generate", write_json_lines(out.path(PLACEMENTS), &records))?;
    core("generate", save_dataset(&ds, out.path(DATASET)))?;
    core("generate", write_json(out.path(SPLIT), &split))?;
    core("generate", write_json(out.path(GENERATE_SUMMARY), &summary))?;
    eprintln!("generate: {} dataset rows written to {}", ds.n_samples(), out.dir.display());
    Ok(summary)
}

fn load_snapshots(out: &Artifacts, stage: &str) -> Result<Vec<(Topology, SfcSpec)>, CliError> {
    let topologies: Vec<Topology> = core(stage, read_json(out.require(TOPOLOGIES)?))?;
    let sfcs: Vec<SfcSpec> = core(stage, read_json(out.require(SFCS)?))?;
    if topologies.len() != sfcs.len() {
        return Err(CliError::Failure(format!(
            "{stage}: {} topologies but {} service chains",
            topologies.len(),
            sfcs.len()
        )));
    }
    Ok(topologies.into_iter().zip(sfcs).collect())
}

#[derive(Serialize)]
struct TraceRow {
    upper_bound: i64,
    iteration: usize,
    best_h: i64,
    best_objective: f64,
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<PipelineReport, CliError> {
    cfg.validate()?;
    let out = Artifacts::new(&cfg.output_dir);
    let split: Split = core("optimize", read_json(out.require(SPLIT)?))?;
    let ds = core("optimize", load_dataset(out.require(DATASET)?))?;
    let all = load_snapshots(&out, "optimize")?;
    if ds.n_samples() != split.dataset_rows.len() {
        return Err(CliError::Failure(format!(
            "optimize: dataset has {} rows, split lists {}",
            ds.n_samples(),
            split.dataset_rows.len()
        )));
    }
    let snapshots: Vec<(Topology, SfcSpec)> = split.dataset_rows.iter().map(|&i| all[i as usize].clone()).collect();
    let folds = core("optimize", kfold(&ds, cfg.folds, cfg.seed))?;
    let ctx = core("optimize", EvalContext::new(&ds, &snapshots))?;
    let cv = core("optimize", CrossValidator::new(ctx, &folds))?;
    eprintln!("optimize: {} rows, {} folds, saturation depth {}", ds.n_samples(), cfg.folds, cv.saturation_depth());

    let (report, dodat) = core("optimize", run_pipeline(&ds, &cv, cfg.folds, &cfg.pipeline))?;
    eprintln!(
        "optimize: functional range [{}, {}], h* = {} (raw argmin {})",
        report.functional_range.a1, report.functional_range.a2, report.h_star, report.stage2.raw_argmin
    );
    let dat = core("optimize", fit(&ds, core("optimize", HyperparameterSet::new(cfg.dat_depth))?, cfg.seed))?;

    core("optimize", write_json(out.path(FOLDS), &folds))?;
    core("optimize", write_json(out.path(PIPELINE_REPORT), &report))?;
    core("optimize", write_csv_rows(out.path(STAGE1_CURVE), &report.stage1.curve))?;
    let trace: Vec<TraceRow> = report
        .stage1
        .rounds
        .iter()
        .flat_map(|r| {
            r.trace.entries.iter().map(|e| TraceRow {
                upper_bound: r.upper_bound,
                iteration: e.iteration,
                best_h: e.best_h,
                best_objective: e.best_objective,
            })
        })
        .collect();
    core("optimize", write_csv_rows(out.path(STAGE1_TRACE), &trace))?;
    core("optimize", write_csv_rows(out.path(STAGE2), &report.stage2.points))?;
    core("optimize", dodat.save(out.path(MODEL_DODAT)))?;
    core("optimize", dat.save(out.path(MODEL_DAT)))?;
    Ok(report)
}

/// Comparison report plus the DO-DAT tolerance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutput {
    pub report: ComparisonReport,
    pub max_tolerable_error: f64,
    pub dodat_within_tolerable_error: bool,
}

fn model_strategy<'a>(model: &'a DecisionTreeModel) -> impl Fn(&Topology, &SfcSpec) -> vnfplace::Result<Placement> + Sync + 'a {
    move |t, s| Ok(Placement::new(model.predict(&extract_features(t, s))?))
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<ComparisonOutput, CliError> {
    cfg.validate()?;
    let out = Artifacts::new(&cfg.output_dir);
    let split: Split = core("compare", read_json(out.require(SPLIT)?))?;
    let all = load_snapshots(&out, "compare")?;
    let records: Vec<PlacementRecord> = core("compare", read_json_lines(out.require(PLACEMENTS)?))?;
    let dat = core("compare", DecisionTreeModel::load(out.require(MODEL_DAT)?))?;
    let dodat = core("compare", DecisionTreeModel::load(out.require(MODEL_DODAT)?))?;
    let test: Vec<(Topology, SfcSpec)> = split.test.iter().map(|&i| all[i as usize].clone()).collect();
    eprintln!("compare: {} held-out topologies", test.len());

    let teacher: BTreeMap<u64, &PlacementRecord> = records.iter().map(|r| (r.topology_index, r)).collect();
    let teacher_place = |t: &Topology, _: &SfcSpec| match teacher.get(&t.index()) {
        Some(r) if r.valid => Ok(Placement::new(r.assignment.clone())),
        _ => Err(vnfplace::Error::Infeasible { explored: 0 }),
    };
    let results: Vec<StrategyResult> = vec![
        evaluate_strategy("teacher", teacher_place, &test),
        evaluate_strategy("dat", model_strategy(&dat), &test),
        evaluate_strategy("dodat", model_strategy(&dodat), &test),
    ];
    let refs: Vec<&StrategyResult> = results.iter().collect();
    let report = core("compare", compare(&refs, cfg.histogram_bin_us))?;
    for s in &report.strategies {
        eprintln!(
            "compare: {:<8} ip rate {:.4}, mean CP delay {}",
            s.name,
            s.ip_rate,
            s.mean_cp_delay_us.map_or("n/a".into(), |d| format!("{d:.2} us"))
        );
    }
    eprintln!("compare: wins teacher:dat:dodat = {} ({} ties)", report.win_table.ratio(), report.win_table.ties);

    let output = ComparisonOutput {
        dodat_within_tolerable_error: results[2].ip_rate <= cfg.pipeline.max_tolerable_error,
        max_tolerable_error: cfg.pipeline.max_tolerable_error,
        report,
    };
    core("compare", write_json(out.path(COMPARISON_REPORT), &output))?;
    core("compare", write_json(out.path(STRATEGY_RESULTS), &results))?;
    core("compare", write_plot_csvs(&refs, &output.report, &out.dir))?;
    Ok(output)
}
