use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vnfplace::net_model::GenConfig;
use vnfplace::pipeline::PipelineParams;

use crate::CliError;

/// Everything one end-to-end run needs. `seed` is the single source of randomness: it
/// replaces the generator's base seed and the swarm seed, and seeds the fold shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GenConfig,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub pipeline: PipelineParams,
    /// Depth of the unoptimized baseline tree.
    #[serde(default = "default_dat_depth")]
    pub dat_depth: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Share of generated topologies held out for comparison; the highest indices are used.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Largest share of topologies the teacher may fail on before `generate` aborts.
    #[serde(default)]
    pub infeasible_tolerance: f64,
    #[serde(default = "default_bin_width")]
    pub histogram_bin_us: f64,
}

fn default_folds() -> usize {
    5
}

fn default_dat_depth() -> usize {
    100
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_bin_width() -> f64 {
    5.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the global seed and resolves a relative output directory against `base`.
    pub fn resolve(mut self, seed_override: Option<u64>, base: &Path) -> Self {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        self.generator.base_seed = self.seed;
        self.pipeline.pso.seed = self.seed;
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        self
    }

    pub fn n_test(&self) -> usize {
        (self.generator.n_topologies as f64 * self.test_fraction).round() as usize
    }

    pub fn n_train(&self) -> usize {
        self.generator.n_topologies - self.n_test()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.generator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} must lie in (0, 1)", self.test_fraction));
        }
        if self.n_test() == 0 {
            return bad("test split is empty".into());
        }
        if self.folds < 2 || self.folds > self.n_train() {
            return bad(format!("folds = {} must lie in [2, {}]", self.folds, self.n_train()));
        }
        if self.dat_depth == 0 {
            return bad("dat_depth must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.infeasible_tolerance) {
            return bad(format!("infeasible_tolerance {} outside [0, 1]", self.infeasible_tolerance));
        }
        if !(self.histogram_bin_us > 0.0 && self.histogram_bin_us.is_finite()) {
            return bad(format!("histogram_bin_us {} must be positive", self.histogram_bin_us));
        }
        let probe = self.output_dir.ancestors().find(|p| p.exists());
        match probe {
            Some(p) if !p.is_dir() => return bad(format!("output path {} is not a directory", p.display())),
            Some(p) if p.metadata().map(|m| m.permissions().readonly()).unwrap_or(true) => {
                return bad(format!("output path {} is not writable", p.display()))
            }
            None => return bad(format!("output path {} has no existing ancestor", self.output_dir.display())),
            _ => {}
        }
        Ok(())
    }
}
