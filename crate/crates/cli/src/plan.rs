//! Benchmark plan files.
//!
//! A plan is a TOML document naming an output directory and a list of run
//! groups. Each group pairs one sampler and step schedule with a data
//! source (a tensor file or a synthetic recipe) and a solver setup, and is
//! executed once per listed seed. Every run is fully determined by the
//! plan, so repeated executions reproduce identical results.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use krpsgd_core::synth::GenSpec;
use krpsgd_core::SamplerStrategy;

fn default_step() -> String {
    "adaptive".into()
}

fn default_tol() -> f64 {
    1e-4
}

fn default_cadence() -> usize {
    1
}

fn default_eta() -> f64 {
    1.0
}

fn default_b() -> f64 {
    1e-6
}

fn default_alpha0() -> f64 {
    0.05
}

fn default_beta() -> f64 {
    0.6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    /// Directory receiving results.csv and the per-run traces.
    pub out_dir: PathBuf,
    /// Record wall-clock seconds. Off by default so results are
    /// byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
    pub runs: Vec<PlanRun>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRun {
    pub sampler: String,
    #[serde(default = "default_step")]
    pub step: String,
    /// One run per seed; seeds must be distinct within the group.
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    pub solver: SolverParams,
}

/// Where a run's tensor comes from: a file, or a synthetic recipe given by
/// the full set of generator fields.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub file: Option<PathBuf>,
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub rank: Option<usize>,
    pub spread: Option<usize>,
    pub magnitude: Option<f64>,
    pub noise: Option<f64>,
    pub seed: Option<u64>,
}

/// Resolved data source, also usable as a cache key so several run groups
/// sharing a tensor load or generate it once.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DataSource {
    File(PathBuf),
    Synth {
        i: usize,
        j: usize,
        rank: usize,
        spread: usize,
        magnitude_bits: u64,
        noise_bits: u64,
        seed: u64,
    },
}

impl DataSource {
    pub fn gen_spec(&self) -> Option<GenSpec> {
        match *self {
            DataSource::File(_) => None,
            DataSource::Synth {
                i,
                j,
                rank,
                spread,
                magnitude_bits,
                noise_bits,
                seed,
            } => Some(GenSpec {
                i,
                j,
                rank,
                spread,
                magnitude: f64::from_bits(magnitude_bits),
                noise: f64::from_bits(noise_bits),
                seed,
            }),
        }
    }
}

impl DataSpec {
    pub fn resolve(&self) -> anyhow::Result<DataSource> {
        let synth_fields = [
            self.i.is_some(),
            self.j.is_some(),
            self.rank.is_some(),
            self.spread.is_some(),
            self.magnitude.is_some(),
            self.noise.is_some(),
            self.seed.is_some(),
        ];
        if let Some(file) = &self.file {
            if synth_fields.iter().any(|&s| s) {
                bail!("data gives both a file and synthetic fields; pick one");
            }
            return Ok(DataSource::File(file.clone()));
        }
        if !synth_fields.iter().all(|&s| s) {
            bail!(
                "synthetic data needs all of i, j, rank, spread, magnitude, \
                 noise, and seed (or a file instead)"
            );
        }
        let spec = GenSpec {
            i: self.i.unwrap(),
            j: self.j.unwrap(),
            rank: self.rank.unwrap(),
            spread: self.spread.unwrap(),
            magnitude: self.magnitude.unwrap(),
            noise: self.noise.unwrap(),
            seed: self.seed.unwrap(),
        };
        spec.validate()?;
        Ok(DataSource::Synth {
            i: spec.i,
            j: spec.j,
            rank: spec.rank,
            spread: spec.spread,
            magnitude_bits: spec.magnitude.to_bits(),
            noise_bits: spec.noise.to_bits(),
            seed: spec.seed,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub rank: usize,
    pub batch: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub rank_tol: Option<f64>,
}

impl Plan {
    pub fn from_path(path: &Path) -> anyhow::Result<Plan> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading plan {}", path.display()))?;
        let plan: Plan = toml::from_str(&text)
            .with_context(|| format!("parsing plan {}", path.display()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.runs.is_empty() {
            bail!("plan has no runs");
        }
        for (idx, run) in self.runs.iter().enumerate() {
            let where_ = || format!("runs[{idx}]");
            run.sampler
                .parse::<SamplerStrategy>()
                .with_context(where_)?;
            if run.step != "fixed" && run.step != "adaptive" {
                bail!("{}: step must be 'fixed' or 'adaptive'", where_());
            }
            if run.seeds.is_empty() {
                bail!("{}: needs at least one seed", where_());
            }
            let unique: HashSet<u64> = run.seeds.iter().copied().collect();
            if unique.len() != run.seeds.len() {
                bail!("{}: seeds must be distinct", where_());
            }
            run.data.resolve().with_context(where_)?;
        }
        Ok(())
    }
}
