//! The four subcommands: data generation, single decompositions, plan
//! execution, and the self-check suite.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use krpsgd_core::io::{load_model, load_tensor, save_model, save_tensor};
use krpsgd_core::oracle::{run_oracle_suite, SuiteOptions};
use krpsgd_core::sampling::{euclidean_probabilities, leverage_probabilities};
use krpsgd_core::solver::{run, RunTrace, SolverConfig, StepSchedule, StopRule, TerminalStatus};
use krpsgd_core::synth::{generate, GenSpec};
use krpsgd_core::{DenseTensor, KruskalModel, SamplerStrategy};

use crate::plan::{DataSource, Plan, SolverParams};

/// Distinguishes the initial-model stream from the solver's own stream when
/// both are derived from the same user-facing seed.
const INIT_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed used when neither a flag nor KRPSGD_SEED provides one.
fn env_default_seed() -> anyhow::Result<u64> {
    match std::env::var("KRPSGD_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| anyhow!("KRPSGD_SEED is not an integer: '{s}'")),
        Err(_) => Ok(1),
    }
}

fn resolve_seed(flag: Option<u64>) -> anyhow::Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => env_default_seed(),
    }
}

/// Uniform-[0,1] starting factors, drawn from a stream salted away from the
/// solver's seed so the two never share randomness.
fn init_model(dims: &[usize], rank: usize, seed: u64) -> anyhow::Result<KruskalModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
    Ok(KruskalModel::random_uniform(dims, rank, &mut rng)?)
}

fn parse_sampler(s: &str) -> Result<SamplerStrategy, krpsgd_core::Error> {
    s.parse()
}

fn write_trace(path: &Path, trace: &RunTrace) -> anyhow::Result<()> {
    let mut out = String::from("iter,seconds,rel_error,mode\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{:.6},{:.12e},{}\n",
            r.iteration, r.seconds, r.rel_error, r.mode
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Tensor extents; the first two must match.
    #[arg(long, num_args = 3, value_names = ["I", "I", "J"], required = true)]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    pub rank: usize,
    /// Spike rows per planted factor column.
    #[arg(long, default_value_t = 15)]
    pub spread: usize,
    /// Absolute value of each spike entry.
    #[arg(long, default_value_t = 24.0)]
    pub magnitude: f64,
    /// Relative Frobenius noise level.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Defaults to KRPSGD_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_generate(args: &GenerateArgs) -> anyhow::Result<()> {
    if args.dims.len() != 3 {
        bail!("--dims takes exactly three extents");
    }
    if args.dims[0] != args.dims[1] {
        bail!("the first two extents must match (got {} and {})", args.dims[0], args.dims[1]);
    }
    let seed = resolve_seed(args.seed)?;
    let spec = GenSpec {
        i: args.dims[0],
        j: args.dims[2],
        rank: args.rank,
        spread: args.spread,
        magnitude: args.magnitude,
        noise: args.noise,
        seed,
    };
    let data = generate(&spec)?;
    save_tensor(&args.out, &data.tensor)?;

    let mut sidecar = String::new();
    sidecar.push_str(&format!("i={}\n", spec.i));
    sidecar.push_str(&format!("j={}\n", spec.j));
    sidecar.push_str(&format!("rank={}\n", spec.rank));
    sidecar.push_str(&format!("spread={}\n", spec.spread));
    sidecar.push_str(&format!("magnitude={}\n", spec.magnitude));
    sidecar.push_str(&format!("noise={}\n", spec.noise));
    sidecar.push_str(&format!("seed={}\n", spec.seed));
    let used: Vec<String> = data.spread_used.iter().map(|s| s.to_string()).collect();
    sidecar.push_str(&format!("spread_used={}\n", used.join(",")));
    for (n, rows) in data.injected_rows.iter().enumerate() {
        let rows: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
        sidecar.push_str(&format!("injected_rows_{}={}\n", n + 1, rows.join(",")));
    }
    if spec.spread == 0 {
        sidecar.push_str(&format!(
            "note=planted columns are empty; effective rank is {}\n",
            spec.rank - 3
        ));
    }
    if data.spread_used[2] < spec.spread {
        sidecar.push_str(&format!(
            "note=third factor spread capped at {} (requested {})\n",
            data.spread_used[2], spec.spread
        ));
    }
    let sidecar_path = args.out.with_extension(
        match args.out.extension() {
            Some(e) => format!("{}.txt", e.to_string_lossy()),
            None => "txt".into(),
        },
    );
    fs::write(&sidecar_path, sidecar)
        .with_context(|| format!("writing {}", sidecar_path.display()))?;

    println!(
        "wrote {} ({} values) and {}",
        args.out.display(),
        data.tensor.len(),
        sidecar_path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StepKind {
    Fixed,
    Adaptive,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Input tensor file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    /// Fibers per gradient estimate (block size for block samplers).
    #[arg(long)]
    pub batch: usize,
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: SamplerStrategy,
    #[arg(long, value_enum, default_value_t = StepKind::Adaptive)]
    pub step: StepKind,
    /// Initial rate of the fixed schedule.
    #[arg(long, default_value_t = 0.05)]
    pub alpha0: f64,
    /// Decay exponent of the fixed schedule, in (0.5, 1].
    #[arg(long, default_value_t = 0.6)]
    pub beta: f64,
    /// Numerator of the adaptive rate.
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Offset inside the adaptive denominator.
    #[arg(long = "b", default_value_t = 1e-6)]
    pub b: f64,
    /// Extra exponent on the adaptive denominator.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Relative-error tolerance; inf evaluates once and stops.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    pub max_iters: usize,
    /// Evaluate the error every this many iterations.
    #[arg(long, default_value_t = 1)]
    pub cadence: usize,
    /// Defaults to KRPSGD_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override for the leverage-score rank threshold.
    #[arg(long = "rank-tol")]
    pub rank_tol: Option<f64>,
    /// Record wall-clock seconds in the trace (traces then differ run to
    /// run; off keeps equal seeds byte-identical).
    #[arg(long, default_value_t = false)]
    pub timing: bool,
    #[arg(long = "out-prefix")]
    pub out_prefix: PathBuf,
}

impl DecomposeArgs {
    fn solver_config(&self, seed: u64) -> SolverConfig {
        let schedule = match self.step {
            StepKind::Fixed => StepSchedule::Fixed {
                alpha0: self.alpha0,
                beta: self.beta,
            },
            StepKind::Adaptive => StepSchedule::Adaptive {
                eta: self.eta,
                b: self.b,
                eps: self.eps,
            },
        };
        SolverConfig {
            rank: self.rank,
            batch: self.batch,
            strategy: self.sampler,
            schedule,
            stop: StopRule {
                tol: self.tol,
                max_iters: self.max_iters,
                cadence: self.cadence,
            },
            seed,
            rank_tol: self.rank_tol,
            record_timing: self.timing,
        }
    }
}

pub fn cmd_decompose(args: &DecomposeArgs) -> anyhow::Result<()> {
    let x = load_tensor(&args.input)
        .with_context(|| format!("loading {}", args.input.display()))?;
    let seed = resolve_seed(args.seed)?;
    let config = args.solver_config(seed);
    let init = init_model(x.dims(), config.rank, seed)?;
    let (model, trace) = run(&x, &config, &init)?;

    let trace_path = args.out_prefix.with_extension("trace.csv");
    let model_path = args.out_prefix.with_extension("model.cpt");
    write_trace(&trace_path, &trace)?;
    save_model(&model_path, &model)?;

    let final_rel = trace.final_rel_error().unwrap_or(f64::NAN);
    match &trace.status {
        TerminalStatus::Converged => {
            println!(
                "converged at iteration {} with relative error {:.6e}",
                trace.iterations_run(),
                final_rel
            );
            Ok(())
        }
        TerminalStatus::MaxIters => {
            println!(
                "stopped at the iteration cap {} with relative error {:.6e}",
                config.stop.max_iters, final_rel
            );
            Ok(())
        }
        TerminalStatus::Failed(msg) => Err(anyhow!("run failed: {msg}")),
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Plan file (TOML).
    #[arg(long)]
    pub plan: PathBuf,
    /// Worker threads; 0 picks the machine default.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

fn algorithm_name(step: &str, sampler: SamplerStrategy) -> &'static str {
    match (step, sampler == SamplerStrategy::Uniform) {
        ("fixed", true) => "brascpd",
        ("fixed", false) => "brawscpd",
        (_, true) => "adascpd",
        (_, false) => "adawscpd",
    }
}

fn solver_config_from_params(
    p: &SolverParams,
    step: &str,
    sampler: SamplerStrategy,
    seed: u64,
    record_timing: bool,
) -> SolverConfig {
    let schedule = if step == "fixed" {
        StepSchedule::Fixed {
            alpha0: p.alpha0,
            beta: p.beta,
        }
    } else {
        StepSchedule::Adaptive {
            eta: p.eta,
            b: p.b,
            eps: p.eps,
        }
    };
    SolverConfig {
        rank: p.rank,
        batch: p.batch,
        strategy: sampler,
        schedule,
        stop: StopRule {
            tol: p.tol,
            max_iters: p.max_iters,
            cadence: p.cadence,
        },
        seed,
        rank_tol: p.rank_tol,
        record_timing,
    }
}

struct BenchJob {
    run_id: usize,
    algorithm: &'static str,
    config: SolverConfig,
    tensor: Arc<DenseTensor>,
    trace_path: PathBuf,
}

fn execute_job(job: &BenchJob) -> anyhow::Result<String> {
    let init = init_model(job.tensor.dims(), job.config.rank, job.config.seed)?;
    let (_, trace) = run(&job.tensor, &job.config, &init)
        .with_context(|| format!("run {}", job.run_id))?;
    write_trace(&job.trace_path, &trace)?;

    let (iters, status) = match &trace.status {
        TerminalStatus::Converged => (
            trace
                .iterations_to_tolerance(job.config.stop.tol)
                .unwrap_or_else(|| trace.iterations_run()),
            "converged".to_string(),
        ),
        TerminalStatus::MaxIters => (job.config.stop.max_iters, "max-iters".to_string()),
        TerminalStatus::Failed(msg) => (
            trace.iterations_run(),
            format!("failed:{}", msg.replace(',', ";")),
        ),
    };
    let last = trace
        .records
        .last()
        .expect("a completed run records at least its starting error");
    let dims = job.tensor.dims();
    Ok(format!(
        "{},{},{},{},{},{},{},{},{},{:.6},{:.12e},{}\n",
        job.run_id,
        job.algorithm,
        job.config.strategy,
        dims[0],
        dims[dims.len() - 1],
        job.config.rank,
        job.config.batch,
        job.config.seed,
        iters,
        last.seconds,
        last.rel_error,
        status
    ))
}

pub fn cmd_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let plan = Plan::from_path(&args.plan)?;
    fs::create_dir_all(&plan.out_dir)
        .with_context(|| format!("creating {}", plan.out_dir.display()))?;

    // Tensors are shared across every run that names the same source.
    let mut cache: HashMap<DataSource, Arc<DenseTensor>> = HashMap::new();
    for run in &plan.runs {
        let source = run.data.resolve()?;
        if !cache.contains_key(&source) {
            let tensor = match &source {
                DataSource::File(path) => load_tensor(path)
                    .with_context(|| format!("loading {}", path.display()))?,
                DataSource::Synth { .. } => {
                    generate(&source.gen_spec().expect("synthetic source"))?.tensor
                }
            };
            cache.insert(source, Arc::new(tensor));
        }
    }

    let mut jobs = Vec::new();
    for run in &plan.runs {
        let sampler: SamplerStrategy = run.sampler.parse()?;
        let tensor = cache[&run.data.resolve()?].clone();
        for &seed in &run.seeds {
            let run_id = jobs.len() + 1;
            let config = solver_config_from_params(
                &run.solver,
                &run.step,
                sampler,
                seed,
                plan.record_timing,
            );
            config.validate()?;
            jobs.push(BenchJob {
                run_id,
                algorithm: algorithm_name(&run.step, sampler),
                config,
                tensor: tensor.clone(),
                trace_path: plan.out_dir.join(format!("run_{run_id:03}.trace.csv")),
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .context("building the worker pool")?;
    let rows: Vec<anyhow::Result<String>> =
        pool.install(|| jobs.par_iter().map(execute_job).collect());

    let mut csv =
        String::from("run_id,algorithm,sampler,I,J,R,B,seed,iters_to_tol,seconds,final_rel_error,status\n");
    for row in rows {
        csv.push_str(&row?);
    }
    let results_path = plan.out_dir.join("results.csv");
    fs::write(&results_path, csv)
        .with_context(|| format!("writing {}", results_path.display()))?;
    println!("wrote {} runs to {}", jobs.len(), results_path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run only checks whose name contains this substring.
    #[arg(long)]
    pub only: Option<String>,
    /// Trial count for the Monte Carlo unbiasedness checks.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write each factor row's sampling probabilities to a CSV.
    #[arg(long = "dump-probs")]
    pub dump_probs: Option<PathBuf>,
    /// External fixture tensor (requires --model).
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    /// External fixture model (requires --tensor).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Defaults to KRPSGD_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn dump_probabilities(path: &Path, model: &KruskalModel) -> anyhow::Result<()> {
    let mut out = String::from("mode,row,leverage,euclidean\n");
    for (n, f) in model.factors().iter().enumerate() {
        let lev = leverage_probabilities(f)?;
        let euc = euclidean_probabilities(f)?;
        for (row, (l, e)) in lev.weights().iter().zip(euc.weights()).enumerate() {
            out.push_str(&format!("{},{},{:.12e},{:.12e}\n", n + 1, row + 1, l, e));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_verify(args: &VerifyArgs) -> anyhow::Result<()> {
    let seed = resolve_seed(args.seed)?;
    let fixture = match (&args.tensor, &args.model) {
        (Some(t), Some(m)) => Some((load_tensor(t)?, load_model(m)?)),
        (None, None) => None,
        _ => bail!("--tensor and --model must be given together"),
    };
    let opts = SuiteOptions {
        only: args.only.clone(),
        trials: args.trials,
        seed,
    };
    let report = run_oracle_suite(&opts, fixture.as_ref().map(|(t, m)| (t, m)))?;
    if report.checks.is_empty() {
        bail!(
            "no checks match --only '{}'",
            args.only.as_deref().unwrap_or("")
        );
    }

    if let Some(path) = &args.csv {
        fs::write(path, report.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.dump_probs {
        match &fixture {
            Some((_, m)) => dump_probabilities(path, m)?,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = KruskalModel::random_uniform(&[3, 3, 3], 2, &mut rng)?;
                dump_probabilities(path, &m)?;
            }
        }
    }

    for c in &report.checks {
        println!(
            "check {}: {} (measured {:.6e}, threshold {:.6e})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.measured,
            c.threshold
        );
    }
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", report.checks.len());
    }
    println!("all {} checks passed", report.checks.len());
    Ok(())
}
