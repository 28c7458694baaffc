//! Mini-batch stochastic gradient descent for CP decomposition.
//!
//! Each iteration picks one mode uniformly at random, samples a batch of
//! mode-n fibers with the configured strategy, forms the matching rows of
//! the Khatri-Rao product, and updates that mode's factor with an unbiased
//! gradient estimate. The estimators divide by the exact selection
//! probabilities, so their expectation equals the full gradient of
//! f(A) = (1/2) ||X - reconstruction||_F^2 scaled by 1/J_n.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sampling::{
    euclidean_probabilities, krp_samp1, krp_samp2, leverage_probabilities,
    leverage_probabilities_with_tol, multiblock_probabilities, BatchWeighting, BlockPartition,
    ProbabilityVector, SamplerStrategy,
};
use crate::tensor::{column_count, extract_fibers, relative_error, DenseTensor, KruskalModel};

/// Step-size rule applied after each gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// Decaying rate alpha0 / (1 + r)^beta, r counting updates from zero.
    Fixed { alpha0: f64, beta: f64 },
    /// Per-entry adaptive rate eta / (b + sum of squared gradients)^(1/2 + eps).
    Adaptive { eta: f64, b: f64, eps: f64 },
}

impl StepSchedule {
    pub fn fixed_default() -> Self {
        StepSchedule::Fixed {
            alpha0: 0.05,
            beta: 0.6,
        }
    }

    pub fn adaptive_default() -> Self {
        StepSchedule::Adaptive {
            eta: 1.0,
            b: 1e-6,
            eps: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Fixed { alpha0, beta } => {
                if !(alpha0 > 0.0 && alpha0.is_finite()) {
                    return Err(Error::InvalidConfig("alpha0 must be positive".into()));
                }
                if !(beta > 0.5 && beta <= 1.0) {
                    return Err(Error::InvalidConfig(
                        "beta must lie in (0.5, 1] for a convergent decay".into(),
                    ));
                }
            }
            StepSchedule::Adaptive { eta, b, eps } => {
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(Error::InvalidConfig("eta must be positive".into()));
                }
                if !(b > 0.0 && b.is_finite()) {
                    return Err(Error::InvalidConfig("b must be positive".into()));
                }
                if !(eps >= 0.0 && eps.is_finite()) {
                    return Err(Error::InvalidConfig("eps must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }
}

/// Termination rule: stop once the relative error measured every `cadence`
/// iterations reaches `tol`, or after `max_iters` updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub tol: f64,
    pub max_iters: usize,
    pub cadence: usize,
}

impl StopRule {
    fn validate(&self) -> Result<()> {
        // +inf is a valid tolerance: the run stops at its first evaluation.
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be nonnegative".into()));
        }
        if self.cadence == 0 {
            return Err(Error::InvalidConfig("cadence must be positive".into()));
        }
        Ok(())
    }
}

/// Full configuration of one decomposition run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rank: usize,
    pub batch: usize,
    pub strategy: SamplerStrategy,
    pub schedule: StepSchedule,
    pub stop: StopRule,
    pub seed: u64,
    /// Override for the rank threshold used when orthogonalizing factors
    /// for leverage scores; `None` picks the size-scaled default.
    pub rank_tol: Option<f64>,
    /// Record wall-clock seconds in the trace. Off by default so equal
    /// seeds produce byte-identical traces.
    pub record_timing: bool,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if let Some(t) = self.rank_tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(
                    "rank tolerance must be nonnegative".into(),
                ));
            }
        }
        self.schedule.validate()?;
        self.stop.validate()
    }
}

/// One evaluated iteration: the error measured after `iteration` updates,
/// the mode updated at that iteration (0 for the pre-loop record), and the
/// elapsed wall-clock seconds (0 unless timing is recorded).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub seconds: f64,
    pub rel_error: f64,
    pub mode: usize,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalStatus {
    Converged,
    MaxIters,
    Failed(String),
}

/// Evaluated error history of one run plus its terminal status.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub status: TerminalStatus,
}

impl RunTrace {
    /// First evaluated iteration whose error reached `tol`, if any.
    pub fn iterations_to_tolerance(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_error <= tol)
            .map(|r| r.iteration)
    }

    pub fn final_rel_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.rel_error)
    }

    pub fn iterations_run(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }
}

fn check_gradient_shapes(a: &Array2<f64>, zf: &Array2<f64>, xf: &Array2<f64>) -> Result<usize> {
    let b = zf.nrows();
    if b == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if zf.ncols() != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "sampled KRP has {} columns, factor has {}",
            zf.ncols(),
            a.ncols()
        )));
    }
    if xf.ncols() != b || xf.nrows() != a.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "fibers are {}x{}, expected {}x{}",
            xf.nrows(),
            xf.ncols(),
            a.nrows(),
            b
        )));
    }
    Ok(b)
}

/// Importance-weighted gradient estimate from independently drawn fibers:
/// G = (1/(B J_n)) [ A (Z_F^T D Z_F) - X_F D Z_F ] with D = diag(1/p_b).
pub fn stochastic_gradient_rowwise(
    a: &Array2<f64>,
    zf: &Array2<f64>,
    xf: &Array2<f64>,
    probs: &[f64],
    jn: usize,
) -> Result<Array2<f64>> {
    let b = check_gradient_shapes(a, zf, xf)?;
    if probs.len() != b {
        return Err(Error::LengthMismatch {
            got: probs.len(),
            want: b,
        });
    }
    let mut zw = zf.clone();
    for (mut row, &p) in zw.rows_mut().into_iter().zip(probs) {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::DegenerateWeight(format!(
                "fiber drawn with probability {p}"
            )));
        }
        row.mapv_inplace(|v| v / p);
    }
    let scale = 1.0 / (b as f64 * jn as f64);
    Ok((a.dot(&zf.t().dot(&zw)) - xf.dot(&zw)) * scale)
}

/// Gradient estimate from one drawn block of unfolding columns:
/// G = (1/(p_d J_n)) [ A (Z_F^T Z_F) - X_F Z_F ].
pub fn stochastic_gradient_block(
    a: &Array2<f64>,
    zf: &Array2<f64>,
    xf: &Array2<f64>,
    block_prob: f64,
    jn: usize,
) -> Result<Array2<f64>> {
    check_gradient_shapes(a, zf, xf)?;
    if !(block_prob > 0.0 && block_prob.is_finite()) {
        return Err(Error::DegenerateWeight(format!(
            "block drawn with probability {block_prob}"
        )));
    }
    let scale = 1.0 / (block_prob * jn as f64);
    Ok((a.dot(&zf.t().dot(zf)) - xf.dot(zf)) * scale)
}

/// Unweighted baseline estimate from uniformly drawn fibers:
/// G = (1/B) [ A (Z_F^T Z_F) - X_F Z_F ].
pub fn stochastic_gradient_uniform(
    a: &Array2<f64>,
    zf: &Array2<f64>,
    xf: &Array2<f64>,
) -> Result<Array2<f64>> {
    let b = check_gradient_shapes(a, zf, xf)?;
    let scale = 1.0 / b as f64;
    Ok((a.dot(&zf.t().dot(zf)) - xf.dot(zf)) * scale)
}

/// Dispatch on how the batch was weighted.
pub fn stochastic_gradient(
    a: &Array2<f64>,
    zf: &Array2<f64>,
    xf: &Array2<f64>,
    weighting: &BatchWeighting,
    jn: usize,
) -> Result<Array2<f64>> {
    match weighting {
        BatchWeighting::Uniform => stochastic_gradient_uniform(a, zf, xf),
        BatchWeighting::Rows(p) => stochastic_gradient_rowwise(a, zf, xf, p, jn),
        BatchWeighting::Block(p) => stochastic_gradient_block(a, zf, xf, *p, jn),
    }
}

/// Apply one decaying-rate update and return the rate used.
pub fn sgd_step(
    factor: &mut Array2<f64>,
    grad: &Array2<f64>,
    alpha0: f64,
    beta: f64,
    update_count: usize,
) -> Result<f64> {
    if factor.dim() != grad.dim() {
        return Err(Error::ShapeMismatch(format!(
            "factor {:?} vs gradient {:?}",
            factor.dim(),
            grad.dim()
        )));
    }
    let rate = alpha0 / (1.0 + update_count as f64).powf(beta);
    factor.zip_mut_with(grad, |f, &g| *f -= rate * g);
    Ok(rate)
}

/// Apply one adaptive update: the squared gradient is accumulated into
/// `accum`, then each entry moves by eta * g / (b + accum)^(1/2 + eps).
pub fn adaptive_step(
    factor: &mut Array2<f64>,
    accum: &mut Array2<f64>,
    grad: &Array2<f64>,
    eta: f64,
    b: f64,
    eps: f64,
) -> Result<()> {
    if factor.dim() != grad.dim() || accum.dim() != grad.dim() {
        return Err(Error::ShapeMismatch(format!(
            "factor {:?}, accumulator {:?}, gradient {:?}",
            factor.dim(),
            accum.dim(),
            grad.dim()
        )));
    }
    accum.zip_mut_with(grad, |a, &g| *a += g * g);
    for ((f, &a), &g) in factor.iter_mut().zip(accum.iter()).zip(grad.iter()) {
        let denom = if eps == 0.0 {
            (b + a).sqrt()
        } else {
            (b + a).powf(0.5 + eps)
        };
        *f -= eta * g / denom;
    }
    Ok(())
}

/// Per-mode squared-gradient accumulators for the adaptive schedule.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    accum: Vec<Array2<f64>>,
}

impl AdaptiveState {
    pub fn new(model: &KruskalModel) -> Self {
        Self {
            accum: model
                .factors()
                .iter()
                .map(|f| Array2::zeros(f.dim()))
                .collect(),
        }
    }

    pub fn accum_mut(&mut self, mode: usize) -> &mut Array2<f64> {
        &mut self.accum[mode - 1]
    }
}

/// Row distribution a strategy induces on one factor's rows; the block
/// strategies reuse their row-wise law as the per-mode building block.
pub fn row_probabilities(
    f: &Array2<f64>,
    strategy: SamplerStrategy,
    rank_tol: Option<f64>,
) -> Result<ProbabilityVector> {
    match strategy {
        SamplerStrategy::Uniform => ProbabilityVector::uniform(f.nrows()),
        SamplerStrategy::Leverage | SamplerStrategy::BlockLeverage => match rank_tol {
            Some(t) => leverage_probabilities_with_tol(f, t),
            None => leverage_probabilities(f),
        },
        SamplerStrategy::Euclidean | SamplerStrategy::BlockEuclidean => {
            euclidean_probabilities(f)
        }
    }
}

/// Decompose `x` starting from `init`, which must match the tensor's shape
/// and the configured rank. Randomness is driven entirely by `config.seed`;
/// equal inputs produce identical traces and models.
///
/// Failures that arise mid-run (a factor collapsing to zero weight, an
/// overflowing step) terminate the run with a `Failed` status and a partial
/// trace rather than an error; `Err` is reserved for invalid inputs.
pub fn run(
    x: &DenseTensor,
    config: &SolverConfig,
    init: &KruskalModel,
) -> Result<(KruskalModel, RunTrace)> {
    config.validate()?;
    if init.dims() != x.dims() {
        return Err(Error::ShapeMismatch(format!(
            "initial model dims {:?} vs tensor dims {:?}",
            init.dims(),
            x.dims()
        )));
    }
    if init.rank() != config.rank {
        return Err(Error::InvalidConfig(format!(
            "initial model rank {} vs configured rank {}",
            init.rank(),
            config.rank
        )));
    }
    if x.frobenius_norm() == 0.0 {
        return Err(Error::ZeroTensor);
    }

    let n = x.ndim();
    let dims = x.dims().to_vec();
    let jn: Vec<usize> = (1..=n)
        .map(|m| column_count(&dims, m))
        .collect::<Result<_>>()?;
    let partitions: Vec<BlockPartition> = if config.strategy.is_block() {
        (1..=n)
            .map(|m| BlockPartition::contiguous(&dims, m, config.batch))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init.clone();
    let mut adaptive = match config.schedule {
        StepSchedule::Adaptive { .. } => Some(AdaptiveState::new(&model)),
        StepSchedule::Fixed { .. } => None,
    };

    let start = Instant::now();
    let elapsed = |on: bool| if on { start.elapsed().as_secs_f64() } else { 0.0 };
    let mut records = Vec::new();

    let rel0 = relative_error(x, &model)?;
    records.push(TraceRecord {
        iteration: 0,
        seconds: elapsed(config.record_timing),
        rel_error: rel0,
        mode: 0,
    });
    if rel0 <= config.stop.tol {
        return Ok((
            model,
            RunTrace {
                records,
                status: TerminalStatus::Converged,
            },
        ));
    }

    let mut status = TerminalStatus::MaxIters;
    for t in 1..=config.stop.max_iters {
        let mode = rng.gen_range(1..=n);

        let stepped: Result<()> = (|| {
            let others = model.factors_excluding(mode);
            let per_mode: Vec<ProbabilityVector> = others
                .iter()
                .map(|f| row_probabilities(f, config.strategy, config.rank_tol))
                .collect::<Result<_>>()?;
            let (zf, weighting, idx) = if config.strategy.is_block() {
                let part = &partitions[mode - 1];
                let block_probs = multiblock_probabilities(part, &per_mode)?;
                let (zf, p, idx) = krp_samp2(&block_probs, part, &others, &mut rng)?;
                (zf, BatchWeighting::Block(p), idx)
            } else {
                let (zf, probs, idx) = krp_samp1(config.batch, &per_mode, &others, &mut rng)?;
                let weighting = match config.strategy {
                    SamplerStrategy::Uniform => BatchWeighting::Uniform,
                    _ => BatchWeighting::Rows(probs),
                };
                (zf, weighting, idx)
            };
            let xf = extract_fibers(x, mode, idx.view())?;
            let grad = stochastic_gradient(model.factor(mode), &zf, &xf, &weighting, jn[mode - 1])?;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged("non-finite gradient".into()));
            }
            match config.schedule {
                StepSchedule::Fixed { alpha0, beta } => {
                    sgd_step(model.factor_mut(mode), &grad, alpha0, beta, t - 1)?;
                }
                StepSchedule::Adaptive { eta, b, eps } => {
                    let state = adaptive.as_mut().expect("adaptive state present");
                    adaptive_step(
                        model.factor_mut(mode),
                        state.accum_mut(mode),
                        &grad,
                        eta,
                        b,
                        eps,
                    )?;
                }
            }
            if model.factor(mode).iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged("factor overflowed".into()));
            }
            Ok(())
        })();

        if let Err(e) = stepped {
            status = TerminalStatus::Failed(format!("iteration {t}: {e}"));
            break;
        }

        if t % config.stop.cadence == 0 || t == config.stop.max_iters {
            let rel = match relative_error(x, &model) {
                Ok(r) if r.is_finite() => r,
                Ok(r) => {
                    status = TerminalStatus::Failed(format!("iteration {t}: error {r}"));
                    break;
                }
                Err(e) => {
                    status = TerminalStatus::Failed(format!("iteration {t}: {e}"));
                    break;
                }
            };
            records.push(TraceRecord {
                iteration: t,
                seconds: elapsed(config.record_timing),
                rel_error: rel,
                mode,
            });
            if rel <= config.stop.tol {
                status = TerminalStatus::Converged;
                break;
            }
        }
    }

    Ok((model, RunTrace { records, status }))
}
