//! Slow, independent reference implementations used to verify the fast
//! paths, plus a self-check suite the CLI exposes.
//!
//! Everything here recomputes index arithmetic from scratch rather than
//! calling the production helpers, so agreement between the two is a real
//! cross-check and not a tautology. The combinatorial routines refuse to
//! materialize more than `cap` rows.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sampling::{
    krp_samp1, krp_samp2, leverage_scores, multiblock_probabilities, BatchWeighting,
    BlockPartition, ProbabilityVector, SamplerStrategy,
};
use crate::solver::{row_probabilities, stochastic_gradient, stochastic_gradient_rowwise};
use crate::synth::add_noise;
use crate::tensor::{
    column_count, extract_fibers, linear_index, objective, reconstruct, tuple_at, DenseTensor,
    KruskalModel, ModeIndexTuple,
};

/// Default ceiling on explicitly materialized Khatri-Rao rows.
pub const DEFAULT_CAP: usize = 100_000;

/// Full Khatri-Rao product of the given factors, first factor's index
/// running fastest. Row j holds the elementwise product of the factor rows
/// addressed by the mixed-radix digits of j.
pub fn explicit_krp(factors: &[&Array2<f64>], cap: usize) -> Result<Array2<f64>> {
    if factors.is_empty() {
        return Err(Error::ShapeMismatch("no factors".into()));
    }
    let r = factors[0].ncols();
    if factors.iter().any(|f| f.ncols() != r) {
        return Err(Error::ShapeMismatch(
            "factors disagree on column count".into(),
        ));
    }
    let mut total = 1usize;
    for f in factors {
        total = total
            .checked_mul(f.nrows())
            .ok_or(Error::CapExceeded {
                got: usize::MAX,
                cap,
            })?;
    }
    if total > cap {
        return Err(Error::CapExceeded { got: total, cap });
    }
    let mut z = Array2::ones((total, r));
    for j in 0..total {
        let mut rem = j;
        for f in factors {
            let i = rem % f.nrows();
            rem /= f.nrows();
            for c in 0..r {
                z[(j, c)] *= f[(i, c)];
            }
        }
    }
    Ok(z)
}

/// Leverage scores of the fully materialized Khatri-Rao product.
pub fn exact_krp_leverage(factors: &[&Array2<f64>], cap: usize) -> Result<Vec<f64>> {
    Ok(leverage_scores(&explicit_krp(factors, cap)?))
}

/// Mode-n unfolding built entry by entry from the definition: the element at
/// full index (i_1..i_N) lands in row i_n and column
/// 1 + sum over k != n of (i_k - 1) * prod of I_m for m < k, m != n.
pub fn unfold_by_definition(x: &DenseTensor, mode: usize) -> Result<Array2<f64>> {
    let dims = x.dims().to_vec();
    let n = dims.len();
    if mode < 1 || mode > n {
        return Err(Error::ModeOutOfRange { mode, ndim: n });
    }
    let mut weight = vec![0usize; n];
    let mut jn = 1usize;
    for k in 0..n {
        if k + 1 != mode {
            weight[k] = jn;
            jn *= dims[k];
        }
    }
    let mut out = Array2::zeros((dims[mode - 1], jn));
    let mut idx = vec![0usize; n];
    loop {
        let row = idx[mode - 1];
        let col: usize = (0..n)
            .filter(|&k| k + 1 != mode)
            .map(|k| idx[k] * weight[k])
            .sum();
        let full: Vec<usize> = idx.iter().map(|&i| i + 1).collect();
        out[(row, col)] = x.get(&full)?;
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == n {
                return Ok(out);
            }
        }
    }
}

/// Exact gradient of f scaled by the column count:
/// (A Z^T Z - X_(n) Z) / J_n, built from the explicit Khatri-Rao product
/// and the definitional unfolding.
pub fn full_gradient(x: &DenseTensor, model: &KruskalModel, mode: usize) -> Result<Array2<f64>> {
    let others = model.factors_excluding(mode);
    let z = explicit_krp(&others, DEFAULT_CAP)?;
    let xu = unfold_by_definition(x, mode)?;
    let jn = z.nrows() as f64;
    Ok((model.factor(mode).dot(&z.t().dot(&z)) - xu.dot(&z)) / jn)
}

/// Central-difference gradient of f(A) = (1/2)||X - reconstruction||_F^2
/// with respect to one factor. This approximates J_n times `full_gradient`.
pub fn fd_gradient(
    x: &DenseTensor,
    model: &KruskalModel,
    mode: usize,
    h: f64,
) -> Result<Array2<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig("step h must be positive".into()));
    }
    let mut m = model.clone();
    let (rows, cols) = m.factor(mode).dim();
    let mut g = Array2::zeros((rows, cols));
    for i in 0..rows {
        for c in 0..cols {
            let orig = m.factor(mode)[(i, c)];
            m.factor_mut(mode)[(i, c)] = orig + h;
            let fp = objective(x, &m)?;
            m.factor_mut(mode)[(i, c)] = orig - h;
            let fm = objective(x, &m)?;
            m.factor_mut(mode)[(i, c)] = orig;
            g[(i, c)] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(g)
}

/// Importance-weighted gradient over every unfolding column exactly once,
/// each carrying probability 1/J_n. Algebraically identical to
/// `full_gradient`, but routed through the sampled-estimator code path.
pub fn exhaustive_batch_gradient(
    x: &DenseTensor,
    model: &KruskalModel,
    mode: usize,
) -> Result<Array2<f64>> {
    let dims = x.dims();
    let jn = column_count(dims, mode)?;
    if jn > DEFAULT_CAP {
        return Err(Error::CapExceeded {
            got: jn,
            cap: DEFAULT_CAP,
        });
    }
    let others = model.factors_excluding(mode);
    let mut idx = Array2::zeros((jn, dims.len() - 1));
    for j in 1..=jn {
        let t = tuple_at(dims, mode, j)?;
        for (k, &i) in t.entries.iter().enumerate() {
            idx[(j - 1, k)] = i;
        }
    }
    let zf = crate::sampling::skr_product(idx.view(), &others)?;
    let xf = extract_fibers(x, mode, idx.view())?;
    let probs = vec![1.0 / jn as f64; jn];
    stochastic_gradient_rowwise(model.factor(mode), &zf, &xf, &probs, jn)
}

/// Monte Carlo average of a stochastic gradient estimator.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: Array2<f64>,
    /// Frobenius norm of the entrywise standard errors of the mean.
    pub std_error: f64,
    pub trials: usize,
}

fn mc_mean_gradient_impl(
    x: &DenseTensor,
    model: &KruskalModel,
    mode: usize,
    strategy: SamplerStrategy,
    batch: usize,
    trials: usize,
    rank_tol: Option<f64>,
    seed: u64,
    tamper: bool,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let others = model.factors_excluding(mode);
    let per_mode: Vec<ProbabilityVector> = others
        .iter()
        .map(|f| row_probabilities(f, strategy, rank_tol))
        .collect::<Result<_>>()?;
    let jn = column_count(x.dims(), mode)?;
    let partition = if strategy.is_block() {
        Some(BlockPartition::contiguous(x.dims(), mode, batch)?)
    } else {
        None
    };
    let block_probs = match &partition {
        Some(p) => Some(multiblock_probabilities(p, &per_mode)?),
        None => None,
    };

    let a = model.factor(mode);
    let mut mean = Array2::<f64>::zeros(a.dim());
    let mut m2 = Array2::<f64>::zeros(a.dim());
    for k in 1..=trials {
        let (zf, weighting, idx) = if let (Some(part), Some(bp)) = (&partition, &block_probs) {
            let (zf, p, idx) = krp_samp2(bp, part, &others, &mut rng)?;
            (zf, BatchWeighting::Block(p), idx)
        } else {
            let (zf, probs, idx) = krp_samp1(batch, &per_mode, &others, &mut rng)?;
            let weighting = match strategy {
                SamplerStrategy::Uniform => BatchWeighting::Uniform,
                _ => BatchWeighting::Rows(probs),
            };
            (zf, weighting, idx)
        };
        let xf = extract_fibers(x, mode, idx.view())?;
        let g = if tamper {
            // Deliberately wrong estimator (fiber term sign flipped); the
            // self-check suite uses it to prove the unbiasedness checks can
            // fail.
            let b = zf.nrows() as f64;
            (a.dot(&zf.t().dot(&zf)) + xf.dot(&zf)) / b
        } else {
            stochastic_gradient(a, &zf, &xf, &weighting, jn)?
        };
        let kf = k as f64;
        ndarray::Zip::from(&mut mean)
            .and(&mut m2)
            .and(&g)
            .for_each(|m, s, &gv| {
                let delta = gv - *m;
                *m += delta / kf;
                *s += delta * (gv - *m);
            });
    }
    let std_error = if trials > 1 {
        (m2.sum() / (trials as f64 * (trials as f64 - 1.0))).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(McEstimate {
        mean,
        std_error,
        trials,
    })
}

/// Average `trials` draws of the configured estimator at a fixed model.
/// The mean converges to `full_gradient` for every strategy.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_mean_gradient(
    x: &DenseTensor,
    model: &KruskalModel,
    mode: usize,
    strategy: SamplerStrategy,
    batch: usize,
    trials: usize,
    rank_tol: Option<f64>,
    seed: u64,
) -> Result<McEstimate> {
    mc_mean_gradient_impl(
        x, model, mode, strategy, batch, trials, rank_tol, seed, false,
    )
}

/// One self-check outcome. `measured` and `threshold` are in the check's
/// own units; `pass` already accounts for the comparison direction.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Outcome of the whole self-check suite.
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,measured,threshold,pass\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{}\n",
                c.name, c.measured, c.threshold, c.pass
            ));
        }
        out
    }
}

/// Knobs for the self-check suite.
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Run only checks whose name contains this substring.
    pub only: Option<String>,
    /// Override the Monte Carlo trial count of the unbiasedness checks.
    pub trials: Option<usize>,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            only: None,
            trials: None,
            seed: 1,
        }
    }
}

fn rel_frobenius_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fixed small factors the distribution-law checks draw from.
fn law_factors() -> (Array2<f64>, Array2<f64>) {
    (
        ndarray::array![[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]],
        ndarray::array![[1.0, 1.0], [2.0, 0.0], [0.0, 1.0], [1.0, 3.0]],
    )
}

/// Run the self-check suite against an optional external fixture (tensor
/// plus evaluation model); without one, a seeded random instance is used.
pub fn run_oracle_suite(
    opts: &SuiteOptions,
    fixture: Option<(&DenseTensor, &KruskalModel)>,
) -> Result<OracleReport> {
    let wants = |name: &str| match &opts.only {
        Some(f) => name.contains(f.as_str()),
        None => true,
    };
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let owned;
    let (x, model) = match fixture {
        Some((x, m)) => (x, m),
        None => {
            let truth = KruskalModel::random_uniform(&[3, 3, 3], 2, &mut rng)?;
            let clean = reconstruct(&truth);
            let noisy = add_noise(&clean, 0.05, &mut rng)?;
            let eval = KruskalModel::random_uniform(&[3, 3, 3], 2, &mut rng)?;
            owned = (noisy, eval);
            (&owned.0, &owned.1)
        }
    };

    if wants("krp-identity") {
        let f1 = Array2::from_shape_fn((3, 2), |_| rng.gen::<f64>() - 0.5);
        let f2 = Array2::from_shape_fn((2, 2), |_| rng.gen::<f64>() - 0.5);
        let f3 = Array2::from_shape_fn((4, 2), |_| rng.gen::<f64>() - 0.5);
        let factors = [&f1, &f2, &f3];
        let z = explicit_krp(&factors, DEFAULT_CAP)?;
        let dims = [5, 3, 2, 4];
        let jn = column_count(&dims, 1)?;
        let mut idx = Array2::zeros((jn, 3));
        for j in 1..=jn {
            let t = tuple_at(&dims, 1, j)?;
            for (k, &i) in t.entries.iter().enumerate() {
                idx[(j - 1, k)] = i;
            }
        }
        let sampled = crate::sampling::skr_product(idx.view(), &factors)?;
        let measured = max_abs_diff(&sampled, &z);
        checks.push(CheckResult {
            name: "krp-identity".into(),
            measured,
            threshold: 0.0,
            pass: measured <= 0.0,
        });
    }

    if wants("unfolding-identity") {
        let mut measured = 0.0f64;
        for mode in 1..=x.ndim() {
            let by_def = unfold_by_definition(x, mode)?;
            let jn = column_count(x.dims(), mode)?;
            let mut idx = Array2::zeros((jn, x.ndim() - 1));
            for j in 1..=jn {
                let t = tuple_at(x.dims(), mode, j)?;
                for (k, &i) in t.entries.iter().enumerate() {
                    idx[(j - 1, k)] = i;
                }
            }
            let gathered = extract_fibers(x, mode, idx.view())?;
            measured = measured.max(max_abs_diff(&gathered, &by_def));
        }
        checks.push(CheckResult {
            name: "unfolding-identity".into(),
            measured,
            threshold: 0.0,
            pass: measured <= 0.0,
        });
    }

    if wants("leverage-bound") {
        // Leverage of a Khatri-Rao row never exceeds the product of the
        // per-factor row leverages.
        let mut measured = f64::NEG_INFINITY;
        for _ in 0..10 {
            let f1 = Array2::from_shape_fn((4, 2), |_| rng.gen::<f64>() - 0.5);
            let f2 = Array2::from_shape_fn((3, 2), |_| rng.gen::<f64>() - 0.5);
            let lz = exact_krp_leverage(&[&f1, &f2], DEFAULT_CAP)?;
            let l1 = leverage_scores(&f1);
            let l2 = leverage_scores(&f2);
            for (j, &actual) in lz.iter().enumerate() {
                let bound = l1[j % 4] * l2[j / 4];
                measured = measured.max(actual - bound);
            }
        }
        checks.push(CheckResult {
            name: "leverage-bound".into(),
            measured,
            threshold: 1e-10,
            pass: measured <= 1e-10,
        });
    }

    if wants("row-law-tv") {
        let (f2, f3) = law_factors();
        let p2 = crate::sampling::leverage_probabilities(&f2)?;
        let p3 = crate::sampling::leverage_probabilities(&f3)?;
        let draws = 1_000_000;
        let (_, _, idx) = krp_samp1(draws, &[p2.clone(), p3.clone()], &[&f2, &f3], &mut rng)?;
        let mut counts = vec![0usize; 12];
        for row in idx.rows() {
            counts[(row[0] - 1) + 3 * (row[1] - 1)] += 1;
        }
        let mut tv = 0.0;
        for (o, &c) in counts.iter().enumerate() {
            let theory = p2.weights()[o % 3] * p3.weights()[o / 3];
            tv += (c as f64 / draws as f64 - theory).abs();
        }
        let measured = 0.5 * tv;
        checks.push(CheckResult {
            name: "row-law-tv".into(),
            measured,
            threshold: 0.02,
            pass: measured <= 0.02,
        });
    }

    if wants("block-law-tv") {
        let (f2, f3) = law_factors();
        let p2 = crate::sampling::leverage_probabilities(&f2)?;
        let p3 = crate::sampling::leverage_probabilities(&f3)?;
        let dims = [2, 3, 4];
        let batch = 5;
        let part = BlockPartition::contiguous(&dims, 1, batch)?;
        let bp = multiblock_probabilities(&part, &[p2, p3])?;
        let draws = 100_000;
        let mut counts = vec![0usize; part.num_blocks()];
        for _ in 0..draws {
            let (_, _, idx) = krp_samp2(&bp, &part, &[&f2, &f3], &mut rng)?;
            let first = ModeIndexTuple::new(1, idx.row(0).to_vec());
            let j = linear_index(&dims, &first)?;
            counts[(j - 1) / batch] += 1;
        }
        let mut tv = 0.0;
        for (d, &c) in counts.iter().enumerate() {
            tv += (c as f64 / draws as f64 - bp.weights()[d]).abs();
        }
        let measured = 0.5 * tv;
        checks.push(CheckResult {
            name: "block-law-tv".into(),
            measured,
            threshold: 0.02,
            pass: measured <= 0.02,
        });
    }

    let trials = opts.trials.unwrap_or(100_000);
    let mode = 2.min(x.ndim());
    for strategy in SamplerStrategy::ALL {
        let name = format!("unbiased-{strategy}");
        if !wants(&name) {
            continue;
        }
        let exact = full_gradient(x, model, mode)?;
        let mc = monte_carlo_mean_gradient(x, model, mode, strategy, 2, trials, None, opts.seed)?;
        let measured = rel_frobenius_diff(&mc.mean, &exact);
        checks.push(CheckResult {
            name,
            measured,
            threshold: 0.02,
            pass: measured <= 0.02,
        });
    }

    if wants("exhaustive-batch") {
        let mut measured = 0.0f64;
        for m in 1..=x.ndim() {
            let exact = full_gradient(x, model, m)?;
            let exhaustive = exhaustive_batch_gradient(x, model, m)?;
            measured = measured.max(rel_frobenius_diff(&exhaustive, &exact));

            // A partition made of one all-covering block is drawn with
            // probability one and must also reproduce the exact gradient.
            let jn = column_count(x.dims(), m)?;
            let part = BlockPartition::contiguous(x.dims(), m, jn)?;
            let others = model.factors_excluding(m);
            let bp = ProbabilityVector::new(vec![1.0])?;
            let (zf, p, idx) = krp_samp2(&bp, &part, &others, &mut rng)?;
            let xf = extract_fibers(x, m, idx.view())?;
            let single =
                crate::solver::stochastic_gradient_block(model.factor(m), &zf, &xf, p, jn)?;
            measured = measured.max(rel_frobenius_diff(&single, &exact));
        }
        checks.push(CheckResult {
            name: "exhaustive-batch".into(),
            measured,
            threshold: 1e-10,
            pass: measured <= 1e-10,
        });
    }

    if wants("fd-consistency") {
        let mut measured = 0.0f64;
        for m in 1..=x.ndim() {
            let exact = full_gradient(x, model, m)?;
            let jn = column_count(x.dims(), m)? as f64;
            let fd = fd_gradient(x, model, m, 1e-6)? / jn;
            for (a, b) in exact.iter().zip(fd.iter()) {
                measured = measured.max((a - b).abs() / b.abs().max(1e-8));
            }
        }
        checks.push(CheckResult {
            name: "fd-consistency".into(),
            measured,
            threshold: 1e-5,
            pass: measured <= 1e-5,
        });
    }

    if wants("noise-level") {
        let clean = reconstruct(model);
        let level = 0.05;
        let noisy = add_noise(&clean, level, &mut rng)?;
        let diff: f64 = clean
            .values()
            .iter()
            .zip(noisy.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let measured = (diff / clean.frobenius_norm() - level).abs();
        checks.push(CheckResult {
            name: "noise-level".into(),
            measured,
            threshold: 1e-12,
            pass: measured <= 1e-12,
        });
    }

    if wants("negative-control") {
        // The deliberately broken estimator must be visibly biased;
        // otherwise the unbiasedness checks above prove nothing.
        let exact = full_gradient(x, model, mode)?;
        let mc = mc_mean_gradient_impl(
            x,
            model,
            mode,
            SamplerStrategy::Uniform,
            2,
            trials.min(20_000),
            None,
            opts.seed,
            true,
        )?;
        let measured = rel_frobenius_diff(&mc.mean, &exact);
        checks.push(CheckResult {
            name: "negative-control".into(),
            measured,
            threshold: 0.05,
            pass: measured > 0.05,
        });
    }

    Ok(OracleReport { checks })
}
