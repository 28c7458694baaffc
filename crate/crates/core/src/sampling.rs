//! Importance probabilities from factor matrices, per-mode index sampling,
//! and construction of sampled Khatri-Rao rows without forming the full
//! product.
//!
//! Two families of samplers are provided. Row-wise samplers draw B fiber
//! tuples independently, one index per remaining mode, and record the exact
//! product probability of each tuple. Block samplers partition the unfolding
//! columns [1..J_n] into D = ceil(J_n/B) consecutive windows and draw one
//! window per batch with probability proportional to its total row weight;
//! drawing a single shared window (rather than one window per mode) is what
//! keeps the weighted block gradient an unbiased estimate of the full
//! gradient, because the weighted window sums telescope over a partition.

use ndarray::{Array2, ArrayView2};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{column_count, excluded_dims, tuple_at};

/// Nonnegative weights summing to one (within 1e-12).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    weights: Vec<f64>,
}

impl ProbabilityVector {
    /// Accept weights that already sum to one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::DegenerateDistribution("no outcomes".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::DegenerateDistribution(
                "negative or non-finite weight".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::DegenerateDistribution(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(Self { weights })
    }

    /// Normalize raw nonnegative weights by their sum.
    pub fn from_weights(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::DegenerateDistribution("no outcomes".into()));
        }
        if raw.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::DegenerateDistribution(
                "negative or non-finite weight".into(),
            ));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::DegenerateDistribution(
                "weights sum to zero".into(),
            ));
        }
        Ok(Self {
            weights: raw.into_iter().map(|w| w / sum).collect(),
        })
    }

    /// Equal weight on n outcomes.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Default rank threshold for the orthogonal factorization:
/// max(rows, cols) * machine epsilon * largest column norm.
pub fn default_rank_tolerance(a: &Array2<f64>) -> f64 {
    a.nrows().max(a.ncols()) as f64 * f64::EPSILON * linalg::max_column_norm(a)
}

/// Leverage score of each row: squared row norm of an orthonormal basis Q of
/// range(A), with the numerical rank decided by `rank_tol`. Scores lie in
/// [0,1] and sum to the rank; a zero matrix yields all-zero scores.
pub fn leverage_scores_with_tol(a: &Array2<f64>, rank_tol: f64) -> Vec<f64> {
    let (w, norms) = linalg::jacobi_orthogonalize(a);
    let mut scores = vec![0.0; a.nrows()];
    for (c, &sigma) in norms.iter().enumerate() {
        if sigma > rank_tol {
            for (i, s) in scores.iter_mut().enumerate() {
                let q = w[(i, c)] / sigma;
                *s += q * q;
            }
        }
    }
    scores
}

pub fn leverage_scores(a: &Array2<f64>) -> Vec<f64> {
    leverage_scores_with_tol(a, default_rank_tolerance(a))
}

/// Row distribution proportional to leverage scores. Normalizing by the
/// actual score sum (the numerical rank) keeps this a proper distribution
/// for rank-deficient factors.
pub fn leverage_probabilities(a: &Array2<f64>) -> Result<ProbabilityVector> {
    ProbabilityVector::from_weights(leverage_scores(a))
}

pub fn leverage_probabilities_with_tol(
    a: &Array2<f64>,
    rank_tol: f64,
) -> Result<ProbabilityVector> {
    ProbabilityVector::from_weights(leverage_scores_with_tol(a, rank_tol))
}

/// Row distribution proportional to squared Euclidean row norms.
pub fn euclidean_probabilities(a: &Array2<f64>) -> Result<ProbabilityVector> {
    let w = a
        .rows()
        .into_iter()
        .map(|r| r.dot(&r))
        .collect::<Vec<f64>>();
    ProbabilityVector::from_weights(w)
}

/// B i.i.d. draws (1-based outcomes, with replacement) from a distribution.
pub fn multinomial_sample<R: Rng>(
    p: &ProbabilityVector,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(p.weights())
        .map_err(|e| Error::DegenerateDistribution(e.to_string()))?;
    Ok((0..count).map(|_| dist.sample(rng) + 1).collect())
}

/// Rows of the Khatri-Rao product selected by `idx` without forming it:
/// row b is the elementwise product of the addressed factor rows, multiplied
/// in ascending factor order starting from ones.
pub fn skr_product(idx: ArrayView2<usize>, factors: &[&Array2<f64>]) -> Result<Array2<f64>> {
    if factors.is_empty() {
        return Err(Error::ShapeMismatch("no factors".into()));
    }
    let r = factors[0].ncols();
    if factors.iter().any(|f| f.ncols() != r) {
        return Err(Error::ShapeMismatch(
            "factors disagree on column count".into(),
        ));
    }
    if idx.ncols() != factors.len() {
        return Err(Error::ShapeMismatch(format!(
            "tuples have {} entries for {} factors",
            idx.ncols(),
            factors.len()
        )));
    }
    let b = idx.nrows();
    let mut z = Array2::ones((b, r));
    for (k, f) in factors.iter().enumerate() {
        for row in 0..b {
            let i = idx[(row, k)];
            if i < 1 || i > f.nrows() {
                return Err(Error::IndexOutOfRange {
                    mode: k + 1,
                    index: i,
                    bound: f.nrows(),
                });
            }
            for c in 0..r {
                z[(row, c)] *= f[(i - 1, c)];
            }
        }
    }
    Ok(z)
}

/// Draw B fiber tuples independently (one multinomial draw per remaining
/// mode, modes in ascending order, a full batch per mode) and build the
/// matching KRP rows. Returns (Z_F, exact per-row product probabilities,
/// idx).
pub fn krp_samp1<R: Rng>(
    b: usize,
    per_mode: &[ProbabilityVector],
    factors: &[&Array2<f64>],
    rng: &mut R,
) -> Result<(Array2<f64>, Vec<f64>, Array2<usize>)> {
    if b == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if per_mode.len() != factors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} distributions for {} factors",
            per_mode.len(),
            factors.len()
        )));
    }
    for (k, (p, f)) in per_mode.iter().zip(factors).enumerate() {
        if p.len() != f.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "distribution {} has {} outcomes for {} rows",
                k + 1,
                p.len(),
                f.nrows()
            )));
        }
    }
    let mut idx = Array2::zeros((b, factors.len()));
    for (k, p) in per_mode.iter().enumerate() {
        let draws = multinomial_sample(p, b, rng)?;
        for (row, i) in draws.into_iter().enumerate() {
            idx[(row, k)] = i;
        }
    }
    let probs = (0..b)
        .map(|row| {
            per_mode
                .iter()
                .enumerate()
                .map(|(k, p)| p.weights()[idx[(row, k)] - 1])
                .product()
        })
        .collect();
    let z = skr_product(idx.view(), factors)?;
    Ok((z, probs, idx))
}

/// Partition of the mode-n unfolding columns [1..J_n] into consecutive
/// windows of `batch` columns (the last window is shorter when the batch
/// size does not divide J_n). Stores the per-mode index tuple of every
/// column so a window's tuples can be handed straight to `skr_product`.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    mode: usize,
    batch: usize,
    dims_excl: Vec<usize>,
    tuples: Array2<usize>,
}

impl BlockPartition {
    pub fn contiguous(dims: &[usize], mode: usize, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let dims_excl = excluded_dims(dims, mode)?;
        let jn = column_count(dims, mode)?;
        let mut tuples = Array2::zeros((jn, dims_excl.len()));
        for j in 1..=jn {
            let t = tuple_at(dims, mode, j)?;
            for (k, &i) in t.entries.iter().enumerate() {
                tuples[(j - 1, k)] = i;
            }
        }
        Ok(Self {
            mode,
            batch,
            dims_excl,
            tuples,
        })
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn num_columns(&self) -> usize {
        self.tuples.nrows()
    }

    pub fn num_blocks(&self) -> usize {
        self.num_columns().div_ceil(self.batch)
    }

    pub fn dims_excluded(&self) -> &[usize] {
        &self.dims_excl
    }

    /// Tuples of the 1-based block `d`, one unfolding column per row.
    pub fn block_tuples(&self, d: usize) -> Result<ArrayView2<'_, usize>> {
        let dcount = self.num_blocks();
        if d < 1 || d > dcount {
            return Err(Error::IndexOutOfRange {
                mode: self.mode,
                index: d,
                bound: dcount,
            });
        }
        let lo = (d - 1) * self.batch;
        let hi = (d * self.batch).min(self.num_columns());
        Ok(self.tuples.slice(ndarray::s![lo..hi, ..]))
    }
}

/// Distribution over blocks given per-row weights for a single mode: the
/// weight of a block is the sum of its rows' weights (repeats counted once
/// per occurrence), renormalized over all blocks.
pub fn block_probabilities(
    per_row: &ProbabilityVector,
    blocks: &[Vec<usize>],
) -> Result<ProbabilityVector> {
    let mut w = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut acc = 0.0;
        for &i in block {
            if i < 1 || i > per_row.len() {
                return Err(Error::IndexOutOfRange {
                    mode: 0,
                    index: i,
                    bound: per_row.len(),
                });
            }
            acc += per_row.weights()[i - 1];
        }
        w.push(acc);
    }
    ProbabilityVector::from_weights(w)
}

/// Distribution over the windows of a partition: each window's weight is the
/// sum over its columns of the product of per-mode row weights. This is the
/// exact selection law the block gradient divides by.
pub fn multiblock_probabilities(
    partition: &BlockPartition,
    per_mode: &[ProbabilityVector],
) -> Result<ProbabilityVector> {
    if per_mode.len() != partition.dims_excluded().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} distributions for {} remaining modes",
            per_mode.len(),
            partition.dims_excluded().len()
        )));
    }
    for (k, (p, &d)) in per_mode
        .iter()
        .zip(partition.dims_excluded())
        .enumerate()
    {
        if p.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "distribution {} has {} outcomes for extent {}",
                k + 1,
                p.len(),
                d
            )));
        }
    }
    let dcount = partition.num_blocks();
    let mut w = Vec::with_capacity(dcount);
    for d in 1..=dcount {
        let rows = partition.block_tuples(d)?;
        let mut acc = 0.0;
        for row in rows.rows() {
            let mut prod = 1.0;
            for (k, &i) in row.iter().enumerate() {
                prod *= per_mode[k].weights()[i - 1];
            }
            acc += prod;
        }
        w.push(acc);
    }
    ProbabilityVector::from_weights(w)
}

/// Draw one window from the partition and build its KRP rows. Returns
/// (Z_F, probability of the drawn window, idx).
pub fn krp_samp2<R: Rng>(
    block_probs: &ProbabilityVector,
    partition: &BlockPartition,
    factors: &[&Array2<f64>],
    rng: &mut R,
) -> Result<(Array2<f64>, f64, Array2<usize>)> {
    if block_probs.len() != partition.num_blocks() {
        return Err(Error::ShapeMismatch(format!(
            "{} block weights for {} blocks",
            block_probs.len(),
            partition.num_blocks()
        )));
    }
    let d = multinomial_sample(block_probs, 1, rng)?[0];
    let idx = partition.block_tuples(d)?.to_owned();
    let z = skr_product(idx.view(), factors)?;
    Ok((z, block_probs.weights()[d - 1], idx))
}

/// The five fiber-sampling strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerStrategy {
    Uniform,
    Leverage,
    Euclidean,
    BlockLeverage,
    BlockEuclidean,
}

impl SamplerStrategy {
    pub const ALL: [SamplerStrategy; 5] = [
        SamplerStrategy::Uniform,
        SamplerStrategy::Leverage,
        SamplerStrategy::Euclidean,
        SamplerStrategy::BlockLeverage,
        SamplerStrategy::BlockEuclidean,
    ];

    pub fn is_block(self) -> bool {
        matches!(
            self,
            SamplerStrategy::BlockLeverage | SamplerStrategy::BlockEuclidean
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerStrategy::Uniform => "uniform",
            SamplerStrategy::Leverage => "leverage",
            SamplerStrategy::Euclidean => "euclidean",
            SamplerStrategy::BlockLeverage => "block-leverage",
            SamplerStrategy::BlockEuclidean => "block-euclidean",
        }
    }
}

impl std::fmt::Display for SamplerStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SamplerStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerStrategy::Uniform),
            "leverage" => Ok(SamplerStrategy::Leverage),
            "euclidean" => Ok(SamplerStrategy::Euclidean),
            "block-leverage" => Ok(SamplerStrategy::BlockLeverage),
            "block-euclidean" => Ok(SamplerStrategy::BlockEuclidean),
            other => Err(Error::InvalidConfig(format!("unknown sampler '{other}'"))),
        }
    }
}

/// How a batch's selection probabilities are recorded.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchWeighting {
    /// Uniform baseline; no reweighting.
    Uniform,
    /// Exact per-fiber product probabilities (row-wise strategies).
    Rows(Vec<f64>),
    /// Probability of the single drawn window (block strategies).
    Block(f64),
}

/// Sampled fiber tuples for one mode together with their selection law.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub mode: usize,
    pub strategy: SamplerStrategy,
    pub idx: Array2<usize>,
    pub weighting: BatchWeighting,
}

impl SampleBatch {
    pub fn new(
        mode: usize,
        strategy: SamplerStrategy,
        idx: Array2<usize>,
        weighting: BatchWeighting,
    ) -> Result<Self> {
        let ok = match (&weighting, strategy) {
            (BatchWeighting::Uniform, SamplerStrategy::Uniform) => true,
            (BatchWeighting::Rows(p), SamplerStrategy::Leverage)
            | (BatchWeighting::Rows(p), SamplerStrategy::Euclidean) => p.len() == idx.nrows(),
            (BatchWeighting::Block(_), SamplerStrategy::BlockLeverage)
            | (BatchWeighting::Block(_), SamplerStrategy::BlockEuclidean) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidConfig(
                "batch weighting does not match the sampler strategy".into(),
            ));
        }
        Ok(Self {
            mode,
            strategy,
            idx,
            weighting,
        })
    }

    pub fn batch_len(&self) -> usize {
        self.idx.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leverage_of_identity_is_all_ones() {
        let a = Array2::eye(3);
        let l = leverage_scores(&a);
        for s in l {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn leverage_of_zero_row_is_zero() {
        let a = array![[1.0, 2.0], [0.0, 0.0], [3.0, -1.0]];
        let l = leverage_scores(&a);
        assert_abs_diff_eq!(l[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn leverage_splits_duplicated_direction() {
        let a = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let l = leverage_scores(&a);
        assert_abs_diff_eq!(l[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(l[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(l[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn leverage_probabilities_examples() {
        let p = leverage_probabilities(&Array2::eye(4)).unwrap();
        for &w in p.weights() {
            assert_abs_diff_eq!(w, 0.25, epsilon = 1e-12);
        }

        let a = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let p = leverage_probabilities(&a).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p.weights()[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p.weights()[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn leverage_probabilities_reject_zero_matrix() {
        let a = Array2::<f64>::zeros((3, 2));
        assert!(leverage_probabilities(&a).is_err());
    }

    #[test]
    fn orthonormal_columns_weight_by_row_norms() {
        // Orthonormal-column matrix: Q is the matrix itself, so leverage
        // probabilities equal normalized squared row norms.
        let s = 1.0 / 2.0f64.sqrt();
        let a = array![[s, 0.0], [s, 0.0], [0.0, 1.0]];
        let lev = leverage_probabilities(&a).unwrap();
        let euc = euclidean_probabilities(&a).unwrap();
        for (l, e) in lev.weights().iter().zip(euc.weights()) {
            assert_abs_diff_eq!(l, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn euclidean_probabilities_examples() {
        let a = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let p = euclidean_probabilities(&a).unwrap();
        assert_eq!(p.weights(), &[0.25, 0.25, 0.5]);

        let b = array![[2.0, 1.0], [2.0, 1.0], [2.0, 1.0]];
        let p = euclidean_probabilities(&b).unwrap();
        for &w in p.weights() {
            assert_abs_diff_eq!(w, 1.0 / 3.0, epsilon = 1e-12);
        }

        let c = array![[0.0, 0.0], [3.0, 4.0]];
        let p = euclidean_probabilities(&c).unwrap();
        assert_eq!(p.weights(), &[0.0, 1.0]);

        assert!(euclidean_probabilities(&Array2::<f64>::zeros((2, 2))).is_err());
    }

    #[test]
    fn block_probabilities_examples() {
        let per_row = ProbabilityVector::new(vec![0.25, 0.25, 0.5]).unwrap();

        // Disjoint equal-size blocks under a uniform row law stay uniform.
        let uniform = ProbabilityVector::new(vec![0.25; 4]).unwrap();
        let p = block_probabilities(&uniform, &[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);

        // Repeated indices count per occurrence: {1,2} holds 0.5, {3,3}
        // holds 1.0, normalizing to (1/3, 2/3).
        let p = block_probabilities(&per_row, &[vec![1, 2], vec![3, 3]]).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.weights()[1], 2.0 / 3.0, epsilon = 1e-12);

        let p = block_probabilities(&per_row, &[vec![1, 2, 3]]).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 1.0, epsilon = 1e-12);

        let zeroish = ProbabilityVector::new(vec![0.0, 1.0]).unwrap();
        assert!(block_probabilities(&zeroish, &[vec![1], vec![1]]).is_err());
    }

    #[test]
    fn multinomial_sample_degenerate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ProbabilityVector::new(vec![1.0]).unwrap();
        assert!(multinomial_sample(&p, 5, &mut rng)
            .unwrap()
            .iter()
            .all(|&i| i == 1));

        let p = ProbabilityVector::new(vec![0.0, 1.0]).unwrap();
        assert!(multinomial_sample(&p, 5, &mut rng)
            .unwrap()
            .iter()
            .all(|&i| i == 2));
    }

    #[test]
    fn multinomial_sample_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        let n = 1_000_000;
        let draws = multinomial_sample(&p, n, &mut rng).unwrap();
        let ones = draws.iter().filter(|&&i| i == 1).count() as f64 / n as f64;
        assert!((ones - 0.5).abs() <= 0.002, "frequency {ones}");
    }

    #[test]
    fn skr_product_examples() {
        let ones2 = Array2::ones((2, 3));
        let ones4 = Array2::ones((4, 3));
        let idx = array![[1usize, 2usize], [2, 4]];
        let z = skr_product(idx.view(), &[&ones2, &ones4]).unwrap();
        assert!(z.iter().all(|&v| v == 1.0));

        let a2 = array![[2.0, 0.0], [0.0, 3.0]];
        let a3 = array![[1.0, 1.0]];
        let idx = array![[2usize, 1usize]];
        let z = skr_product(idx.view(), &[&a2, &a3]).unwrap();
        assert_eq!(z.row(0).to_vec(), vec![0.0, 3.0]);
    }

    #[test]
    fn skr_product_rejects_out_of_range() {
        let a = array![[1.0, 2.0]];
        let idx = array![[2usize]];
        assert!(skr_product(idx.view(), &[&a]).is_err());
    }

    #[test]
    fn krp_samp1_product_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f2 = Array2::ones((2, 2));
        let f3 = Array2::ones((3, 2));
        let p2 = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        let p3 = ProbabilityVector::new(vec![1.0 / 3.0; 3]).unwrap();
        let (_, probs, idx) =
            krp_samp1(8, &[p2, p3], &[&f2, &f3], &mut rng).unwrap();
        assert_eq!(idx.nrows(), 8);
        for p in probs {
            assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn krp_samp1_identity_leverage_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f2 = Array2::eye(3);
        let f3 = Array2::eye(3);
        let p2 = leverage_probabilities(&f2).unwrap();
        let p3 = leverage_probabilities(&f3).unwrap();
        let (_, probs, _) = krp_samp1(6, &[p2, p3], &[&f2, &f3], &mut rng).unwrap();
        for p in probs {
            assert_abs_diff_eq!(p, 1.0 / 9.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn contiguous_partition_covers_all_columns_once() {
        let dims = [3, 4, 5];
        for mode in 1..=3 {
            let part = BlockPartition::contiguous(&dims, mode, 7).unwrap();
            let jn = part.num_columns();
            assert_eq!(part.num_blocks(), jn.div_ceil(7));
            let mut seen = 0;
            for d in 1..=part.num_blocks() {
                let rows = part.block_tuples(d).unwrap();
                assert!(rows.nrows() <= 7);
                seen += rows.nrows();
            }
            assert_eq!(seen, jn);
        }
    }

    #[test]
    fn tail_block_is_short_when_batch_does_not_divide() {
        let part = BlockPartition::contiguous(&[2, 3, 2], 1, 4).unwrap();
        // J_1 = 6, B = 4 -> blocks of 4 and 2 columns.
        assert_eq!(part.num_blocks(), 2);
        assert_eq!(part.block_tuples(1).unwrap().nrows(), 4);
        assert_eq!(part.block_tuples(2).unwrap().nrows(), 2);
    }

    #[test]
    fn multiblock_weights_sum_block_products() {
        // dims (., 2, 2) mode 1: columns in order are tuples
        // (1,1),(2,1),(1,2),(2,2); batch 2 gives blocks {(1,1),(2,1)} and
        // {(1,2),(2,2)} with weights p2(1)p3(1)+p2(2)p3(1) = p3(1) etc.
        let part = BlockPartition::contiguous(&[9, 2, 2], 1, 2).unwrap();
        let p2 = ProbabilityVector::new(vec![0.3, 0.7]).unwrap();
        let p3 = ProbabilityVector::new(vec![0.6, 0.4]).unwrap();
        let w = multiblock_probabilities(&part, &[p2, p3]).unwrap();
        assert_abs_diff_eq!(w.weights()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights()[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn krp_samp2_single_block_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = [3, 2, 2];
        let part = BlockPartition::contiguous(&dims, 1, 4).unwrap();
        assert_eq!(part.num_blocks(), 1);
        let probs = ProbabilityVector::new(vec![1.0]).unwrap();
        let f2 = array![[1.0, 2.0], [3.0, 4.0]];
        let f3 = array![[1.0, 1.0], [2.0, 2.0]];
        let (z, p, idx) = krp_samp2(&probs, &part, &[&f2, &f3], &mut rng).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(idx.nrows(), 4);
        assert_eq!(z.nrows(), 4);
        // All four tuples in unfolding order.
        assert_eq!(idx, array![[1, 1], [2, 1], [1, 2], [2, 2]]);
    }

    #[test]
    fn samplers_are_deterministic_under_seed() {
        let f2 = array![[1.0, 2.0], [3.0, 4.0], [0.5, 0.5]];
        let f3 = array![[1.0, 1.0], [2.0, 0.0]];
        let p2 = euclidean_probabilities(&f2).unwrap();
        let p3 = euclidean_probabilities(&f3).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        let a = krp_samp1(5, &[p2.clone(), p3.clone()], &[&f2, &f3], &mut r1).unwrap();
        let b = krp_samp1(5, &[p2, p3], &[&f2, &f3], &mut r2).unwrap();
        assert_eq!(a.2, b.2);
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn sample_batch_checks_weighting_tag() {
        let idx = Array2::<usize>::ones((2, 2));
        assert!(SampleBatch::new(
            1,
            SamplerStrategy::Uniform,
            idx.clone(),
            BatchWeighting::Uniform
        )
        .is_ok());
        assert!(SampleBatch::new(
            1,
            SamplerStrategy::Leverage,
            idx.clone(),
            BatchWeighting::Block(0.5)
        )
        .is_err());
        assert!(SampleBatch::new(
            1,
            SamplerStrategy::Euclidean,
            idx,
            BatchWeighting::Rows(vec![0.5]) // wrong length
        )
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn probability_outputs_are_normalized(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = rng.gen_range(1..8usize);
            let cols = rng.gen_range(1..4usize);
            let a = Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() - 0.3);
            for p in [leverage_probabilities(&a), euclidean_probabilities(&a)] {
                if let Ok(p) = p {
                    let sum: f64 = p.weights().iter().sum();
                    proptest::prop_assert!((sum - 1.0).abs() <= 1e-12);
                    proptest::prop_assert!(p.weights().iter().all(|&w| w >= 0.0));
                }
            }
        }

        #[test]
        fn leverage_scores_sum_to_rank(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = rng.gen_range(1..8usize);
            let cols = rng.gen_range(1..5usize);
            let a = Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() - 0.5);
            let l = leverage_scores(&a);
            proptest::prop_assert!(l.iter().all(|&s| (-1e-12..=1.0 + 1e-12).contains(&s)));
            let sum: f64 = l.iter().sum();
            proptest::prop_assert!((sum - sum.round()).abs() <= 1e-8, "sum {}", sum);
        }
    }
}
