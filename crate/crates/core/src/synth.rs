//! Synthetic low-rank tensors with planted high-influence rows.
//!
//! The generator builds an I x I x J ground-truth model whose first three
//! factor columns are sparse spikes: `spread` randomly chosen rows carry an
//! entry of +/-`magnitude` and every other row carries zero, while the
//! remaining columns are standard normal. The spike rows dominate both the
//! Euclidean and leverage row weights, which is what gives importance
//! sampling a measurable edge over uniform sampling on this family.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{reconstruct, DenseTensor, KruskalModel};

/// Number of leading factor columns that carry planted spikes.
const SPIKE_COLUMNS: usize = 3;

/// Recipe for one synthetic problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    /// Extent of the first two modes.
    pub i: usize,
    /// Extent of the third mode.
    pub j: usize,
    /// Ground-truth rank; at least 3 so every spike column exists.
    pub rank: usize,
    /// Spike rows per planted column (capped at J for the third factor).
    /// Zero leaves the planted columns empty, dropping the effective rank
    /// of the ground truth by that many columns.
    pub spread: usize,
    /// Absolute value of each spike entry.
    pub magnitude: f64,
    /// Relative Frobenius noise level added to the reconstruction.
    pub noise: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.i == 0 || self.j == 0 {
            return Err(Error::InvalidConfig("extents must be positive".into()));
        }
        if self.rank < SPIKE_COLUMNS {
            return Err(Error::InvalidConfig(format!(
                "rank must be at least {SPIKE_COLUMNS} to hold the planted columns"
            )));
        }
        if self.spread > self.i {
            return Err(Error::InvalidConfig("spread must not exceed I".into()));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(Error::InvalidConfig("magnitude must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.i, self.i, self.j]
    }
}

/// A generated problem: the observed tensor, the model that produced it,
/// and where the spikes were planted (per factor, sorted 1-based rows).
#[derive(Debug, Clone)]
pub struct SynthData {
    pub tensor: DenseTensor,
    pub ground_truth: KruskalModel,
    pub injected_rows: Vec<Vec<usize>>,
    pub spread_used: Vec<usize>,
}

/// Add Gaussian noise scaled to an exact relative Frobenius level:
/// X' = X + level * (||X||_F / ||N||_F) * N with N standard normal.
/// A zero level returns the input unchanged without consuming randomness.
pub fn add_noise<R: Rng>(x: &DenseTensor, level: f64, rng: &mut R) -> Result<DenseTensor> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidConfig("noise level must be nonnegative".into()));
    }
    if level == 0.0 {
        return Ok(x.clone());
    }
    let mut noise = vec![0.0f64; x.len()];
    for v in noise.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let noise_norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
    if noise_norm == 0.0 {
        return Err(Error::DegenerateDistribution(
            "drawn noise is identically zero".into(),
        ));
    }
    let scale = level * x.frobenius_norm() / noise_norm;
    let values = x
        .values()
        .iter()
        .zip(&noise)
        .map(|(&v, &n)| v + scale * n)
        .collect();
    DenseTensor::new(x.dims().to_vec(), values)
}

/// Generate one problem instance. All randomness comes from `spec.seed`:
/// factors are drawn in mode order (normal fill, then spike placement per
/// planted column), and the noise continues the same stream.
pub fn generate(spec: &GenSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.dims();

    let mut factors = Vec::with_capacity(dims.len());
    let mut injected_rows = Vec::with_capacity(dims.len());
    let mut spread_used = Vec::with_capacity(dims.len());
    for &rows in &dims {
        let mut f = Array2::from_shape_fn((rows, spec.rank), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        // The third mode can be shorter than the requested spread; the
        // spikes then fill every row of that factor's planted columns.
        let spread = spec.spread.min(rows);
        let mut injected = Vec::new();
        for c in 0..SPIKE_COLUMNS {
            f.column_mut(c).fill(0.0);
            let picks = rand::seq::index::sample(&mut rng, rows, spread);
            for row in picks {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                f[(row, c)] = sign * spec.magnitude;
                injected.push(row + 1);
            }
        }
        injected.sort_unstable();
        injected.dedup();
        factors.push(f);
        injected_rows.push(injected);
        spread_used.push(spread);
    }

    let ground_truth = KruskalModel::new(factors)?;
    let clean = reconstruct(&ground_truth);
    let tensor = add_noise(&clean, spec.noise, &mut rng)?;
    Ok(SynthData {
        tensor,
        ground_truth,
        injected_rows,
        spread_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{euclidean_probabilities, leverage_probabilities};
    use crate::tensor::relative_error;

    fn spec() -> GenSpec {
        GenSpec {
            i: 12,
            j: 5,
            rank: 4,
            spread: 3,
            magnitude: 10.0,
            noise: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn validation_rejects_bad_recipes() {
        let mut s = spec();
        s.rank = 2;
        assert!(s.validate().is_err());

        let mut s = spec();
        s.spread = 13;
        assert!(s.validate().is_err());
        s.spread = 0;
        assert!(s.validate().is_ok());

        let mut s = spec();
        s.noise = -0.1;
        assert!(s.validate().is_err());

        let mut s = spec();
        s.magnitude = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn shapes_match_the_recipe() {
        let data = generate(&spec()).unwrap();
        assert_eq!(data.tensor.dims(), &[12, 12, 5]);
        assert_eq!(data.ground_truth.rank(), 4);
        assert_eq!(data.ground_truth.dims(), vec![12, 12, 5]);
        assert_eq!(data.spread_used, vec![3, 3, 3]);
    }

    #[test]
    fn planted_columns_hold_only_spikes() {
        let data = generate(&spec()).unwrap();
        for (f, (inj, &used)) in data
            .ground_truth
            .factors()
            .iter()
            .zip(data.injected_rows.iter().zip(&data.spread_used))
        {
            for c in 0..3 {
                let col = f.column(c);
                let nonzero: Vec<usize> = col
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, _)| i + 1)
                    .collect();
                assert_eq!(nonzero.len(), used);
                assert!(col.iter().all(|&v| v == 0.0 || v.abs() == 10.0));
                assert!(nonzero.iter().all(|r| inj.contains(r)));
            }
            // Remaining columns are dense draws.
            assert!(f.column(3).iter().all(|&v| v != 0.0));
            assert!(inj.len() <= 3 * used && inj.len() >= used);
            assert!(inj.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn zero_spread_leaves_planted_columns_empty() {
        let mut s = spec();
        s.spread = 0;
        let data = generate(&s).unwrap();
        assert_eq!(data.spread_used, vec![0, 0, 0]);
        assert!(data.injected_rows.iter().all(|r| r.is_empty()));
        for f in data.ground_truth.factors() {
            for c in 0..3 {
                assert!(f.column(c).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn short_third_mode_caps_the_spread() {
        let mut s = spec();
        s.j = 2;
        let data = generate(&s).unwrap();
        assert_eq!(data.spread_used, vec![3, 3, 2]);
        // Every row of the third factor's planted columns is a spike.
        let f3 = &data.ground_truth.factors()[2];
        for c in 0..3 {
            assert!(f3.column(c).iter().all(|&v| v.abs() == 10.0));
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a.tensor.values(), b.tensor.values());
        assert_eq!(a.ground_truth.factors(), b.ground_truth.factors());
        assert_eq!(a.injected_rows, b.injected_rows);

        let mut s = spec();
        s.seed = 43;
        let c = generate(&s).unwrap();
        assert_ne!(a.tensor.values(), c.tensor.values());
    }

    #[test]
    fn noiseless_tensor_matches_the_ground_truth() {
        let data = generate(&spec()).unwrap();
        let rel = relative_error(&data.tensor, &data.ground_truth).unwrap();
        assert!(rel < 1e-12, "rel {rel}");
    }

    #[test]
    fn noise_level_is_exact() {
        let clean = generate(&spec()).unwrap().tensor;
        for level in [0.0, 0.05, 0.2] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let noisy = add_noise(&clean, level, &mut rng).unwrap();
            let diff: f64 = clean
                .values()
                .iter()
                .zip(noisy.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let measured = diff / clean.frobenius_norm();
            assert!(
                (measured - level).abs() <= 1e-12,
                "level {level}, measured {measured}"
            );
        }
    }

    #[test]
    fn zero_noise_is_bitwise_identity() {
        let clean = generate(&spec()).unwrap().tensor;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let same = add_noise(&clean, 0.0, &mut rng).unwrap();
        assert_eq!(clean.values(), same.values());
        // No randomness was consumed: the stream continues as if untouched.
        let mut fresh = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(rng.gen::<u64>(), fresh.gen::<u64>());
    }

    #[test]
    fn spike_rows_dominate_the_row_weights() {
        // Thresholds fixed from the observed minima across many seeds at
        // this configuration; they hold for every seed exercised here.
        for seed in 1..=5u64 {
            let s = GenSpec {
                i: 100,
                j: 15,
                rank: 25,
                spread: 15,
                magnitude: 24.0,
                noise: 0.05,
                seed,
            };
            let data = generate(&s).unwrap();
            let f1 = &data.ground_truth.factors()[0];
            let inj = &data.injected_rows[0];

            let euc = euclidean_probabilities(f1).unwrap();
            let lev = leverage_probabilities(f1).unwrap();
            for (name, probs, hetero_min, inj_min) in [
                ("euclidean", &euc, 2.0, 2.0),
                ("leverage", &lev, 1.3, 1.05),
            ] {
                let w = probs.weights();
                let mean = 1.0 / w.len() as f64;
                let max = w.iter().cloned().fold(0.0f64, f64::max);
                assert!(
                    max / mean > hetero_min,
                    "{name} seed {seed}: max/mean {}",
                    max / mean
                );
                let inj_mean: f64 =
                    inj.iter().map(|&r| w[r - 1]).sum::<f64>() / inj.len() as f64;
                assert!(
                    inj_mean / mean >= inj_min,
                    "{name} seed {seed}: spike mean ratio {}",
                    inj_mean / mean
                );
            }
        }
    }
}
