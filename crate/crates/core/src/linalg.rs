//! Small dense factorization helper: one-sided Jacobi orthogonalization,
//! used to get an orthonormal range basis (and hence leverage scores and
//! numerical rank) without linking an external LAPACK.

use ndarray::Array2;

/// Largest Euclidean column norm of `a`.
pub fn max_column_norm(a: &Array2<f64>) -> f64 {
    (0..a.ncols())
        .map(|c| a.column(c).dot(&a.column(c)).sqrt())
        .fold(0.0, f64::max)
}

/// One-sided Jacobi: rotates column pairs of a working copy of `a` until all
/// columns are mutually orthogonal. Returns the rotated matrix W (whose
/// nonzero columns are the left singular vectors scaled by their singular
/// values) together with the column norms, in the deterministic sweep order
/// (p < q, ascending).
pub fn jacobi_orthogonalize(a: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut w = a.clone();
    let (m, n) = (w.nrows(), w.ncols());
    if n >= 2 {
        let tol = 1e-15;
        let max_sweeps = 60;
        for _ in 0..max_sweeps {
            let mut rotated = false;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        let wp = w[(i, p)];
                        let wq = w[(i, q)];
                        alpha += wp * wp;
                        beta += wq * wq;
                        gamma += wp * wq;
                    }
                    if alpha == 0.0 || beta == 0.0 {
                        continue;
                    }
                    if gamma.abs() <= tol * (alpha * beta).sqrt() {
                        continue;
                    }
                    // Classical two-by-two symmetric eigen rotation.
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = if zeta >= 0.0 {
                        1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                    } else {
                        -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let wp = w[(i, p)];
                        let wq = w[(i, q)];
                        w[(i, p)] = c * wp - s * wq;
                        w[(i, q)] = s * wp + c * wq;
                    }
                    rotated = true;
                }
            }
            if !rotated {
                break;
            }
        }
    }
    let norms = (0..n)
        .map(|c| w.column(c).dot(&w.column(c)).sqrt())
        .collect();
    (w, norms)
}
