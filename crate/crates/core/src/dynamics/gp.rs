//! Exact Gaussian-process regression with an RBF kernel.
//!
//! Each output dimension is an independent GP sharing the kernel, the
//! training inputs and therefore one Cholesky factor and one posterior
//! variance.
//!
//! Repeated training inputs are merged before factorization: `m` observations
//! at one input with noise `σ²` give the same posterior as their mean observed
//! once with noise `σ²/m`. The model still stores and serializes every row.

use rand::Rng;

use super::kernel::KernelParams;
use super::{DynamicsError, Prediction};

/// Largest training set a GP is fitted on; bigger sets are subsampled.
pub const GP_MAX_POINTS: usize = 2000;

/// Jitter tried first; escalated by decades up to [`MAX_JITTER`].
pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    kernel: KernelParams,
    noise: f64,
    jitter: f64,
    input_dim: usize,
    output_dim: usize,
    /// Training inputs, row-major `n × input_dim`.
    x: Vec<f64>,
    /// Training targets, one row per point.
    y: Vec<Vec<f64>>,
    /// Distinct training inputs, row-major `u × input_dim`.
    distinct: Vec<f64>,
    /// Lower Cholesky factor of `K + (noise + jitter) M⁻¹` over the distinct
    /// inputs, where `M` holds their multiplicities, packed by rows.
    chol: Vec<f64>,
    /// Solved weights against the mean target per distinct input, row-major
    /// `u × output_dim`.
    alpha: Vec<f64>,
}

/// Training data with repeated inputs merged.
struct Merged {
    x: Vec<f64>,
    counts: Vec<f64>,
    y_mean: Vec<Vec<f64>>,
}

fn merge_duplicates(x: &[f64], y: &[Vec<f64>], input_dim: usize) -> Merged {
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    let mut merged = Merged {
        x: Vec::new(),
        counts: Vec::new(),
        y_mean: Vec::new(),
    };
    for (i, yi) in y.iter().enumerate() {
        let xi = &x[i * input_dim..(i + 1) * input_dim];
        let key: Vec<u64> = xi.iter().map(|v| (v + 0.0).to_bits()).collect();
        match index.get(&key) {
            Some(&u) => {
                merged.counts[u] += 1.0;
                for (m, v) in merged.y_mean[u].iter_mut().zip(yi) {
                    *m += v;
                }
            }
            None => {
                index.insert(key, merged.counts.len());
                merged.x.extend_from_slice(xi);
                merged.counts.push(1.0);
                merged.y_mean.push(yi.clone());
            }
        }
    }
    for (row, &c) in merged.y_mean.iter_mut().zip(&merged.counts) {
        if c > 1.0 {
            row.iter_mut().for_each(|v| *v /= c);
        }
    }
    merged
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Dot product with four independent accumulators, which lets the compiler
/// vectorize the inner loop of the factorization and the solves.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

enum CholeskyFailure {
    NonPositivePivot { min_pivot: f64 },
}

/// In-place Cholesky of a packed lower-triangular symmetric matrix.
fn cholesky_packed(a: &mut [f64], n: usize) -> Result<(), CholeskyFailure> {
    for i in 0..n {
        let ri = row_start(i);
        for j in 0..=i {
            let rj = row_start(j);
            let s = a[ri + j] - dot(&a[ri..ri + j], &a[rj..rj + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(CholeskyFailure::NonPositivePivot { min_pivot: s });
                }
                a[ri + i] = s.sqrt();
            } else {
                a[ri + j] = s / a[rj + j];
            }
        }
    }
    Ok(())
}

/// Solves `L v = b` in place.
fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let ri = row_start(i);
        b[i] = (b[i] - dot(&l[ri..ri + i], &b[..i])) / l[ri + i];
    }
}

/// Solves `Lᵀ v = b` in place.
fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let ri = row_start(i);
        b[i] /= l[ri + i];
        let bi = b[i];
        for (bk, lik) in b[..i].iter_mut().zip(&l[ri..ri + i]) {
            *bk -= lik * bi;
        }
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<(), DynamicsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::NonFinite(what))
    }
}

impl GpModel {
    /// Fits with jitter escalation starting at [`DEFAULT_JITTER`].
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, kernel: KernelParams, noise: f64) -> Result<Self, DynamicsError> {
        Self::fit_escalating(x, y, kernel, noise, DEFAULT_JITTER)
    }

    /// Tries `initial_jitter`, then decades up to [`MAX_JITTER`], until the
    /// Cholesky factorization succeeds.
    pub fn fit_escalating(
        x: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        kernel: KernelParams,
        noise: f64,
        initial_jitter: f64,
    ) -> Result<Self, DynamicsError> {
        let (flat, input_dim, output_dim) = validate(&x, &y, noise)?;
        let merged = merge_duplicates(&flat, &y, input_dim);
        let n = merged.counts.len();
        let gram = packed_gram(&merged.x, n, input_dim, &kernel);

        let mut jitter = initial_jitter.max(0.0);
        let mut last_pivot: f64;
        loop {
            match factor(&gram, &merged.counts, noise + jitter) {
                Ok(chol) => {
                    if jitter > initial_jitter {
                        log::debug!("GP fit needed jitter {jitter:e}");
                    }
                    return Ok(Self::assemble(
                        kernel, noise, jitter, input_dim, output_dim, flat, y, merged, chol,
                    ));
                }
                Err(CholeskyFailure::NonPositivePivot { min_pivot }) => last_pivot = min_pivot,
            }
            let next = if jitter == 0.0 { DEFAULT_JITTER } else { jitter * 10.0 };
            if next > MAX_JITTER * (1.0 + 1e-9) {
                break;
            }
            jitter = next;
        }
        let max_diag = (0..n).map(|i| gram[row_start(i) + i] + noise).fold(0.0, f64::max);
        let floor = f64::EPSILON * max_diag.max(1.0);
        Err(DynamicsError::IllConditioned {
            condition_estimate: max_diag / last_pivot.abs().max(floor),
            jitter,
        })
    }

    /// Single factorization attempt with exactly this jitter.
    pub fn fit_with_jitter(
        x: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        kernel: KernelParams,
        noise: f64,
        jitter: f64,
    ) -> Result<Self, DynamicsError> {
        let (flat, input_dim, output_dim) = validate(&x, &y, noise)?;
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("jitter {jitter} must be >= 0")));
        }
        let merged = merge_duplicates(&flat, &y, input_dim);
        let n = merged.counts.len();
        let gram = packed_gram(&merged.x, n, input_dim, &kernel);
        match factor(&gram, &merged.counts, noise + jitter) {
            Ok(chol) => Ok(Self::assemble(
                kernel, noise, jitter, input_dim, output_dim, flat, y, merged, chol,
            )),
            Err(CholeskyFailure::NonPositivePivot { min_pivot }) => {
                let max_diag = (0..n).map(|i| gram[row_start(i) + i]).fold(0.0, f64::max);
                Err(DynamicsError::IllConditioned {
                    condition_estimate: max_diag / min_pivot.abs().max(f64::EPSILON),
                    jitter,
                })
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kernel: KernelParams,
        noise: f64,
        jitter: f64,
        input_dim: usize,
        output_dim: usize,
        x: Vec<f64>,
        y: Vec<Vec<f64>>,
        merged: Merged,
        chol: Vec<f64>,
    ) -> Self {
        let n = merged.counts.len();
        let mut alpha = vec![0.0; n * output_dim];
        let mut column = vec![0.0; n];
        for d in 0..output_dim {
            for (c, row) in column.iter_mut().zip(&merged.y_mean) {
                *c = row[d];
            }
            forward_solve(&chol, n, &mut column);
            backward_solve(&chol, n, &mut column);
            for (i, c) in column.iter().enumerate() {
                alpha[i * output_dim + d] = *c;
            }
        }
        Self {
            kernel,
            noise,
            jitter,
            input_dim,
            output_dim,
            x,
            y,
            distinct: merged.x,
            chol,
            alpha,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of distinct training inputs, the size of the factorization.
    pub fn distinct_len(&self) -> usize {
        self.chol_len()
    }

    fn chol_len(&self) -> usize {
        self.alpha.len() / self.output_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.x.chunks(self.input_dim.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.y
    }

    /// Dense copy of the lower Cholesky factor over the distinct inputs.
    pub fn cholesky_factor(&self) -> Vec<Vec<f64>> {
        let n = self.chol_len();
        (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[..=i].copy_from_slice(&self.chol[row_start(i)..row_start(i) + i + 1]);
                row
            })
            .collect()
    }

    /// Solved weights `(K + σ²I)^-1 Y_d` for output dimension `d`, one per
    /// distinct input.
    pub fn weights(&self, d: usize) -> Vec<f64> {
        self.alpha.chunks(self.output_dim).map(|row| row[d]).collect()
    }

    /// Posterior mean per output dimension and the shared posterior variance
    /// (repeated per dimension), clamped at zero.
    pub fn predict(&self, x_star: &[f64]) -> Result<Prediction, DynamicsError> {
        if x_star.len() != self.input_dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.input_dim,
                found: x_star.len(),
            });
        }
        let n = self.chol_len();
        let d_in = self.input_dim.max(1);
        let mut k_star: Vec<f64> = if self.input_dim == 0 {
            vec![self.kernel.signal_variance(); n]
        } else {
            self.distinct
                .chunks(d_in)
                .map(|xi| self.kernel.eval_unchecked(xi, x_star))
                .collect()
        };
        let mut mean = vec![0.0; self.output_dim];
        for (k, a_row) in k_star.iter().zip(self.alpha.chunks(self.output_dim)) {
            for (m, a) in mean.iter_mut().zip(a_row) {
                *m += k * a;
            }
        }
        forward_solve(&self.chol, n, &mut k_star);
        let explained = dot(&k_star, &k_star);
        let var = (self.kernel.signal_variance() - explained).max(0.0);
        Ok(Prediction {
            mean,
            variance: vec![var; self.output_dim],
        })
    }
}

fn validate(x: &[Vec<f64>], y: &[Vec<f64>], noise: f64) -> Result<(Vec<f64>, usize, usize), DynamicsError> {
    if x.is_empty() || y.is_empty() {
        return Err(DynamicsError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(DynamicsError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DynamicsError::InvalidConfig(format!("noise {noise} must be >= 0")));
    }
    let input_dim = x[0].len();
    let output_dim = y[0].len();
    if output_dim == 0 {
        return Err(DynamicsError::InvalidConfig("output dimension is zero".into()));
    }
    let mut flat = Vec::with_capacity(x.len() * input_dim);
    for (xi, yi) in x.iter().zip(y) {
        if xi.len() != input_dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: input_dim,
                found: xi.len(),
            });
        }
        if yi.len() != output_dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: output_dim,
                found: yi.len(),
            });
        }
        check_finite(xi, "GP inputs")?;
        check_finite(yi, "GP targets")?;
        flat.extend_from_slice(xi);
    }
    Ok((flat, input_dim, output_dim))
}

fn packed_gram(x: &[f64], n: usize, input_dim: usize, kernel: &KernelParams) -> Vec<f64> {
    let mut gram = vec![0.0; row_start(n)];
    for i in 0..n {
        let xi = &x[i * input_dim..(i + 1) * input_dim];
        let ri = row_start(i);
        for j in 0..=i {
            let xj = &x[j * input_dim..(j + 1) * input_dim];
            gram[ri + j] = kernel.eval_unchecked(xi, xj);
        }
    }
    gram
}

fn factor(gram: &[f64], counts: &[f64], diag: f64) -> Result<Vec<f64>, CholeskyFailure> {
    let mut a = gram.to_vec();
    for (i, c) in counts.iter().enumerate() {
        a[row_start(i) + i] += diag / c;
    }
    cholesky_packed(&mut a, counts.len())?;
    Ok(a)
}

/// Uniform subsample without replacement down to `cap` items, keeping the
/// original order. Returns the input untouched when it is already small enough.
pub fn subsample_to_cap<T: Clone, R: Rng + ?Sized>(items: &[T], cap: usize, rng: &mut R) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, items.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn kp() -> KernelParams {
        KernelParams::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn one_point_by_hand() {
        let gp = GpModel::fit_with_jitter(vec![vec![0.0]], vec![vec![1.0]], kp(), 0.0, 0.0).unwrap();
        assert_eq!(gp.cholesky_factor(), vec![vec![1.0]]);
        assert_eq!(gp.weights(0), vec![1.0]);
        let p = gp.predict(&[0.0]).unwrap();
        assert_eq!(p.mean, vec![1.0]);
        assert_eq!(p.variance, vec![0.0]);
    }

    #[test]
    fn one_point_default_jitter_is_close() {
        let gp = GpModel::fit(vec![vec![0.0]], vec![vec![1.0]], kp(), 0.0).unwrap();
        let l = gp.cholesky_factor()[0][0];
        assert!((l - 1.0).abs() < 1e-6);
        let p = gp.predict(&[0.0]).unwrap();
        assert!((p.mean[0] - 1.0).abs() < 1e-6);
        assert!(p.variance[0] <= 1e-6);
    }

    #[test]
    fn one_point_with_noise() {
        let gp = GpModel::fit_with_jitter(vec![vec![0.0]], vec![vec![1.0]], kp(), 0.1, 0.0).unwrap();
        let p = gp.predict(&[0.0]).unwrap();
        assert!((p.mean[0] - 1.0 / 1.1).abs() < 1e-15);
        assert!((p.variance[0] - (1.0 - 1.0 / 1.1)).abs() < 1e-15);
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let gp = GpModel::fit(
            vec![vec![0.0, 0.0], vec![1.0, 0.5]],
            vec![vec![3.0], vec![-2.0]],
            KernelParams::new(1.5, 2.0).unwrap(),
            1e-4,
        )
        .unwrap();
        let p = gp.predict(&[80.0, -60.0]).unwrap();
        assert!(p.mean[0].abs() < 1e-12);
        assert!((p.variance[0] - 2.25).abs() < 1e-12);
    }

    #[test]
    fn near_duplicate_rows_rescued_by_jitter() {
        let x = vec![vec![1.0, 2.0], vec![1.0, 2.0 + 1e-9], vec![0.0, 0.0]];
        let y = vec![vec![0.5], vec![0.5], vec![-1.0]];
        let gp = GpModel::fit(x.clone(), y.clone(), kp(), 0.0).unwrap();
        assert!(gp.jitter() >= DEFAULT_JITTER);
        let exact = GpModel::fit_with_jitter(x, y, kp(), 0.0, 0.0);
        assert!(matches!(exact, Err(DynamicsError::IllConditioned { .. })));
    }

    #[test]
    fn repeated_rows_match_dense_solve() {
        use nalgebra::{DMatrix, DVector};
        let x = vec![
            vec![1.0, 2.0],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec![-1.0, 0.5],
        ];
        let y = vec![vec![0.5], vec![-1.0], vec![0.7], vec![0.3], vec![2.0]];
        let noise = 0.05;
        let gp = GpModel::fit_with_jitter(x.clone(), y.clone(), kp(), noise, 0.0).unwrap();
        assert_eq!(gp.len(), 5);
        assert_eq!(gp.distinct_len(), 3);
        assert_eq!(gp.inputs(), x);
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            kp().eval_unchecked(&x[i], &x[j]) + if i == j { noise } else { 0.0 }
        });
        let inv = k.try_inverse().unwrap();
        let yv = DVector::from_iterator(n, y.iter().map(|r| r[0]));
        for probe in [[1.0, 2.0], [0.3, -0.4], [4.0, 4.0]] {
            let ks = DVector::from_iterator(n, x.iter().map(|xi| kp().eval_unchecked(xi, &probe)));
            let mean = (ks.transpose() * &inv * &yv)[0];
            let var = 1.0 - (ks.transpose() * &inv * &ks)[0];
            let p = gp.predict(&probe).unwrap();
            assert!((p.mean[0] - mean).abs() < 1e-10, "{} vs {mean}", p.mean[0]);
            assert!((p.variance[0] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn reconstruction_matches_kernel_matrix() {
        let mut rng = stream(11, &[]);
        let n = 40;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-6.0..6.0)).collect())
            .collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0].sin() + r[1]]).collect();
        let noise = 1e-4;
        let gp = GpModel::fit(x.clone(), y, kp(), noise).unwrap();
        let l = gp.cholesky_factor();
        for i in 0..n {
            assert!(l[i][i] > 0.0);
            for j in 0..n {
                let llt: f64 = (0..n).map(|k| l[i][k] * l[j][k]).sum();
                let mut k = crate::dynamics::rbf(&x[i], &x[j], &kp()).unwrap();
                if i == j {
                    k += noise + gp.jitter();
                }
                assert!((llt - k).abs() <= 1e-8);
                if j > i {
                    assert_eq!(l[i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(GpModel::fit(vec![], vec![], kp(), 0.0), Err(DynamicsError::EmptyData));
        assert!(matches!(
            GpModel::fit(vec![vec![0.0]], vec![vec![f64::NAN]], kp(), 0.0),
            Err(DynamicsError::NonFinite(_))
        ));
        let gp = GpModel::fit(vec![vec![0.0]], vec![vec![1.0]], kp(), 0.0).unwrap();
        assert!(matches!(
            gp.predict(&[0.0, 1.0]),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn subsampling_respects_cap() {
        let items: Vec<usize> = (0..50).collect();
        let mut rng = stream(1, &[]);
        let sub = subsample_to_cap(&items, 20, &mut rng);
        assert_eq!(sub.len(), 20);
        assert!(sub.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_to_cap(&items, 80, &mut rng), items);
    }
}
