//! Single-output GP regression engine and the dense stacked multi-output
//! oracle.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::ScalarKernel;
use crate::linalg::{cholesky_lower, solve_lower, solve_lower_transpose, symmetrize};

/// Diagonal jitters tried after a failed unjittered factorization.
pub const JITTER_LADDER: [f64; 9] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Largest stacked system `D * N` the dense oracle accepts.
pub const ORACLE_MAX_STACKED: usize = 2000;

fn check_dims<X: AsRef<[f64]>>(inputs: &[X]) -> Result<usize> {
    let Some(first) = inputs.first() else {
        return Err(Error::input("at least one input point is required"));
    };
    let n = first.as_ref().len();
    if n == 0 {
        return Err(Error::input("input points must have dimension >= 1"));
    }
    if let Some((i, x)) = inputs.iter().enumerate().find(|(_, x)| x.as_ref().len() != n) {
        return Err(Error::input(format!("input {i} has dimension {} but expected {n}", x.as_ref().len())));
    }
    Ok(n)
}

/// Gram matrix `K[i][j] = k(x_i, x_j)`, symmetrized as `(K + K^T)/2`.
pub fn assemble_gram<K, X>(kernel: &K, inputs: &[X]) -> Result<DMatrix<f64>>
where
    K: ScalarKernel + ?Sized,
    X: AsRef<[f64]>,
{
    check_dims(inputs)?;
    let d = inputs.len();
    let mut gram = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = kernel.eval(inputs[i].as_ref(), inputs[j].as_ref());
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(symmetrize(&gram))
}

/// Cross covariance `K[i][j] = k(train_i, test_j)`, shape `D x M`.
pub fn cross_covariance<K, X, Y>(kernel: &K, train: &[X], test: &[Y]) -> Result<DMatrix<f64>>
where
    K: ScalarKernel + ?Sized,
    X: AsRef<[f64]>,
    Y: AsRef<[f64]>,
{
    let n = check_dims(train)?;
    let m = check_dims(test)?;
    if n != m {
        return Err(Error::input(format!("train dimension {n} differs from test dimension {m}")));
    }
    Ok(DMatrix::from_fn(train.len(), test.len(), |i, j| kernel.eval(train[i].as_ref(), test[j].as_ref())))
}

/// Cholesky factorization of `gram + noise_variance * I + jitter * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFactorization {
    gram: DMatrix<f64>,
    noise_variance: f64,
    jitter_used: f64,
    factor: DMatrix<f64>,
}

impl GramFactorization {
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Lower-triangular factor `L` with `L L^T = gram + (noise + jitter) I`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn len(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The regularized matrix that was factorized.
    pub fn regularized(&self) -> DMatrix<f64> {
        let d = self.len();
        &self.gram + DMatrix::identity(d, d) * (self.noise_variance + self.jitter_used)
    }

    /// Solves `(gram + (noise + jitter) I) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.len() {
            return Err(Error::input(format!("rhs length {} does not match Gram size {}", b.len(), self.len())));
        }
        Ok(solve_lower_transpose(&self.factor, &solve_lower(&self.factor, b)))
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.len() {
            return Err(Error::input(format!("rhs rows {} do not match Gram size {}", b.nrows(), self.len())));
        }
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

/// Factorizes `gram + noise_variance * I`, escalating jitter by decades from
/// 1e-12 to 1e-4 when the plain factorization fails.
pub fn factorize(gram: &DMatrix<f64>, noise_variance: f64) -> Result<GramFactorization> {
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::input(format!("noise variance must be finite and >= 0, got {noise_variance}")));
    }
    if gram.nrows() != gram.ncols() || gram.nrows() == 0 {
        return Err(Error::input("Gram matrix must be square and nonempty"));
    }
    let gram = symmetrize(gram);
    let d = gram.nrows();
    let mut tried = Vec::new();
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
        let mut a = gram.clone();
        for i in 0..d {
            a[(i, i)] += noise_variance + jitter;
        }
        tried.push(jitter);
        if let Some(factor) = cholesky_lower(&a) {
            return Ok(GramFactorization { gram, noise_variance, jitter_used: jitter, factor });
        }
    }
    Err(Error::Factorization { ladder: tried })
}

/// Posterior mean and optional covariance at `M` test points.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorResult {
    pub mean: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

/// Standard GP posterior from a factorized training Gram.
///
/// `cross_cov` is `D x M` (train by test). The covariance is returned only
/// when `want_cov` is set, which requires `test_self_cov`.
pub fn posterior(
    fact: &GramFactorization,
    cross_cov: &DMatrix<f64>,
    prior_mean_train: &DVector<f64>,
    prior_mean_test: &DVector<f64>,
    observations: &DVector<f64>,
    test_self_cov: Option<&DMatrix<f64>>,
    want_cov: bool,
) -> Result<PosteriorResult> {
    let d = fact.len();
    let m = cross_cov.ncols();
    if cross_cov.nrows() != d {
        return Err(Error::input(format!("cross covariance has {} rows, expected {d}", cross_cov.nrows())));
    }
    if prior_mean_train.len() != d || observations.len() != d {
        return Err(Error::input("training prior mean / observations length mismatch"));
    }
    if prior_mean_test.len() != m {
        return Err(Error::input("test prior mean length mismatch"));
    }
    let alpha = fact.solve(&(observations - prior_mean_train))?;
    let mean = prior_mean_test + cross_cov.transpose() * alpha;
    let covariance = if want_cov {
        let kss = test_self_cov.ok_or_else(|| Error::input("covariance requested without test self covariance"))?;
        if kss.shape() != (m, m) {
            return Err(Error::input("test self covariance has the wrong shape"));
        }
        let v = fact.solve_matrix(cross_cov)?;
        Some(symmetrize(&(kss - cross_cov.transpose() * v)))
    } else {
        None
    };
    Ok(PosteriorResult { mean, covariance })
}

/// Dense stacked multi-output posterior mean.
///
/// Builds the full `DN x DN` block covariance `[K(q_i, q_j)]_{ij} + s I` over
/// the stacked outputs `vec(Y^T)` and solves it once with an LU
/// decomposition. Intended as a test oracle for the per-output decomposition.
pub fn joint_multi_output_oracle<K, M>(
    torque_kernel: K,
    train: &Dataset,
    prior_mean_fn: M,
    noise_variance: f64,
    test_points: &[Vec<f64>],
) -> Result<Vec<DVector<f64>>>
where
    K: Fn(&[f64], &[f64]) -> DMatrix<f64>,
    M: Fn(&[f64]) -> DVector<f64>,
{
    let d = train.len();
    let n = train.dim();
    if d * n > ORACLE_MAX_STACKED {
        return Err(Error::Refused(format!("stacked size {} exceeds oracle cap {ORACLE_MAX_STACKED}", d * n)));
    }
    if test_points.iter().any(|x| x.len() != n) {
        return Err(Error::input("test point dimension mismatch"));
    }
    let q = train.velocity_rows();
    let mut big = DMatrix::zeros(d * n, d * n);
    for i in 0..d {
        for j in 0..d {
            let block = torque_kernel(&q[i], &q[j]);
            if block.shape() != (n, n) {
                return Err(Error::input("torque kernel returned a block of the wrong shape"));
            }
            big.view_mut((i * n, j * n), (n, n)).copy_from(&block);
        }
    }
    for k in 0..d * n {
        big[(k, k)] += noise_variance;
    }
    let mut residual = DVector::zeros(d * n);
    for i in 0..d {
        let mean = prior_mean_fn(&q[i]);
        let y = train.torque(i);
        for k in 0..n {
            residual[i * n + k] = y[k] - mean[k];
        }
    }
    let lu = big.lu();
    let alpha = lu
        .solve(&residual)
        .ok_or_else(|| Error::Factorization { ladder: vec![] })?;
    let mut out = Vec::with_capacity(test_points.len());
    for x in test_points {
        let mut mean = prior_mean_fn(x);
        for i in 0..d {
            let block = torque_kernel(&q[i], x);
            // block is cov(tau(q_i), tau(x)); the test side is its transpose.
            mean += block.transpose() * alpha.rows(i * n, n);
        }
        out.push(mean);
    }
    Ok(out)
}
