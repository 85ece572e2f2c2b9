//! The three estimators: ARD-GP baseline, Diag-D-GP and Full-D-GP.
//!
//! Structured kernels have zero cross-output covariance, so the stacked
//! `DN x DN` joint system splits into `N` independent `D x D` systems, one
//! per torque output. Each output caches its Cholesky factor and the solve
//! `K_y^{-1} (y_m - m_y,m)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gp_core::{assemble_gram, factorize, GramFactorization};
use crate::kernels::{se_correlation, DiagTorqueKernel, FullTorqueKernel, OutputKernel, SeArdKernel, TorqueKernel};
use crate::passivity::{compute_bound, enforce_bound, EnforceMode, Hypervariances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    ArdGp,
    DiagD,
    FullD,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::ArdGp, ModelKind::DiagD, ModelKind::FullD];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ArdGp => "ard-gp",
            ModelKind::DiagD => "diag-d-gp",
            ModelKind::FullD => "full-d-gp",
        }
    }

    pub fn is_structured(self) -> bool {
        self != ModelKind::ArdGp
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ard-gp" | "ard" => Ok(ModelKind::ArdGp),
            "diag-d-gp" | "diag" => Ok(ModelKind::DiagD),
            "full-d-gp" | "full" => Ok(ModelKind::FullD),
            other => Err(Error::input(format!(
                "unknown model kind {other:?}; expected one of ard-gp, diag-d-gp, full-d-gp"
            ))),
        }
    }
}

/// Constant nonnegative damping prior `m_tau(q) = diag(m_d) q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMean {
    coefficients: Vec<f64>,
}

impl PriorMean {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::input(format!("prior mean coefficients must be finite and >= 0, got {coefficients:?}")));
        }
        Ok(PriorMean { coefficients })
    }

    pub fn zeros(n: usize) -> Self {
        PriorMean { coefficients: vec![0.0; n] }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn torque(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(q.len(), self.coefficients.iter().zip(q).map(|(m, v)| m * v))
    }

    pub fn max_coefficient(&self) -> f64 {
        self.coefficients.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-dimension least squares `min ||tau_n - m_n q_n||`, clamped at zero.
pub fn fit_prior_mean(data: &Dataset) -> PriorMean {
    let d = data.len();
    let q = data.velocities();
    let y = data.torques();
    let coefficients = (0..data.dim())
        .map(|n| {
            let qq: f64 = q.column(n).iter().map(|v| v * v).sum();
            if qq < 1e-12 * d as f64 {
                return 0.0;
            }
            let qy: f64 = q.column(n).iter().zip(y.column(n).iter()).map(|(a, b)| a * b).sum();
            (qy / qq).max(0.0)
        })
        .collect();
    PriorMean { coefficients }
}

/// Kernel of a fitted model; the variant determines the model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKernel {
    /// One SE-ARD kernel per torque output.
    Ard(Vec<SeArdKernel>),
    Diag(DiagTorqueKernel),
    Full(FullTorqueKernel),
}

impl ModelKernel {
    /// Builds the kernel of `kind` with shared lengthscales.
    pub fn build(kind: ModelKind, lengthscales: &[f64], hypervariances: &Hypervariances) -> Result<Self> {
        let n = lengthscales.len();
        match (kind, hypervariances) {
            (ModelKind::ArdGp, Hypervariances::Diag(v)) => {
                if v.len() != n {
                    return Err(Error::input(format!("ARD-GP needs {n} hypervariances, got {}", v.len())));
                }
                Ok(ModelKernel::Ard(
                    v.iter().map(|s| SeArdKernel::new(lengthscales.to_vec(), *s)).collect::<Result<_>>()?,
                ))
            }
            (ModelKind::DiagD, Hypervariances::Diag(v)) => {
                Ok(ModelKernel::Diag(DiagTorqueKernel::new(lengthscales.to_vec(), v.clone())?))
            }
            (ModelKind::FullD, Hypervariances::Full(s)) => {
                Ok(ModelKernel::Full(FullTorqueKernel::new(lengthscales.to_vec(), s.clone())?))
            }
            (ModelKind::FullD, Hypervariances::Diag(v)) => Ok(ModelKernel::Full(FullTorqueKernel::new(
                lengthscales.to_vec(),
                DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            )?)),
            (kind, _) => Err(Error::input(format!("{kind} expects an N-vector of hypervariances"))),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelKernel::Ard(_) => ModelKind::ArdGp,
            ModelKernel::Diag(_) => ModelKind::DiagD,
            ModelKernel::Full(_) => ModelKind::FullD,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelKernel::Ard(k) => k.len(),
            ModelKernel::Diag(k) => k.dim(),
            ModelKernel::Full(k) => k.dim(),
        }
    }

    pub fn lengthscales(&self) -> &[f64] {
        match self {
            ModelKernel::Ard(k) => k[0].lengthscales(),
            ModelKernel::Diag(k) => k.lengthscales(),
            ModelKernel::Full(k) => k.lengthscales(),
        }
    }

    pub fn hypervariances(&self) -> Hypervariances {
        match self {
            ModelKernel::Ard(k) => Hypervariances::Diag(k.iter().map(|k| k.hypervariance()).collect()),
            ModelKernel::Diag(k) => Hypervariances::Diag(k.hypervariances().to_vec()),
            ModelKernel::Full(k) => Hypervariances::Full(k.hypervariances().clone()),
        }
    }

    pub fn output_kernel(&self, output: usize) -> Result<OutputKernel<'_>> {
        match self {
            ModelKernel::Ard(k) => k
                .get(output)
                .map(|kernel| OutputKernel::Ard { kernel })
                .ok_or_else(|| Error::input(format!("output index {output} out of range"))),
            ModelKernel::Diag(k) => k.output_kernel(output),
            ModelKernel::Full(k) => k.output_kernel(output),
        }
    }

    /// Matrix-valued torque kernel. The ARD baseline is independent per output.
    pub fn eval_matrix(&self, q: &[f64], qp: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            ModelKernel::Ard(k) => {
                if q.len() != k.len() || qp.len() != k.len() {
                    return Err(Error::input("kernel dimension mismatch"));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_iterator(
                    k.len(),
                    k.iter().map(|k| crate::kernels::ScalarKernel::eval(k, q, qp)),
                )))
            }
            ModelKernel::Diag(k) => k.eval(q, qp),
            ModelKernel::Full(k) => k.eval(q, qp),
        }
    }
}

/// A trained estimator. Immutable after [`FittedModel::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    kernel: ModelKernel,
    prior_mean: PriorMean,
    noise_variance: f64,
    factorizations: Vec<GramFactorization>,
    residual_solves: Vec<DVector<f64>>,
    train: Dataset,
}

impl FittedModel {
    /// Factorizes one Gram per output and caches the residual solves.
    ///
    /// The ARD-GP baseline always uses a zero prior mean.
    pub fn fit(kernel: ModelKernel, prior_mean: PriorMean, data: &Dataset, noise_variance: f64) -> Result<Self> {
        let n = data.dim();
        if kernel.dim() != n {
            return Err(Error::input(format!("kernel dimension {} does not match data dimension {n}", kernel.dim())));
        }
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::input(format!("noise variance must be positive and finite, got {noise_variance}")));
        }
        let prior_mean = if kernel.kind() == ModelKind::ArdGp {
            PriorMean::zeros(n)
        } else {
            if prior_mean.dim() != n {
                return Err(Error::input(format!("prior mean dimension {} does not match {n}", prior_mean.dim())));
            }
            prior_mean
        };
        let rows = data.velocity_rows();
        let mut factorizations = Vec::with_capacity(n);
        let mut residual_solves = Vec::with_capacity(n);
        for m in 0..n {
            let gram = assemble_gram(&kernel.output_kernel(m)?, &rows)?;
            let fact = factorize(&gram, noise_variance)?;
            let residual = residual_for_output(data, &prior_mean, m);
            residual_solves.push(fact.solve(&residual)?);
            factorizations.push(fact);
        }
        Ok(FittedModel { kernel, prior_mean, noise_variance, factorizations, residual_solves, train: data.clone() })
    }

    pub fn kind(&self) -> ModelKind {
        self.kernel.kind()
    }

    pub fn kernel(&self) -> &ModelKernel {
        &self.kernel
    }

    pub fn prior_mean(&self) -> &PriorMean {
        &self.prior_mean
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn factorizations(&self) -> &[GramFactorization] {
        &self.factorizations
    }

    pub fn residual_solves(&self) -> &[DVector<f64>] {
        &self.residual_solves
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::input(format!("query has dimension {} but model expects {}", q.len(), self.dim())));
        }
        Ok(())
    }

    /// Shared-lengthscale SE correlation between every training point and `q`.
    fn correlations(&self, q: &[f64]) -> Vec<f64> {
        let ls = self.kernel.lengthscales();
        let tq = self.train.velocities();
        let mut row = vec![0.0; q.len()];
        (0..self.train.len())
            .map(|i| {
                for (k, r) in row.iter_mut().enumerate() {
                    *r = tq[(i, k)];
                }
                se_correlation(ls, &row, q)
            })
            .collect()
    }

    /// Posterior mean torque
    /// `tau_m = m_m q_m + k_m(Q, q)^T K_y,m^{-1} (y_m - m_y,m)`.
    pub fn predict_torque(&self, q: &[f64]) -> Result<DVector<f64>> {
        self.check_query(q)?;
        let n = self.dim();
        let corr = self.correlations(q);
        let tq = self.train.velocities();
        let mut out = self.prior_mean.torque(q);
        for m in 0..n {
            let v = &self.residual_solves[m];
            let s: f64 = match &self.kernel {
                ModelKernel::Ard(k) => {
                    // ARD kernels may differ per output only in hypervariance
                    let h = k[m].hypervariance();
                    corr.iter().zip(v.iter()).map(|(c, vi)| h * c * vi).sum()
                }
                ModelKernel::Diag(k) => {
                    let h = k.hypervariances()[m] * q[m];
                    (0..corr.len()).map(|i| h * tq[(i, m)] * corr[i] * v[i]).sum()
                }
                ModelKernel::Full(k) => {
                    let h = k.hypervariances();
                    (0..corr.len())
                        .map(|i| {
                            let w: f64 = (0..n).map(|j| h[(m, j)] * tq[(i, j)] * q[j]).sum();
                            w * corr[i] * v[i]
                        })
                        .sum()
                }
            };
            out[m] += s;
        }
        Ok(out)
    }

    /// Predicts every row of `queries` (`M x N`), returning an `M x N` matrix.
    pub fn predict_torques(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(queries.nrows(), queries.ncols());
        for r in 0..queries.nrows() {
            let q: Vec<f64> = queries.row(r).iter().copied().collect();
            out.set_row(r, &self.predict_torque(&q)?.transpose());
        }
        Ok(out)
    }

    /// Estimated damping matrix with `D(q) q = predict_torque(q)`.
    ///
    /// Element `(m, n)` is `delta_mn m_m + sum_i k_mn(q_i, q) qd_{i,n} v_m[i]`.
    pub fn predict_damping(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_query(q)?;
        let n = self.dim();
        let corr = self.correlations(q);
        let tq = self.train.velocities();
        let mut out = DMatrix::from_diagonal(&DVector::from_column_slice(self.prior_mean.coefficients()));
        match &self.kernel {
            ModelKernel::Ard(_) => {
                return Err(Error::Unsupported("ARD-GP has no damping-matrix structure".into()));
            }
            ModelKernel::Diag(k) => {
                for m in 0..n {
                    let v = &self.residual_solves[m];
                    let h = k.hypervariances()[m];
                    out[(m, m)] += (0..corr.len()).map(|i| h * corr[i] * tq[(i, m)] * v[i]).sum::<f64>();
                }
            }
            ModelKernel::Full(k) => {
                let h = k.hypervariances();
                for m in 0..n {
                    let v = &self.residual_solves[m];
                    for j in 0..n {
                        out[(m, j)] += (0..corr.len()).map(|i| h[(m, j)] * corr[i] * tq[(i, j)] * v[i]).sum::<f64>();
                    }
                }
            }
        }
        Ok(out)
    }

    /// Mean squared torque error over all rows and outputs of `data`.
    pub fn mse(&self, data: &Dataset) -> Result<f64> {
        let pred = self.predict_torques(data.velocities())?;
        let diff = pred - data.torques();
        Ok(diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64)
    }
}

/// `y_m - m_y,m` over training samples.
pub fn residual_for_output(data: &Dataset, prior_mean: &PriorMean, m: usize) -> DVector<f64> {
    let c = prior_mean.coefficients().get(m).copied().unwrap_or(0.0);
    DVector::from_fn(data.len(), |i, _| data.torques()[(i, m)] - c * data.velocities()[(i, m)])
}

/// Stacked residual `vec(Y^T) - m_y`, ordered sample-major.
pub fn stacked_residual(data: &Dataset, prior_mean: &PriorMean) -> DVector<f64> {
    let n = data.dim();
    DVector::from_fn(data.len() * n, |k, _| {
        let (i, m) = (k / n, k % n);
        data.torques()[(i, m)] - prior_mean.coefficients()[m] * data.velocities()[(i, m)]
    })
}

/// Settings for [`optimize_hypervariances`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    /// Maximum number of objective evaluations (model fits), at least 1.
    pub budget: usize,
    /// Project every candidate onto the passivity-feasible set.
    pub constrained: bool,
    /// Full-D-GP only: search all `N^2` hypervariances instead of the
    /// rank-one `row * column` pattern.
    pub free_hypervariances: bool,
    /// Starting hypervariances; a data-driven guess when absent.
    pub initial: Option<Hypervariances>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { budget: 60, constrained: false, free_hypervariances: false, initial: None }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub kernel: ModelKernel,
    pub prior_mean: PriorMean,
    pub validation_mse: f64,
    pub initial_mse: f64,
    pub evaluations: usize,
}

const LOG_HV_LIMIT: f64 = 700.0;
const GOLDEN: f64 = 0.618_033_988_749_894_9;
const INITIAL_HALF_WIDTH: f64 = 4.605_170_185_988_091; // ln 100
const GOLDEN_STEPS: usize = 6;

/// Maps a log-parameter vector to hypervariances for a given search layout.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Layout {
    Vector,
    FullFree,
    FullRankOne,
}

impl Layout {
    fn decode(self, n: usize, theta: &[f64]) -> Hypervariances {
        let e = |v: f64| v.clamp(-LOG_HV_LIMIT, LOG_HV_LIMIT).exp();
        match self {
            Layout::Vector => Hypervariances::Diag(theta.iter().map(|t| e(*t)).collect()),
            Layout::FullFree => Hypervariances::Full(DMatrix::from_fn(n, n, |m, j| e(theta[m * n + j]))),
            Layout::FullRankOne => Hypervariances::Full(DMatrix::from_fn(n, n, |m, j| e(theta[m] + theta[n + j]))),
        }
    }

    fn encode(self, n: usize, hv: &Hypervariances) -> Result<Vec<f64>> {
        let l = |v: f64| v.abs().max(1e-300).ln();
        match (self, hv) {
            (Layout::Vector, Hypervariances::Diag(v)) if v.len() == n => Ok(v.iter().map(|x| l(*x)).collect()),
            (Layout::FullFree, Hypervariances::Full(s)) if s.shape() == (n, n) => {
                Ok((0..n * n).map(|k| l(s[(k / n, k % n)])).collect())
            }
            (Layout::FullFree, Hypervariances::Diag(v)) if v.len() == n => {
                Ok((0..n * n).map(|k| if k / n == k % n { l(v[k / n]) } else { l(1e-300) }).collect())
            }
            (Layout::FullRankOne, Hypervariances::Full(s)) if s.shape() == (n, n) => {
                // geometric row/column means of the matrix
                let rows: Vec<f64> = (0..n).map(|m| (0..n).map(|j| l(s[(m, j)])).sum::<f64>() / n as f64).collect();
                let cols: Vec<f64> = (0..n).map(|j| (0..n).map(|m| l(s[(m, j)])).sum::<f64>() / n as f64).collect();
                let grand = rows.iter().sum::<f64>() / n as f64;
                Ok(rows.into_iter().chain(cols.into_iter().map(|c| c - grand)).collect())
            }
            _ => Err(Error::input("initial hypervariances do not match the model kind")),
        }
    }
}

fn initial_guess(kind: ModelKind, layout: Layout, train: &Dataset, prior: &PriorMean) -> Vec<f64> {
    let n = train.dim();
    let d = train.len() as f64;
    let floor = 1e-12;
    let res_var: Vec<f64> = (0..n)
        .map(|m| {
            let r = residual_for_output(train, prior, m);
            (r.norm_squared() / d).max(floor)
        })
        .collect();
    let q_sq: Vec<f64> = (0..n)
        .map(|j| (train.velocities().column(j).norm_squared() / d).max(floor))
        .collect();
    match (kind, layout) {
        (ModelKind::ArdGp, _) => res_var.iter().map(|v| v.ln()).collect(),
        (ModelKind::DiagD, _) => (0..n).map(|m| (res_var[m] / q_sq[m]).ln()).collect(),
        (ModelKind::FullD, Layout::FullRankOne) => (0..n)
            .map(|m| (res_var[m] / n as f64).ln())
            .chain((0..n).map(|j| -q_sq[j].ln()))
            .collect(),
        (ModelKind::FullD, _) => (0..n * n).map(|k| (res_var[k / n] / (n as f64 * q_sq[k % n])).ln()).collect(),
    }
}

/// Derivative-free search for hypervariances minimizing validation MSE.
///
/// Coordinate descent over log-hypervariances; each coordinate is refined
/// by a short golden-section search in a window around the incumbent, and
/// the window halves after every sweep. Lengthscales and noise variance are
/// held fixed. With `constrained`, each candidate is scaled onto the
/// passivity-feasible set before it is evaluated.
pub fn optimize_hypervariances(
    kind: ModelKind,
    train: &Dataset,
    val: &Dataset,
    lengthscales: &[f64],
    noise_variance: f64,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    if val.is_empty() {
        return Err(Error::input("validation set is empty"));
    }
    if opts.budget == 0 {
        return Err(Error::input("budget must be at least 1"));
    }
    let n = train.dim();
    if val.dim() != n || lengthscales.len() != n {
        return Err(Error::input("train, validation and lengthscale dimensions must agree"));
    }
    if opts.constrained && kind == ModelKind::ArdGp {
        return Err(Error::Unsupported("passivity constraints apply only to structured models".into()));
    }
    let prior = if kind.is_structured() { fit_prior_mean(train) } else { PriorMean::zeros(n) };
    let layout = match kind {
        ModelKind::FullD if opts.free_hypervariances => Layout::FullFree,
        ModelKind::FullD => Layout::FullRankOne,
        _ => Layout::Vector,
    };

    let candidate = |theta: &[f64]| -> Result<ModelKernel> {
        let mut hv = layout.decode(n, theta);
        if opts.constrained {
            let bound = compute_bound(train, &prior, noise_variance, &hv)?;
            hv = enforce_bound(&bound, EnforceMode::ScaleHypervariances)?.hypervariances;
        }
        ModelKernel::build(kind, lengthscales, &hv)
    };
    let objective = |kernel: &ModelKernel| -> f64 {
        FittedModel::fit(kernel.clone(), prior.clone(), train, noise_variance)
            .and_then(|m| m.mse(val))
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::INFINITY)
    };

    let mut theta = match &opts.initial {
        Some(hv) => layout.encode(n, hv)?,
        None => initial_guess(kind, layout, train, &prior),
    };
    let first = candidate(&theta)?;
    let initial_mse = objective(&first);
    let mut best = (first, initial_mse);
    let mut evaluations = 1;
    let mut half_width = INITIAL_HALF_WIDTH;

    'outer: while evaluations < opts.budget {
        for i in 0..theta.len() {
            let center = theta[i];
            let (mut a, mut b) = (center - half_width, center + half_width);
            let probe = |x: f64, evals: &mut usize, best: &mut (ModelKernel, f64), theta: &mut Vec<f64>| -> Result<f64> {
                let mut t = theta.clone();
                t[i] = x;
                let k = candidate(&t)?;
                let v = objective(&k);
                *evals += 1;
                if v < best.1 {
                    *best = (k, v);
                    theta[i] = x;
                }
                Ok(v)
            };
            if evaluations >= opts.budget {
                break 'outer;
            }
            let mut c = b - GOLDEN * (b - a);
            let mut fc = probe(c, &mut evaluations, &mut best, &mut theta)?;
            if evaluations >= opts.budget {
                break 'outer;
            }
            let mut d = a + GOLDEN * (b - a);
            let mut fd = probe(d, &mut evaluations, &mut best, &mut theta)?;
            for _ in 2..GOLDEN_STEPS {
                if evaluations >= opts.budget {
                    break 'outer;
                }
                if fc <= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - GOLDEN * (b - a);
                    fc = probe(c, &mut evaluations, &mut best, &mut theta)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + GOLDEN * (b - a);
                    fd = probe(d, &mut evaluations, &mut best, &mut theta)?;
                }
            }
        }
        half_width *= 0.5;
        if half_width < 1e-6 {
            break;
        }
    }

    Ok(OptimizeResult { kernel: best.0, prior_mean: prior, validation_mse: best.1, initial_mse, evaluations })
}
