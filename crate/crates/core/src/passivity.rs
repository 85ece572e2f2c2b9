//! Sufficient hypervariance conditions for a positive semidefinite damping
//! estimate, their enforcement, and numerical dissipated-power checks.
//!
//! With `c = s_eps / (sqrt(D) * ||qd||_inf * ||dy||)`, where `s_eps` is the
//! noise variance, `qd` the stacked training velocities and `dy` the stacked
//! residual against the prior mean, the estimate is passive for every
//! velocity when
//!
//! - full model: `c * diag(m_d) - S` is positive semidefinite, with
//!   `S = [|s_mn|]` the matrix of element-kernel bounds;
//! - diagonal model: `|s_n| <= c * m_n` for every `n`.
//!
//! The hypervariance entering `S` is the kernel bound (`|k| <= s`), i.e. the
//! SE amplitude. The full condition is read as a PSD ordering: an entrywise
//! reading would forbid every full model with a nonzero off-diagonal bound.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{BoxDomain, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{abs_trace, min_eigenvalue};
use crate::models::{stacked_residual, FittedModel, PriorMean};

/// Relative slack below which a negative dissipated power counts as a
/// violation.
pub const VIOLATION_RTOL: f64 = 1e-9;

/// Relative eigenvalue slack of the full-model PSD check.
pub const PSD_RTOL: f64 = 1e-12;

/// Element-kernel bounds of a structured model.
#[derive(Debug, Clone, PartialEq)]
pub enum Hypervariances {
    /// `N x N` bounds `s_mn` of a full damping model.
    Full(DMatrix<f64>),
    /// `N` bounds `s_n` of a diagonal model (or per-output ARD amplitudes).
    Diag(Vec<f64>),
}

impl Hypervariances {
    pub fn dim(&self) -> usize {
        match self {
            Hypervariances::Full(s) => s.nrows(),
            Hypervariances::Diag(v) => v.len(),
        }
    }

    /// `S = [|s_mn|]`; diagonal for the diagonal variant.
    pub fn abs_matrix(&self) -> DMatrix<f64> {
        match self {
            Hypervariances::Full(s) => s.abs(),
            Hypervariances::Diag(v) => DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|x| x.abs()))),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Hypervariances {
        match self {
            Hypervariances::Full(s) => Hypervariances::Full(s * alpha),
            Hypervariances::Diag(v) => Hypervariances::Diag(v.iter().map(|x| x * alpha).collect()),
        }
    }
}

/// The bound factor `c` with every quantity it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct PassivityBound {
    /// `+inf` when the residual or the velocities vanish.
    pub c: f64,
    pub d_count: usize,
    pub inf_norm_velocities: f64,
    pub residual_norm: f64,
    pub noise_variance: f64,
    pub hypervariances: Hypervariances,
    pub mean_coefficients: Vec<f64>,
}

fn bound_factor(noise_variance: f64, d: usize, inf_norm: f64, residual_norm: f64) -> f64 {
    if residual_norm == 0.0 || inf_norm == 0.0 {
        f64::INFINITY
    } else {
        noise_variance / ((d as f64).sqrt() * inf_norm * residual_norm)
    }
}

impl PassivityBound {
    /// `S = [|s_mn|]` as an `N x N` matrix.
    pub fn hypervariance_matrix(&self) -> DMatrix<f64> {
        self.hypervariances.abs_matrix()
    }

    pub fn is_vacuous(&self) -> bool {
        self.c.is_infinite()
    }

    pub fn with_noise_variance(&self, noise_variance: f64) -> PassivityBound {
        PassivityBound {
            c: bound_factor(noise_variance, self.d_count, self.inf_norm_velocities, self.residual_norm),
            noise_variance,
            ..self.clone()
        }
    }

    pub fn with_hypervariances(&self, hypervariances: Hypervariances) -> PassivityBound {
        PassivityBound { hypervariances, ..self.clone() }
    }

    /// `c * diag(m_d)`, with zero where `m_d` is zero even when `c` is infinite.
    fn scaled_mean(&self) -> Vec<f64> {
        self.mean_coefficients.iter().map(|m| if *m == 0.0 { 0.0 } else { self.c * m }).collect()
    }
}

/// Computes the bound factor for a training set, prior mean and noise level.
pub fn compute_bound(
    data: &Dataset,
    prior_mean: &PriorMean,
    noise_variance: f64,
    hypervariances: &Hypervariances,
) -> Result<PassivityBound> {
    let n = data.dim();
    if prior_mean.dim() != n || hypervariances.dim() != n {
        return Err(Error::input("prior mean and hypervariance dimensions must match the dataset"));
    }
    if let Hypervariances::Full(s) = hypervariances {
        if s.ncols() != n {
            return Err(Error::input("full hypervariance matrix must be square"));
        }
    }
    let inf_norm = data.velocities().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let residual_norm = stacked_residual(data, prior_mean).norm();
    Ok(PassivityBound {
        c: bound_factor(noise_variance, data.len(), inf_norm, residual_norm),
        d_count: data.len(),
        inf_norm_velocities: inf_norm,
        residual_norm,
        noise_variance,
        hypervariances: hypervariances.clone(),
        mean_coefficients: prior_mean.coefficients().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullCheck {
    pub feasible: bool,
    /// Smallest eigenvalue of `c * diag(m_d) - S`; `+inf` for a vacuous bound.
    pub margin: f64,
}

/// PSD check of `c * diag(m_d) - S`. Diagonal hypervariances are treated as
/// a diagonal `S`.
pub fn check_bound_full(bound: &PassivityBound) -> FullCheck {
    if bound.is_vacuous() {
        return FullCheck { feasible: true, margin: f64::INFINITY };
    }
    let lhs = DMatrix::from_diagonal(&DVector::from_vec(bound.scaled_mean()));
    let s = bound.hypervariance_matrix();
    let diff = &lhs - &s;
    let margin = min_eigenvalue(&diff);
    let tol = PSD_RTOL * (abs_trace(&lhs) + abs_trace(&s));
    FullCheck { feasible: margin >= -tol, margin }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagCheck {
    pub feasible: bool,
    /// `c * m_n - |s_n|` per dimension.
    pub per_dim_margins: Vec<f64>,
}

/// Per-dimension check `|s_n| <= c * m_n`.
pub fn check_bound_diag(bound: &PassivityBound) -> Result<DiagCheck> {
    let Hypervariances::Diag(v) = &bound.hypervariances else {
        return Err(Error::input("diagonal check needs an N-vector of hypervariances"));
    };
    let margins: Vec<f64> = if bound.is_vacuous() {
        vec![f64::INFINITY; v.len()]
    } else {
        bound.scaled_mean().iter().zip(v).map(|(cm, s)| cm - s.abs()).collect()
    };
    Ok(DiagCheck { feasible: margins.iter().all(|m| *m >= 0.0), per_dim_margins: margins })
}

/// Dispatches to the check matching the hypervariance layout.
pub fn is_feasible(bound: &PassivityBound) -> bool {
    match bound.hypervariances {
        Hypervariances::Diag(_) => check_bound_diag(bound).map(|c| c.feasible).unwrap_or(false),
        Hypervariances::Full(_) => check_bound_full(bound).feasible,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnforceMode {
    /// Shrink all hypervariances by a common factor `alpha` in (0, 1].
    ScaleHypervariances,
    /// Raise the noise variance, leaving hypervariances unchanged.
    RaiseNoise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enforcement {
    pub hypervariances: Hypervariances,
    pub noise_variance: f64,
    /// Hypervariance scale applied (1 in noise mode).
    pub alpha: f64,
    /// The bound re-evaluated at the returned hyperparameters.
    pub bound: PassivityBound,
}

/// Bisection tolerance (relative) for both enforcement modes.
const ENFORCE_RTOL: f64 = 1e-10;

/// Dimensions whose prior mean is zero must carry no hypervariance at all,
/// otherwise neither mode can reach feasibility.
fn blocked_dimension(bound: &PassivityBound) -> Option<usize> {
    let s = bound.hypervariance_matrix();
    (0..bound.mean_coefficients.len())
        .find(|&n| bound.mean_coefficients[n] == 0.0 && (s.row(n).iter().any(|x| *x != 0.0) || s.column(n).iter().any(|x| *x != 0.0)))
}

/// Projects the hyperparameters onto the feasible set of the bound.
///
/// Scale mode returns the largest `alpha` in (0, 1] found by bisection
/// (feasible side kept); noise mode returns the smallest feasible noise
/// variance. Both stop at a relative bracket width of 1e-10.
pub fn enforce_bound(bound: &PassivityBound, mode: EnforceMode) -> Result<Enforcement> {
    if is_feasible(bound) {
        return Ok(Enforcement {
            hypervariances: bound.hypervariances.clone(),
            noise_variance: bound.noise_variance,
            alpha: 1.0,
            bound: bound.clone(),
        });
    }
    if let Some(n) = blocked_dimension(bound) {
        return Err(Error::Infeasible(format!(
            "prior mean of dimension {} is zero while its hypervariances are not",
            n + 1
        )));
    }
    match mode {
        EnforceMode::ScaleHypervariances => {
            let at = |alpha: f64| bound.with_hypervariances(bound.hypervariances.scaled(alpha));
            let mut lo = 0.5;
            while !is_feasible(&at(lo)) {
                lo *= 0.5;
                if lo < 1e-300 {
                    return Err(Error::Infeasible("no positive hypervariance scale satisfies the bound".into()));
                }
            }
            let mut hi = (2.0 * lo).min(1.0);
            while hi - lo > ENFORCE_RTOL * lo {
                let mid = 0.5 * (lo + hi);
                if is_feasible(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let out = at(lo);
            Ok(Enforcement { hypervariances: out.hypervariances.clone(), noise_variance: bound.noise_variance, alpha: lo, bound: out })
        }
        EnforceMode::RaiseNoise => {
            if !(bound.noise_variance > 0.0) {
                return Err(Error::Infeasible("noise variance must be positive to be raised".into()));
            }
            let mut lo = bound.noise_variance;
            let mut hi = 2.0 * lo;
            while !is_feasible(&bound.with_noise_variance(hi)) {
                lo = hi;
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::Infeasible("no finite noise variance satisfies the bound".into()));
                }
            }
            while hi - lo > ENFORCE_RTOL * hi {
                let mid = 0.5 * (lo + hi);
                if is_feasible(&bound.with_noise_variance(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let out = bound.with_noise_variance(hi);
            Ok(Enforcement { hypervariances: bound.hypervariances.clone(), noise_variance: hi, alpha: 1.0, bound: out })
        }
    }
}

/// Dissipated power `qd^T tau(qd)` of the estimate.
pub fn dissipated_power(model: &FittedModel, q: &[f64]) -> Result<f64> {
    let tau = model.predict_torque(q)?;
    Ok(q.iter().zip(tau.iter()).map(|(a, b)| a * b).sum())
}

/// Magnitude against which a negative power is judged.
fn power_scale(model: &FittedModel, q: &[f64], tau: &DVector<f64>) -> f64 {
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    qn * tau.norm() + qn * qn * model.prior_mean().max_coefficient()
}

/// Sweep points: `samples` uniform draws, the `2^N` corners, and the origin
/// when it lies inside the box.
pub fn sweep_points(domain: &BoxDomain, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            domain
                .lower()
                .iter()
                .zip(domain.upper())
                .map(|(l, u)| if l == u { *l } else { rng.random_range(*l..*u) })
                .collect()
        })
        .collect();
    points.extend(domain.corners());
    let origin = vec![0.0; domain.dim()];
    if domain.contains(&origin) {
        points.push(origin);
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSample {
    pub point: Vec<f64>,
    pub power: f64,
    pub violation: bool,
}

/// Evaluates the dissipated power at every point.
pub fn power_samples(model: &FittedModel, points: &[Vec<f64>]) -> Result<Vec<PowerSample>> {
    points
        .iter()
        .map(|q| {
            let tau = model.predict_torque(q)?;
            let power: f64 = q.iter().zip(tau.iter()).map(|(a, b)| a * b).sum();
            let violation = power < -VIOLATION_RTOL * power_scale(model, q, &tau);
            Ok(PowerSample { point: q.clone(), power, violation })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub evaluated: usize,
    pub min_power: f64,
    pub violation_count: usize,
    pub violating_points: Vec<PowerSample>,
}

/// Checks the sign of the dissipated power over a box.
pub fn passivity_sweep(model: &FittedModel, domain: &BoxDomain, samples: usize, seed: u64) -> Result<SweepReport> {
    if samples == 0 {
        return Err(Error::input("sweep needs at least one sample"));
    }
    if domain.dim() != model.dim() {
        return Err(Error::input("sweep domain dimension does not match the model"));
    }
    let points = sweep_points(domain, samples, seed);
    let powers = power_samples(model, &points)?;
    Ok(summarize(&powers))
}

pub fn summarize(powers: &[PowerSample]) -> SweepReport {
    let min_power = powers.iter().map(|p| p.power).fold(f64::INFINITY, f64::min);
    let violating_points: Vec<PowerSample> = powers.iter().filter(|p| p.violation).cloned().collect();
    SweepReport { evaluated: powers.len(), min_power, violation_count: violating_points.len(), violating_points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_prior_mean, ModelKernel, ModelKind};

    fn bound_with(c: f64, m: Vec<f64>, hv: Hypervariances) -> PassivityBound {
        // D = 1, ||q||_inf = 1, ||dy|| = 1 so that c equals the noise variance
        PassivityBound {
            c,
            d_count: 1,
            inf_norm_velocities: 1.0,
            residual_norm: 1.0,
            noise_variance: c,
            hypervariances: hv,
            mean_coefficients: m,
        }
    }

    #[test]
    fn scalar_bound_hand_value() {
        let d = Dataset::from_rows(&[vec![1.0]], &[vec![2.0]]).unwrap();
        let b = compute_bound(&d, &PriorMean::new(vec![1.0]).unwrap(), 1.0, &Hypervariances::Diag(vec![1.0])).unwrap();
        assert_eq!((b.residual_norm, b.inf_norm_velocities, b.c), (1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_residual_is_vacuous() {
        let d = Dataset::from_rows(&[vec![1.0, 2.0]], &[vec![2.0, 2.0]]).unwrap();
        let b = compute_bound(&d, &PriorMean::new(vec![2.0, 1.0]).unwrap(), 1.0, &Hypervariances::Diag(vec![5.0, 5.0]))
            .unwrap();
        assert!(b.c.is_infinite());
        assert!(check_bound_diag(&b).unwrap().feasible);
        assert!(check_bound_full(&b).feasible);
    }

    #[test]
    fn full_check_boundary_case() {
        let b = bound_with(1.0, vec![2.0, 2.0], Hypervariances::Full(DMatrix::from_element(2, 2, 1.0)));
        let r = check_bound_full(&b);
        assert!(r.feasible);
        assert!(r.margin.abs() < 1e-14);
    }

    #[test]
    fn full_check_zero_hypervariances() {
        let b = bound_with(3.0, vec![2.0, 0.5], Hypervariances::Full(DMatrix::zeros(2, 2)));
        let r = check_bound_full(&b);
        assert!(r.feasible);
        assert!((r.margin - 1.5).abs() < 1e-14);
    }

    #[test]
    fn full_check_zero_mean_is_infeasible() {
        let b = bound_with(3.0, vec![0.0, 0.0], Hypervariances::Full(DMatrix::from_element(2, 2, 0.1)));
        assert!(!check_bound_full(&b).feasible);
    }

    #[test]
    fn diag_check_cases() {
        let b = bound_with(1.0, vec![1.0, 1.0], Hypervariances::Diag(vec![1.0, 1.0]));
        let r = check_bound_diag(&b).unwrap();
        assert!(r.feasible);
        assert_eq!(r.per_dim_margins, vec![0.0, 0.0]);
        let b = bound_with(1.0, vec![1.0, 1.0], Hypervariances::Diag(vec![2.0, 1.0]));
        let r = check_bound_diag(&b).unwrap();
        assert!(!r.feasible);
        assert!(r.per_dim_margins[0] < 0.0 && r.per_dim_margins[1] >= 0.0);
        let b = bound_with(f64::INFINITY, vec![0.0, 1.0], Hypervariances::Diag(vec![9.0, 9.0]));
        assert!(check_bound_diag(&b).unwrap().feasible);
        let b = bound_with(1.0, vec![1.0], Hypervariances::Full(DMatrix::zeros(1, 1)));
        assert!(check_bound_diag(&b).is_err());
    }

    #[test]
    fn enforce_feasible_is_identity() {
        let b = bound_with(1.0, vec![2.0], Hypervariances::Diag(vec![1.0]));
        let e = enforce_bound(&b, EnforceMode::ScaleHypervariances).unwrap();
        assert_eq!(e.alpha, 1.0);
        assert_eq!(e.hypervariances, b.hypervariances);
    }

    #[test]
    fn enforce_scale_diag_halves() {
        let b = bound_with(1.0, vec![1.0], Hypervariances::Diag(vec![2.0]));
        let e = enforce_bound(&b, EnforceMode::ScaleHypervariances).unwrap();
        assert!((e.alpha - 0.5).abs() <= 1e-10 * 0.5);
        let Hypervariances::Diag(v) = &e.hypervariances else { panic!() };
        assert!((v[0] - 1.0).abs() <= 1e-10);
        assert!(check_bound_diag(&e.bound).unwrap().feasible);
    }

    #[test]
    fn enforce_raise_noise_matches_closed_form() {
        // c is linear in the noise variance: required = s * needed_c / c
        let mut b = bound_with(0.5, vec![2.0, 1.0], Hypervariances::Diag(vec![3.0, 4.0]));
        b.noise_variance = 7.0;
        b.c = 0.5;
        b.residual_norm = 7.0 / 0.5;
        let needed_c = (3.0f64 / 2.0).max(4.0 / 1.0);
        let expected = 7.0 * needed_c / 0.5;
        let e = enforce_bound(&b, EnforceMode::RaiseNoise).unwrap();
        assert!((e.noise_variance - expected).abs() <= 1e-9 * expected, "{} vs {expected}", e.noise_variance);
        assert!(check_bound_diag(&e.bound).unwrap().feasible);
    }

    #[test]
    fn enforce_scale_rejects_zero_mean() {
        let b = bound_with(1.0, vec![0.0, 0.0], Hypervariances::Full(DMatrix::from_element(2, 2, 1.0)));
        assert!(matches!(enforce_bound(&b, EnforceMode::ScaleHypervariances), Err(Error::Infeasible(_))));
        assert!(matches!(enforce_bound(&b, EnforceMode::RaiseNoise), Err(Error::Infeasible(_))));
    }

    #[test]
    fn enforce_scale_full_is_feasible() {
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 1.0, 4.0]);
        let b = bound_with(1.0, vec![1.0, 2.0], Hypervariances::Full(s));
        let e = enforce_bound(&b, EnforceMode::ScaleHypervariances).unwrap();
        assert!(check_bound_full(&e.bound).feasible);
        assert!(e.alpha < 1.0 && e.alpha > 0.0);
        let above = b.with_hypervariances(b.hypervariances.scaled(e.alpha * (1.0 + 1e-8)));
        assert!(!check_bound_full(&above).feasible);
    }

    #[test]
    fn c_scales_linearly_with_noise() {
        let d = Dataset::from_rows(&[vec![1.0, -3.0], vec![0.5, 2.0]], &[vec![0.2, 1.0], vec![4.0, -1.0]]).unwrap();
        let p = fit_prior_mean(&d);
        let hv = Hypervariances::Diag(vec![1.0, 1.0]);
        let b1 = compute_bound(&d, &p, 2.0, &hv).unwrap();
        let b2 = compute_bound(&d, &p, 2.0 * 13.0, &hv).unwrap();
        assert!((b2.c - 13.0 * b1.c).abs() <= 1e-12 * b2.c);
    }

    #[test]
    fn zero_residual_model_power() {
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![-0.5, 1.0]], &[vec![1.0, 2.0], vec![-0.5, 1.0]]).unwrap();
        let k = ModelKernel::build(ModelKind::DiagD, &[1.0, 1.0], &Hypervariances::Diag(vec![1.0, 1.0])).unwrap();
        let model = FittedModel::fit(k, PriorMean::new(vec![1.0, 1.0]).unwrap(), &d, 0.1).unwrap();
        assert_eq!(dissipated_power(&model, &[0.0, 0.0]).unwrap(), 0.0);
        assert!((dissipated_power(&model, &[1.0, 2.0]).unwrap() - 5.0).abs() < 1e-14);
        let domain = BoxDomain::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let r = passivity_sweep(&model, &domain, 500, 1).unwrap();
        assert_eq!(r.violation_count, 0);
        assert_eq!(r.evaluated, 500 + 4 + 1);
    }

    #[test]
    fn sweep_points_are_deterministic_and_inside() {
        let domain = BoxDomain::new(vec![-1.0, 40.0], vec![1.0, 90.0]).unwrap();
        let a = sweep_points(&domain, 100, 42);
        assert_eq!(a, sweep_points(&domain, 100, 42));
        assert!(a.iter().all(|p| domain.contains(p)));
        assert_eq!(a.len(), 104);
    }
}
