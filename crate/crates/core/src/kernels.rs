//! Bounded scalar kernels and the structured matrix-valued torque kernels.
//!
//! All element kernels of a structured kernel share one set of ARD
//! lengthscales and differ only in their hypervariance, so
//! `k_mn(q, q') = s_mn * exp(-0.5 * sum_k ((q_k - q'_k) / l_k)^2)`.
//! The hypervariance `s_mn` is also the kernel's bound: `|k_mn| <= s_mn`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A scalar covariance function. Callers guarantee equal input lengths.
pub trait ScalarKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
}

impl<F> ScalarKernel for F
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self(x, y)
    }
}

/// A scalar kernel with a known uniform bound `|k(x, x')| <= bound()`.
pub trait BoundedKernel: ScalarKernel {
    fn bound(&self) -> f64;
}

fn check_lengthscales(lengthscales: &[f64]) -> Result<()> {
    if lengthscales.is_empty() {
        return Err(Error::input("at least one lengthscale is required"));
    }
    if lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::input(format!("lengthscales must be positive and finite, got {lengthscales:?}")));
    }
    Ok(())
}

fn check_hypervariance(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::input(format!("hypervariance must be finite and >= 0, got {v}")));
    }
    Ok(())
}

/// Unit-amplitude SE correlation `exp(-0.5 * sum ((x - y) / l)^2)`.
#[inline]
pub fn se_correlation(lengthscales: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(lengthscales)
        .map(|((a, b), l)| {
            let z = (a - b) / l;
            z * z
        })
        .sum();
    (-0.5 * r2).exp()
}

fn check_pair(n: usize, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != n || y.len() != n {
        return Err(Error::input(format!(
            "kernel expects dimension {n}, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Squared-exponential kernel with automatic relevance determination.
#[derive(Debug, Clone, PartialEq)]
pub struct SeArdKernel {
    lengthscales: Vec<f64>,
    hypervariance: f64,
}

impl SeArdKernel {
    pub fn new(lengthscales: Vec<f64>, hypervariance: f64) -> Result<Self> {
        check_lengthscales(&lengthscales)?;
        if !(hypervariance > 0.0) || !hypervariance.is_finite() {
            return Err(Error::input(format!("SE hypervariance must be positive, got {hypervariance}")));
        }
        Ok(SeArdKernel { lengthscales, hypervariance })
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn hypervariance(&self) -> f64 {
        self.hypervariance
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Checked evaluation.
    pub fn try_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_pair(self.dim(), x, y)?;
        Ok(self.eval(x, y))
    }
}

impl ScalarKernel for SeArdKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.hypervariance * se_correlation(&self.lengthscales, x, y)
    }
}

impl BoundedKernel for SeArdKernel {
    fn bound(&self) -> f64 {
        self.hypervariance
    }
}

/// Torque kernel of a full damping matrix with independent elements:
/// `K(q, q') = sum_n q_n q'_n diag_m(k_mn(q, q'))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTorqueKernel {
    lengthscales: Vec<f64>,
    hypervariances: DMatrix<f64>,
}

impl FullTorqueKernel {
    /// `hypervariances[(m, n)]` is the bound of element kernel `k_mn`.
    pub fn new(lengthscales: Vec<f64>, hypervariances: DMatrix<f64>) -> Result<Self> {
        check_lengthscales(&lengthscales)?;
        let n = lengthscales.len();
        if hypervariances.shape() != (n, n) {
            return Err(Error::input(format!(
                "full kernel needs a {n}x{n} hypervariance matrix, got {:?}",
                hypervariances.shape()
            )));
        }
        for v in hypervariances.iter() {
            check_hypervariance(*v)?;
        }
        Ok(FullTorqueKernel { lengthscales, hypervariances })
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn hypervariances(&self) -> &DMatrix<f64> {
        &self.hypervariances
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Element kernel `k_mn` as a standalone SE-ARD kernel.
    pub fn element_kernel(&self, m: usize, n: usize) -> Result<SeArdKernel> {
        if m >= self.dim() || n >= self.dim() {
            return Err(Error::input(format!("element ({m}, {n}) out of range")));
        }
        SeArdKernel::new(self.lengthscales.clone(), self.hypervariances[(m, n)])
    }

    /// Evaluates the `N x N` torque covariance. The result is always diagonal.
    pub fn eval(&self, q: &[f64], qp: &[f64]) -> Result<DMatrix<f64>> {
        check_pair(self.dim(), q, qp)?;
        let corr = se_correlation(&self.lengthscales, q, qp);
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for m in 0..n {
            out[(m, m)] = self.output_value(m, q, qp, corr);
        }
        Ok(out)
    }

    #[inline]
    fn output_value(&self, m: usize, q: &[f64], qp: &[f64], corr: f64) -> f64 {
        let mut s = 0.0;
        for n in 0..self.dim() {
            s += q[n] * qp[n] * self.hypervariances[(m, n)];
        }
        s * corr
    }
}

/// Torque kernel of a diagonal damping matrix:
/// `K(q, q') = diag(q) diag_n(k_n(q, q')) diag(q')`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagTorqueKernel {
    lengthscales: Vec<f64>,
    hypervariances: Vec<f64>,
}

impl DiagTorqueKernel {
    pub fn new(lengthscales: Vec<f64>, hypervariances: Vec<f64>) -> Result<Self> {
        check_lengthscales(&lengthscales)?;
        if hypervariances.len() != lengthscales.len() {
            return Err(Error::input(format!(
                "diag kernel needs {} hypervariances, got {}",
                lengthscales.len(),
                hypervariances.len()
            )));
        }
        for v in &hypervariances {
            check_hypervariance(*v)?;
        }
        Ok(DiagTorqueKernel { lengthscales, hypervariances })
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn hypervariances(&self) -> &[f64] {
        &self.hypervariances
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn component_kernel(&self, n: usize) -> Result<SeArdKernel> {
        let v = *self.hypervariances.get(n).ok_or_else(|| Error::input(format!("component {n} out of range")))?;
        SeArdKernel::new(self.lengthscales.clone(), v)
    }

    pub fn eval(&self, q: &[f64], qp: &[f64]) -> Result<DMatrix<f64>> {
        check_pair(self.dim(), q, qp)?;
        let corr = se_correlation(&self.lengthscales, q, qp);
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..n {
            out[(k, k)] = q[k] * qp[k] * self.hypervariances[k] * corr;
        }
        Ok(out)
    }
}

/// The scalar kernel of one torque output. Structured kernels have no
/// cross-output covariance, so output `m` is an independent GP whose kernel
/// is the `(m, m)` entry of the matrix kernel.
#[derive(Debug, Clone, Copy)]
pub enum OutputKernel<'a> {
    Full { kernel: &'a FullTorqueKernel, output: usize },
    Diag { kernel: &'a DiagTorqueKernel, output: usize },
    /// Baseline ARD-GP: an SE-ARD kernel directly on torque output `m`.
    Ard { kernel: &'a SeArdKernel },
}

impl ScalarKernel for OutputKernel<'_> {
    fn eval(&self, q: &[f64], qp: &[f64]) -> f64 {
        match *self {
            OutputKernel::Full { kernel, output } => {
                let corr = se_correlation(&kernel.lengthscales, q, qp);
                kernel.output_value(output, q, qp, corr)
            }
            OutputKernel::Diag { kernel, output } => {
                q[output] * qp[output] * kernel.hypervariances[output] * se_correlation(&kernel.lengthscales, q, qp)
            }
            OutputKernel::Ard { kernel } => kernel.eval(q, qp),
        }
    }
}

/// A matrix-valued torque kernel that decomposes per output.
pub trait TorqueKernel {
    fn dim(&self) -> usize;
    fn eval_matrix(&self, q: &[f64], qp: &[f64]) -> Result<DMatrix<f64>>;
    /// 0-based output index.
    fn output_kernel(&self, output: usize) -> Result<OutputKernel<'_>>;
}

impl TorqueKernel for FullTorqueKernel {
    fn dim(&self) -> usize {
        FullTorqueKernel::dim(self)
    }

    fn eval_matrix(&self, q: &[f64], qp: &[f64]) -> Result<DMatrix<f64>> {
        self.eval(q, qp)
    }

    fn output_kernel(&self, output: usize) -> Result<OutputKernel<'_>> {
        if output >= self.dim() {
            return Err(Error::input(format!("output index {output} out of range for N = {}", self.dim())));
        }
        Ok(OutputKernel::Full { kernel: self, output })
    }
}

impl TorqueKernel for DiagTorqueKernel {
    fn dim(&self) -> usize {
        DiagTorqueKernel::dim(self)
    }

    fn eval_matrix(&self, q: &[f64], qp: &[f64]) -> Result<DMatrix<f64>> {
        self.eval(q, qp)
    }

    fn output_kernel(&self, output: usize) -> Result<OutputKernel<'_>> {
        if output >= self.dim() {
            return Err(Error::input(format!("output index {output} out of range for N = {}", self.dim())));
        }
        Ok(OutputKernel::Diag { kernel: self, output })
    }
}

/// Scalar kernel for torque output `output` (0-based) of a structured kernel.
pub fn per_output_scalar_kernel<K: TorqueKernel + ?Sized>(kernel: &K, output: usize) -> Result<OutputKernel<'_>> {
    kernel.output_kernel(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn se_zero_distance_is_hypervariance() {
        let k = SeArdKernel::new(vec![18.0, 18.0, 0.2], 3.5).unwrap();
        let x = [1.0, -2.0, 0.3];
        assert_eq!(k.try_eval(&x, &x).unwrap(), 3.5);
    }

    #[test]
    fn se_hand_value() {
        let k = SeArdKernel::new(vec![1.0], 1.0).unwrap();
        let v = k.try_eval(&[0.0], &[1.0]).unwrap();
        assert!((v - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn se_dimension_mismatch() {
        let k = SeArdKernel::new(vec![1.0, 1.0], 1.0).unwrap();
        assert!(matches!(k.try_eval(&[0.0], &[1.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn se_rejects_bad_parameters() {
        assert!(SeArdKernel::new(vec![0.0], 1.0).is_err());
        assert!(SeArdKernel::new(vec![1.0], 0.0).is_err());
        assert!(SeArdKernel::new(vec![], 1.0).is_err());
    }

    #[test]
    fn full_orthogonal_velocities_give_zero() {
        let k = FullTorqueKernel::new(vec![1.0, 1.0], DMatrix::from_element(2, 2, 2.0)).unwrap();
        assert_eq!(k.eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn full_unit_vector_picks_column() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let k = FullTorqueKernel::new(vec![1.0; 3], s.clone()).unwrap();
        let e1 = [0.0, 1.0, 0.0];
        let out = k.eval(&e1, &e1).unwrap();
        assert_eq!(out, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 8.0])));
    }

    #[test]
    fn full_hand_sum() {
        let k = FullTorqueKernel::new(vec![1.0, 1.0], DMatrix::from_element(2, 2, 1.0)).unwrap();
        let q = [1.0, 2.0];
        assert_eq!(k.eval(&q, &q).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 5.0])));
    }

    #[test]
    fn diag_ones_give_hypervariances() {
        let k = DiagTorqueKernel::new(vec![0.5; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let q = [1.0; 3];
        assert_eq!(k.eval(&q, &q).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])));
    }

    #[test]
    fn diag_zero_velocity() {
        let k = DiagTorqueKernel::new(vec![0.5; 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0], &[3.0, 1.0]).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn diag_hand_value() {
        // choose the lengthscale so that k_1((2,0),(3,1)) = 0.5 exactly:
        // exp(-0.5 * 2 / l^2) = 0.5  =>  l^2 = 1 / ln 2
        let l = (1.0 / std::f64::consts::LN_2).sqrt();
        let k = DiagTorqueKernel::new(vec![l, l], vec![1.0, 1.0]).unwrap();
        let out = k.eval(&[2.0, 0.0], &[3.0, 1.0]).unwrap();
        assert!((out[(0, 0)] - 3.0).abs() < 1e-14);
        assert_eq!(out[(1, 1)], 0.0);
        assert_eq!(out[(0, 1)], 0.0);
    }

    #[test]
    fn per_output_matches_matrix_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = DMatrix::from_fn(3, 3, |_, _| rng.random_range(0.1..2.0));
        let full = FullTorqueKernel::new(vec![0.7, 1.3, 2.0], s).unwrap();
        let diag = DiagTorqueKernel::new(vec![0.7, 1.3, 2.0], vec![0.5, 1.5, 2.5]).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let qp: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fm = full.eval(&q, &qp).unwrap();
            let dm = diag.eval(&q, &qp).unwrap();
            for m in 0..3 {
                assert_eq!(per_output_scalar_kernel(&full, m).unwrap().eval(&q, &qp), fm[(m, m)]);
                assert_eq!(per_output_scalar_kernel(&diag, m).unwrap().eval(&q, &qp), dm[(m, m)]);
            }
        }
    }

    #[test]
    fn per_output_first_unit_vector() {
        let diag = DiagTorqueKernel::new(vec![1.0; 3], vec![4.0, 5.0, 6.0]).unwrap();
        let q = [1.0, 0.0, 0.0];
        assert_eq!(per_output_scalar_kernel(&diag, 0).unwrap().eval(&q, &q), 4.0);
    }

    #[test]
    fn per_output_scalar_case() {
        let full = FullTorqueKernel::new(vec![1.5], DMatrix::from_element(1, 1, 2.0)).unwrap();
        let k11 = full.element_kernel(0, 0).unwrap();
        let (q, qp) = ([0.7], [-1.1]);
        let v = per_output_scalar_kernel(&full, 0).unwrap().eval(&q, &qp);
        assert!((v - 0.7 * -1.1 * k11.eval(&q, &qp)).abs() < 1e-15);
    }

    #[test]
    fn per_output_index_out_of_range() {
        let diag = DiagTorqueKernel::new(vec![1.0; 2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(per_output_scalar_kernel(&diag, 2), Err(Error::Input(_))));
    }

    #[test]
    fn boundedness_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = SeArdKernel::new(vec![0.3, 4.0, 1.0], 2.7).unwrap();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            assert!(k.eval(&x, &y).abs() <= k.bound());
        }
    }

    proptest! {
        #[test]
        fn matrix_kernel_symmetry(
            q in proptest::collection::vec(-5.0f64..5.0, 3),
            qp in proptest::collection::vec(-5.0f64..5.0, 3),
            s in proptest::collection::vec(0.0f64..3.0, 9),
        ) {
            let full = FullTorqueKernel::new(vec![0.9, 1.7, 2.4], DMatrix::from_row_slice(3, 3, &s)).unwrap();
            let a = full.eval(&q, &qp).unwrap();
            let b = full.eval(&qp, &q).unwrap().transpose();
            prop_assert!((a - b).abs().max() <= 1e-14 * (1.0 + s.iter().sum::<f64>() * 25.0));
            let diag = DiagTorqueKernel::new(vec![0.9, 1.7, 2.4], s[..3].to_vec()).unwrap();
            let c = diag.eval(&q, &qp).unwrap();
            for m in 0..3 {
                let expected = q[m] * qp[m] * diag.component_kernel(m).unwrap().eval(&q, &qp);
                prop_assert!((c[(m, m)] - expected).abs() <= 1e-15 * expected.abs().max(1e-300));
            }
        }

        #[test]
        fn full_kernel_off_diagonals_vanish(
            q in proptest::collection::vec(-5.0f64..5.0, 2),
            qp in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let full = FullTorqueKernel::new(vec![1.0, 1.0], DMatrix::from_element(2, 2, 1.5)).unwrap();
            let a = full.eval(&q, &qp).unwrap();
            prop_assert_eq!(a[(0, 1)], 0.0);
            prop_assert_eq!(a[(1, 0)], 0.0);
            let self_cov = full.eval(&q, &q).unwrap();
            prop_assert!(self_cov[(0, 0)] >= 0.0 && self_cov[(1, 1)] >= 0.0);
        }
    }
}
