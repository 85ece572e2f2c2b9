//! Synthetic passive Euler-Lagrange benchmark: ground-truth damping fields,
//! velocity sampling, noise injection, metrics and experiment configs.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{BoxDomain, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{abs_trace, min_eigenvalue};
use crate::models::ModelKind;

/// Trajectory frequencies (Hz) and phases (rad) per velocity coordinate.
pub const TRAJECTORY_FREQUENCIES: [f64; 3] = [0.1, 0.2, 0.3];
pub const TRAJECTORY_PHASES: [f64; 3] = [0.0, 2.0, 3.0];

/// Points checked for positive semidefiniteness when a system is built.
pub const PSD_SWEEP_POINTS: usize = 10_000;

type DampingFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthKind {
    DiagonalTruth,
    FullTruth,
}

/// A velocity-dependent damping field `D(qd)` that is PSD on its domain.
#[derive(Clone)]
pub struct GroundTruthSystem {
    id: String,
    kind: TruthKind,
    domain: BoxDomain,
    description: String,
    lengthscales: Vec<f64>,
    damping: Arc<DampingFn>,
}

impl fmt::Debug for GroundTruthSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroundTruthSystem")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("domain", &self.domain)
            .finish()
    }
}

impl GroundTruthSystem {
    /// Builds a system and verifies `D(qd)` is PSD on a seeded sweep of the
    /// domain (min eigenvalue >= -1e-10 * trace).
    pub fn new(
        id: impl Into<String>,
        kind: TruthKind,
        domain: BoxDomain,
        description: impl Into<String>,
        lengthscales: Vec<f64>,
        damping: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        let sys = GroundTruthSystem {
            id: id.into(),
            kind,
            domain,
            description: description.into(),
            lengthscales,
            damping: Arc::new(damping),
        };
        if sys.lengthscales.len() != sys.dim() {
            return Err(Error::input("default lengthscales must match the domain dimension"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let corners = sys.domain.corners();
        for k in 0..PSD_SWEEP_POINTS + corners.len() {
            let q = if k < corners.len() { corners[k].clone() } else { uniform_point(&sys.domain, &mut rng) };
            let d = sys.damping(&q);
            if d.shape() != (sys.dim(), sys.dim()) {
                return Err(Error::input(format!("system {} returned a damping matrix of the wrong shape", sys.id)));
            }
            if min_eigenvalue(&d) < -1e-10 * abs_trace(&d) {
                return Err(Error::input(format!("system {} is not PSD at {q:?}", sys.id)));
            }
        }
        Ok(sys)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> TruthKind {
        self.kind
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Lengthscales that suit this system's damping field.
    pub fn default_lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn damping(&self, q: &[f64]) -> DMatrix<f64> {
        (self.damping)(q)
    }

    /// `tau = D(qd) qd`.
    pub fn torque(&self, q: &[f64]) -> DVector<f64> {
        self.damping(q) * DVector::from_column_slice(q)
    }

    /// Noise-free torques for each row of `velocities`.
    pub fn torques(&self, velocities: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(velocities.nrows(), velocities.ncols());
        for i in 0..velocities.nrows() {
            let q: Vec<f64> = velocities.row(i).iter().copied().collect();
            out.set_row(i, &self.torque(&q).transpose());
        }
        out
    }
}

/// Constant scalar damping `D = [d]` on `[-25, 25]`.
pub fn linear1(d: f64) -> Result<GroundTruthSystem> {
    if !(d >= 0.0) {
        return Err(Error::input("linear damping must be nonnegative"));
    }
    GroundTruthSystem::new(
        "linear1",
        TruthKind::DiagonalTruth,
        BoxDomain::new(vec![-25.0], vec![25.0])?,
        format!("constant scalar damping d = {d}"),
        vec![25.0],
        move |_q| DMatrix::from_element(1, 1, d),
    )
}

fn airspeed_box() -> Result<BoxDomain> {
    BoxDomain::new(vec![-25.0, -25.0, 40.0], vec![25.0, 25.0, 90.0])
}

/// Normalized coordinates in [-1, 1] on the airspeed box.
fn normalized(q: &[f64]) -> [f64; 3] {
    [q[0] / 25.0, q[1] / 25.0, (q[2] - 65.0) / 25.0]
}

/// Diagonal damping `diag(a1 + b1 q1^2, a2 + b2 |q2|, a3 + b3 tanh^2(u3))`
/// with `u3 = (q3 - 65) / 25`.
pub fn diag3() -> Result<GroundTruthSystem> {
    let (a, b) = ([2.0, 2.0, 1.0], [0.01, 0.2, 3.0]);
    GroundTruthSystem::new(
        "diag3",
        TruthKind::DiagonalTruth,
        airspeed_box()?,
        "diagonal damping: quadratic, absolute-value and tanh^2 profiles",
        vec![25.0, 25.0, 25.0],
        move |q| {
            let u3 = normalized(q)[2];
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                a[0] + b[0] * q[0] * q[0],
                a[1] + b[1] * q[1].abs(),
                a[2] + b[2] * u3.tanh().powi(2),
            ]))
        },
    )
}

/// Full damping `L(qd) L(qd)^T + 0.05 I` with a smooth lower-triangular `L`.
pub fn full3() -> Result<GroundTruthSystem> {
    GroundTruthSystem::new(
        "full3",
        TruthKind::FullTruth,
        airspeed_box()?,
        "full coupled damping L L^T + eps I with smooth lower-triangular L",
        vec![25.0, 25.0, 25.0],
        |q| {
            let [u1, u2, u3] = normalized(q);
            let l = DMatrix::from_row_slice(
                3,
                3,
                &[
                    1.2 + 0.3 * u1.sin(),
                    0.0,
                    0.0,
                    0.4 * u2.cos() + 0.2 * u3,
                    1.0 + 0.2 * u1 * u1,
                    0.0,
                    0.3 * u1 - 0.2 * u2,
                    0.25 * u3.sin(),
                    0.8 + 0.1 * (u1 * u2).cos(),
                ],
            );
            &l * l.transpose() + DMatrix::identity(3, 3) * 0.05
        },
    )
}

/// `linear1` (d = 2), `diag3` and `full3`.
pub fn builtin_systems() -> Result<Vec<GroundTruthSystem>> {
    Ok(vec![linear1(2.0)?, diag3()?, full3()?])
}

pub fn builtin_ids() -> Vec<&'static str> {
    vec!["linear1", "diag3", "full3"]
}

/// Looks up a builtin system, listing the available ids on failure.
pub fn system_by_id(id: &str) -> Result<GroundTruthSystem> {
    match id {
        "linear1" => linear1(2.0),
        "diag3" => diag3(),
        "full3" => full3(),
        other => Err(Error::input(format!(
            "unknown system {other:?}; available: {}",
            builtin_ids().join(", ")
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Waveform {
    /// `center + amplitude * sin(2 pi f t + phi)` at `t_i = (i + offset) T / count`
    /// over one fundamental period `T`; `offset` is a fraction of one step.
    Periodic { offset: f64 },
    /// i.i.d. uniform over the domain box.
    Uniform,
}

fn uniform_point(domain: &BoxDomain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    domain
        .lower()
        .iter()
        .zip(domain.upper())
        .map(|(l, u)| if l == u { *l } else { rng.random_range(*l..*u) })
        .collect()
}

/// Samples `count` velocities inside `domain`.
pub fn sample_trajectory(domain: &BoxDomain, count: usize, seed: u64, waveform: Waveform) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::input("count must be at least 1"));
    }
    let n = domain.dim();
    match waveform {
        Waveform::Periodic { offset } => {
            let center = domain.center();
            let amp = domain.half_widths();
            let f: Vec<f64> = (0..n).map(|k| TRAJECTORY_FREQUENCIES[k % 3] * (1 + k / 3) as f64).collect();
            let phi: Vec<f64> = (0..n).map(|k| TRAJECTORY_PHASES[k % 3]).collect();
            let period = 1.0 / TRAJECTORY_FREQUENCIES[0];
            Ok(DMatrix::from_fn(count, n, |i, k| {
                let t = (i as f64 + offset) * period / count as f64;
                let v = center[k] + amp[k] * (2.0 * std::f64::consts::PI * f[k] * t + phi[k]).sin();
                v.clamp(domain.lower()[k], domain.upper()[k])
            }))
        }
        Waveform::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = DMatrix::zeros(count, n);
            for i in 0..count {
                let p = uniform_point(domain, &mut rng);
                for k in 0..n {
                    out[(i, k)] = p[k];
                }
            }
            Ok(out)
        }
    }
}

/// `y_i = D(qd_i) qd_i + eps_i` with `eps_i ~ N(0, noise_std^2 I)`.
pub fn generate_dataset(
    system: &GroundTruthSystem,
    velocities: &DMatrix<f64>,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::input(format!("noise_std must be finite and >= 0, got {noise_std}")));
    }
    if velocities.ncols() != system.dim() {
        return Err(Error::input("velocity dimension does not match the system"));
    }
    let mut y = system.torques(velocities);
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise_std * z;
        }
    }
    Ok(Dataset::new(velocities.clone(), y)?.with_noise_variance_hint(Some(noise_std * noise_std)))
}

/// Fraction of each half-width, measured from the upper face, inside which
/// [`adversarial_dataset`] reverses the torque.
pub const ADVERSARIAL_BAND: f64 = 0.2;

/// Uniform volume data whose torque components are reversed near the upper
/// face of the box.
///
/// For a sample with normalized coordinate `u_n > 1 - ADVERSARIAL_BAND`,
/// output `n` becomes `-r * tau_n` with `r ~ U(0.5, 1.0)`, giving strongly
/// negative dissipated power there. Every other output gets Gaussian noise.
pub fn adversarial_dataset(system: &GroundTruthSystem, count: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let domain = system.domain();
    let q = sample_trajectory(domain, count, seed, Waveform::Uniform)?;
    let clean = system.torques(&q);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xad5e_7a11);
    let center = domain.center();
    let half = domain.half_widths();
    let mut y = clean.clone();
    for i in 0..count {
        for n in 0..system.dim() {
            let u = if half[n] > 0.0 { (q[(i, n)] - center[n]) / half[n] } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            let r: f64 = rng.random_range(0.5..1.0);
            y[(i, n)] = if u > 1.0 - ADVERSARIAL_BAND { -r * clean[(i, n)] } else { clean[(i, n)] + noise_std * z };
        }
    }
    Ok(Dataset::new(q, y)?.with_noise_variance_hint(Some(noise_std * noise_std)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmseReport {
    pub per_output: Vec<f64>,
    pub aggregate: f64,
}

/// Normalized mean squared error per output column,
/// `sum (yhat - y)^2 / sum (y - mean(y))^2`, and its mean over outputs.
///
/// A constant truth column yields 0 when predicted exactly and `+inf`
/// otherwise.
pub fn nmse(predictions: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<NmseReport> {
    if predictions.shape() != truth.shape() || truth.nrows() == 0 || truth.ncols() == 0 {
        return Err(Error::input(format!(
            "prediction shape {:?} does not match truth shape {:?}",
            predictions.shape(),
            truth.shape()
        )));
    }
    let per_output: Vec<f64> = (0..truth.ncols())
        .map(|n| {
            let t = truth.column(n);
            let mean = t.mean();
            let num: f64 = predictions.column(n).iter().zip(t.iter()).map(|(p, y)| (p - y).powi(2)).sum();
            let den: f64 = t.iter().map(|y| (y - mean).powi(2)).sum();
            if den == 0.0 {
                if num == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                num / den
            }
        })
        .collect();
    let aggregate = per_output.iter().sum::<f64>() / per_output.len() as f64;
    Ok(NmseReport { per_output, aggregate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeErrorReport {
    /// `(yhat - y) / normalizer`, elementwise.
    pub errors: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Population variance per output.
    pub variance: Vec<f64>,
}

pub fn relative_error(predictions: &DMatrix<f64>, truth: &DMatrix<f64>, normalizer: f64) -> Result<RelativeErrorReport> {
    if !(normalizer > 0.0) {
        return Err(Error::input("normalizer must be positive"));
    }
    if predictions.shape() != truth.shape() || truth.nrows() == 0 {
        return Err(Error::input("prediction and truth shapes differ"));
    }
    let errors = (predictions - truth) / normalizer;
    let d = errors.nrows() as f64;
    let mean: Vec<f64> = (0..errors.ncols()).map(|n| errors.column(n).sum() / d).collect();
    let variance = (0..errors.ncols())
        .map(|n| errors.column(n).iter().map(|e| (e - mean[n]).powi(2)).sum::<f64>() / d)
        .collect();
    Ok(RelativeErrorReport { errors, mean, variance })
}

/// Experiment settings, read from a flat `key = value` text file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: String,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub training_sizes: Vec<usize>,
    pub noise_std: f64,
    pub seeds: Vec<u64>,
    pub domain: Option<BoxDomain>,
    pub kinds: Vec<ModelKind>,
    pub lengthscales: Option<Vec<f64>>,
    pub noise_variance: f64,
    pub constrained: bool,
    pub budget: usize,
    pub free_hypervariances: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: "full3".into(),
            train_size: 50,
            val_size: 100,
            test_size: 200,
            training_sizes: vec![10, 20, 50, 100, 200],
            noise_std: 1.0,
            seeds: vec![0, 1, 2],
            domain: None,
            kinds: ModelKind::ALL.to_vec(),
            lengthscales: None,
            noise_variance: 100.0,
            constrained: false,
            budget: 40,
            free_hypervariances: false,
        }
    }
}

pub const CONFIG_KEYS: [&str; 14] = [
    "system",
    "train_size",
    "val_size",
    "test_size",
    "training_sizes",
    "noise_std",
    "seeds",
    "domain",
    "kinds",
    "lengthscales",
    "noise_variance",
    "constrained",
    "budget",
    "free_hypervariances",
];

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| Error::input(format!("config key {key:?}: bad value {s:?}: {e}"))))
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| Error::input(format!("config key {key:?}: bad value {value:?}: {e}")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are an
    /// error naming the key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: idx + 1, message: format!("expected key = value, got {line:?}") })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "system" => self.system = value.to_string(),
            "train_size" => self.train_size = parse_scalar(key, value)?,
            "val_size" => self.val_size = parse_scalar(key, value)?,
            "test_size" => self.test_size = parse_scalar(key, value)?,
            "training_sizes" => self.training_sizes = parse_list(key, value)?,
            "noise_std" => self.noise_std = parse_scalar(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "domain" => self.domain = Some(BoxDomain::parse(value)?),
            "kinds" => self.kinds = parse_list(key, value)?,
            "lengthscales" => self.lengthscales = Some(parse_list(key, value)?),
            "noise_variance" => self.noise_variance = parse_scalar(key, value)?,
            "constrained" => self.constrained = parse_scalar(key, value)?,
            "budget" => self.budget = parse_scalar(key, value)?,
            "free_hypervariances" => self.free_hypervariances = parse_scalar(key, value)?,
            other => {
                return Err(Error::input(format!(
                    "invalid config key {other:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_size == 0 || self.val_size == 0 || self.test_size == 0 || self.budget == 0 {
            return Err(Error::input("sizes and budget must be at least 1"));
        }
        if self.training_sizes.is_empty() || self.training_sizes.contains(&0) {
            return Err(Error::input("training_sizes must be nonempty and positive"));
        }
        if self.seeds.is_empty() || self.kinds.is_empty() {
            return Err(Error::input("seeds and kinds must be nonempty"));
        }
        if !(self.noise_std >= 0.0) || !(self.noise_variance > 0.0) {
            return Err(Error::input("noise_std must be >= 0 and noise_variance > 0"));
        }
        Ok(())
    }

    /// The system named by `system`, restricted to `domain` when given.
    pub fn resolve_system(&self) -> Result<GroundTruthSystem> {
        let sys = system_by_id(&self.system)?;
        match &self.domain {
            None => Ok(sys),
            Some(d) if d.dim() == sys.dim() => GroundTruthSystem::new(
                sys.id.clone(),
                sys.kind,
                d.clone(),
                sys.description.clone(),
                sys.lengthscales.clone(),
                move |q| (sys.damping)(q),
            ),
            Some(_) => Err(Error::input("config domain dimension does not match the system")),
        }
    }

    pub fn effective_lengthscales(&self, system: &GroundTruthSystem) -> Result<Vec<f64>> {
        let ls = self.lengthscales.clone().unwrap_or_else(|| system.default_lengthscales().to_vec());
        if ls.len() != system.dim() {
            return Err(Error::input(format!("expected {} lengthscales, got {}", system.dim(), ls.len())));
        }
        Ok(ls)
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut map = BTreeMap::new();
        map.insert("system", self.system.clone());
        map.insert("train_size", self.train_size.to_string());
        map.insert("val_size", self.val_size.to_string());
        map.insert("test_size", self.test_size.to_string());
        map.insert("training_sizes", join(self.training_sizes.iter().map(|v| v.to_string()).collect()));
        map.insert("noise_std", format!("{:?}", self.noise_std));
        map.insert("seeds", join(self.seeds.iter().map(|v| v.to_string()).collect()));
        if let Some(d) = &self.domain {
            map.insert("domain", d.to_arg_string());
        }
        map.insert("kinds", join(self.kinds.iter().map(|k| k.name().to_string()).collect()));
        if let Some(l) = &self.lengthscales {
            map.insert("lengthscales", join(l.iter().map(|v| format!("{v:?}")).collect()));
        }
        map.insert("noise_variance", format!("{:?}", self.noise_variance));
        map.insert("constrained", self.constrained.to_string());
        map.insert("budget", self.budget.to_string());
        map.insert("free_hypervariances", self.free_hypervariances.to_string());
        let mut out = String::new();
        for (k, v) in map {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}
