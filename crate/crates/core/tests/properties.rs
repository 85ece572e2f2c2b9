use nalgebra::{DMatrix, DVector};
use passive_gp::bench::{diag3, full3, generate_dataset, sample_trajectory, Waveform};
use passive_gp::gp_core::{assemble_gram, joint_multi_output_oracle};
use passive_gp::kernels::{DiagTorqueKernel, FullTorqueKernel, ScalarKernel, SeArdKernel, TorqueKernel};
use passive_gp::linalg::min_eigenvalue;
use passive_gp::models::{fit_prior_mean, FittedModel, ModelKernel, ModelKind, PriorMean};
use passive_gp::passivity::{compute_bound, enforce_bound, passivity_sweep, EnforceMode, Hypervariances};
use passive_gp::{BoxDomain, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, count: usize, n: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..n).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

fn random_dataset(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Dataset {
    let q = random_points(rng, d, n, 3.0);
    let y: Vec<Vec<f64>> = q.iter().map(|v| v.iter().map(|x| 1.5 * x + rng.random_range(-0.5..0.5)).collect()).collect();
    Dataset::from_rows(&q, &y).unwrap()
}

fn random_lengthscales(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.5..3.0)).collect()
}

fn random_hypervariances(rng: &mut ChaCha8Rng, kind: ModelKind, n: usize) -> Hypervariances {
    match kind {
        ModelKind::FullD => Hypervariances::Full(DMatrix::from_fn(n, n, |_, _| rng.random_range(0.1..2.0))),
        _ => Hypervariances::Diag((0..n).map(|_| rng.random_range(0.1..2.0)).collect()),
    }
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn grams_are_psd_for_every_kernel_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let d = rng.random_range(2..=15);
        let ls = random_lengthscales(&mut rng, n);
        let pts = random_points(&mut rng, d, n, 3.0);
        let ard = SeArdKernel::new(ls.clone(), rng.random_range(0.1..5.0)).unwrap();
        let diag = DiagTorqueKernel::new(ls.clone(), (0..n).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
        let full = FullTorqueKernel::new(ls, DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..2.0))).unwrap();
        let mut grams = vec![assemble_gram(&ard, &pts).unwrap()];
        for m in 0..n {
            grams.push(assemble_gram(&diag.output_kernel(m).unwrap(), &pts).unwrap());
            grams.push(assemble_gram(&full.output_kernel(m).unwrap(), &pts).unwrap());
        }
        for g in grams {
            assert!(min_eigenvalue(&g) >= -1e-10 * g.trace().abs());
        }
    }
}

#[test]
fn structured_predictions_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [ModelKind::DiagD, ModelKind::FullD] {
        for _ in 0..20 {
            let n = rng.random_range(1..=3);
            let d = rng.random_range(3..=12);
            let data = random_dataset(&mut rng, d, n);
            let ls = random_lengthscales(&mut rng, n);
            let hv = random_hypervariances(&mut rng, kind, n);
            let noise = rng.random_range(0.01..1.0);
            let prior = fit_prior_mean(&data);
            let kernel = ModelKernel::build(kind, &ls, &hv).unwrap();
            let model = FittedModel::fit(kernel.clone(), prior.clone(), &data, noise).unwrap();
            let tests = random_points(&mut rng, 5, n, 3.0);
            let oracle = joint_multi_output_oracle(
                |a: &[f64], b: &[f64]| kernel.eval_matrix(a, b).unwrap(),
                &data,
                |q: &[f64]| prior.torque(q),
                noise,
                &tests,
            )
            .unwrap();
            for (q, o) in tests.iter().zip(&oracle) {
                assert!(rel_err(&model.predict_torque(q).unwrap(), o) < 1e-8);
            }
        }
    }
}

#[test]
fn diag_posterior_matches_explicit_stacked_formula() {
    // tau(q) = m(q) + diag(q) K_d(q, Q) diag(Q) (K_y)^{-1} dy, written out with
    // the full sample-major DN x DN system.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (d, n) = (6, 2);
    let data = random_dataset(&mut rng, d, n);
    let ls = vec![1.3, 0.8];
    let s = vec![0.7, 1.9];
    let noise = 0.2;
    let prior = fit_prior_mean(&data);
    let qs = data.velocity_rows();
    let se = |a: &[f64], b: &[f64]| -> f64 {
        (-0.5 * a.iter().zip(b).zip(&ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum::<f64>()).exp()
    };
    let kd = |a: &[f64], b: &[f64]| DMatrix::from_diagonal(&DVector::from_iterator(n, s.iter().map(|v| v * se(a, b))));
    let diag_q = |a: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(a));
    let mut big_kd = DMatrix::zeros(d * n, d * n);
    for i in 0..d {
        for j in 0..d {
            big_kd.view_mut((i * n, j * n), (n, n)).copy_from(&kd(&qs[i], &qs[j]));
        }
    }
    let mut big_q = DMatrix::zeros(d * n, d * n);
    for i in 0..d {
        big_q.view_mut((i * n, i * n), (n, n)).copy_from(&diag_q(&qs[i]));
    }
    let ky = &big_q * &big_kd * &big_q + DMatrix::identity(d * n, d * n) * noise;
    let mut dy = DVector::zeros(d * n);
    for i in 0..d {
        let r = DVector::from_vec(data.torque(i)) - prior.torque(&qs[i]);
        dy.rows_mut(i * n, n).copy_from(&r);
    }
    let alpha = ky.lu().solve(&dy).unwrap();
    let kernel = ModelKernel::build(ModelKind::DiagD, &ls, &Hypervariances::Diag(s.clone())).unwrap();
    let model = FittedModel::fit(kernel, prior.clone(), &data, noise).unwrap();
    for q in random_points(&mut rng, 4, n, 3.0) {
        let mut row = DMatrix::zeros(n, d * n);
        for i in 0..d {
            row.view_mut((0, i * n), (n, n)).copy_from(&(kd(&q, &qs[i]) * diag_q(&qs[i])));
        }
        let expected = prior.torque(&q) + diag_q(&q) * row * &alpha;
        assert!(rel_err(&model.predict_torque(&q).unwrap(), &expected) < 1e-10);
    }
}

#[test]
fn predictions_invariant_under_row_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in ModelKind::ALL {
        let data = random_dataset(&mut rng, 10, 3);
        let mut order: Vec<usize> = (0..10).collect();
        order.reverse();
        order.swap(2, 7);
        let shuffled = data.permuted(&order).unwrap();
        let ls = vec![1.0, 2.0, 1.5];
        let hv = random_hypervariances(&mut rng, kind, 3);
        let prior = if kind.is_structured() { fit_prior_mean(&data) } else { PriorMean::zeros(3) };
        let a = FittedModel::fit(ModelKernel::build(kind, &ls, &hv).unwrap(), prior.clone(), &data, 0.3).unwrap();
        let b = FittedModel::fit(ModelKernel::build(kind, &ls, &hv).unwrap(), prior, &shuffled, 0.3).unwrap();
        for q in random_points(&mut rng, 5, 3, 3.0) {
            assert!(rel_err(&a.predict_torque(&q).unwrap(), &b.predict_torque(&q).unwrap()) < 1e-10);
        }
    }
}

#[test]
fn huge_noise_falls_back_to_prior_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_dataset(&mut rng, 12, 2);
    let prior = fit_prior_mean(&data);
    for kind in [ModelKind::DiagD, ModelKind::FullD] {
        let hv = random_hypervariances(&mut rng, kind, 2);
        let model = FittedModel::fit(ModelKernel::build(kind, &[1.0, 1.0], &hv).unwrap(), prior.clone(), &data, 1e12).unwrap();
        for q in random_points(&mut rng, 5, 2, 3.0) {
            let p = prior.torque(&q);
            assert!((model.predict_torque(&q).unwrap() - &p).norm() <= 1e-8 * (1.0 + p.norm()));
        }
    }
}

#[test]
fn damping_matrix_reproduces_torque() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for kind in [ModelKind::DiagD, ModelKind::FullD] {
        for _ in 0..10 {
            let n = rng.random_range(1..=3);
            let data = random_dataset(&mut rng, 8, n);
            let hv = random_hypervariances(&mut rng, kind, n);
            let ls = random_lengthscales(&mut rng, n);
            let model = FittedModel::fit(ModelKernel::build(kind, &ls, &hv).unwrap(), fit_prior_mean(&data), &data, 0.1).unwrap();
            for q in random_points(&mut rng, 5, n, 3.0) {
                let dq = model.predict_damping(&q).unwrap() * DVector::from_column_slice(&q);
                let tau = model.predict_torque(&q).unwrap();
                assert!((dq - &tau).norm() <= 1e-10 * (1.0 + tau.norm()));
            }
        }
    }
}

#[test]
fn bound_factor_never_grows_when_rows_are_appended() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let n = rng.random_range(1..=3);
        let mut data = random_dataset(&mut rng, 2, n);
        let prior = PriorMean::new((0..n).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let hv = Hypervariances::Diag(vec![1.0; n]);
        let mut last = compute_bound(&data, &prior, 10.0, &hv).unwrap().c;
        for _ in 0..15 {
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
            data = data.appended(&q, &y).unwrap();
            let c = compute_bound(&data, &prior, 10.0, &hv).unwrap().c;
            assert!(c <= last * (1.0 + 1e-15));
            last = c;
        }
    }
}

fn constrained_model(kind: ModelKind, seed: u64) -> (FittedModel, BoxDomain) {
    let sys = if kind == ModelKind::FullD { full3().unwrap() } else { diag3().unwrap() };
    let q = sample_trajectory(sys.domain(), 30, seed, Waveform::Uniform).unwrap();
    let data = generate_dataset(&sys, &q, 5.0, seed).unwrap();
    let prior = fit_prior_mean(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hv = random_hypervariances(&mut rng, kind, 3);
    let bound = compute_bound(&data, &prior, 100.0, &hv).unwrap();
    let e = enforce_bound(&bound, EnforceMode::ScaleHypervariances).unwrap();
    let kernel = ModelKernel::build(kind, sys.default_lengthscales(), &e.hypervariances).unwrap();
    (FittedModel::fit(kernel, prior, &data, 100.0).unwrap(), sys.domain().clone())
}

#[test]
fn constrained_structured_models_are_passive() {
    for kind in [ModelKind::DiagD, ModelKind::FullD] {
        for seed in 0..3 {
            let (model, domain) = constrained_model(kind, seed);
            let report = passivity_sweep(&model, &domain, 2000, seed).unwrap();
            assert_eq!(report.violation_count, 0, "{kind} seed {seed}: min {}", report.min_power);
        }
    }
}

#[test]
fn raised_noise_also_yields_passive_model() {
    let sys = diag3().unwrap();
    let q = sample_trajectory(sys.domain(), 30, 4, Waveform::Uniform).unwrap();
    let data = generate_dataset(&sys, &q, 5.0, 4).unwrap();
    let prior = fit_prior_mean(&data);
    let hv = Hypervariances::Diag(vec![1.0; 3]);
    let e = enforce_bound(&compute_bound(&data, &prior, 1.0, &hv).unwrap(), EnforceMode::RaiseNoise).unwrap();
    assert!(e.noise_variance > 1.0);
    let kernel = ModelKernel::build(ModelKind::DiagD, sys.default_lengthscales(), &hv).unwrap();
    let model = FittedModel::fit(kernel, prior, &data, e.noise_variance).unwrap();
    assert_eq!(passivity_sweep(&model, sys.domain(), 2000, 4).unwrap().violation_count, 0);
}

#[test]
fn dataset_file_round_trip_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let data = random_dataset(&mut rng, 25, 3).with_noise_variance_hint(Some(0.1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    data.write_csv(&path).unwrap();
    let back = Dataset::read_csv(&path).unwrap();
    assert_eq!(back, data);
    for (a, b) in back.velocities().iter().zip(data.velocities().iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn element_kernels_are_bounded_by_their_hypervariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let ls = vec![0.7, 1.1, 2.0];
    let s = DMatrix::from_fn(3, 3, |_, _| rng.random_range(0.0..3.0));
    let full = FullTorqueKernel::new(ls, s.clone()).unwrap();
    for _ in 0..10_000 {
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = rng.random_range(0..3);
        let k = rng.random_range(0..3);
        assert!(full.element_kernel(m, k).unwrap().eval(&a, &b).abs() <= s[(m, k)]);
    }
}
