mod common;

use trotterlab::noise::*;
use trotterlab::observables::{run_dynamics, ObservableKind};
use trotterlab::perturbation::magnus_hf;
use trotterlab::IsingModel;

fn timing(eta: f64, r: usize, seed: u64) -> NoiseConfig {
    NoiseConfig::new(NoiseKind::Timing, eta, r, seed).unwrap()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    num / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

#[test]
fn draws_are_addressable_and_uniform() {
    let cfg = timing(0.3, 10, 99);
    let a = draw_xi(&cfg, 3, 17, Gate::X);
    assert_eq!(a, draw_xi(&cfg, 3, 17, Gate::X));
    assert_eq!(a, draw_xi(&timing(0.3, 1000, 99), 3, 17, Gate::X));
    assert_ne!(a, draw_xi(&cfg, 3, 17, Gate::Z));
    assert_ne!(a, draw_xi(&cfg, 4, 17, Gate::X));
    let xs: Vec<f64> = (0..20_000u64).map(|p| draw_xi(&cfg, 0, p, Gate::Z)).collect();
    assert!(xs.iter().all(|x| x.abs() <= 0.15));
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    assert!(mean.abs() < 4.0 * (cfg.variance() / xs.len() as f64).sqrt());
    assert!((var / cfg.variance() - 1.0).abs() < 0.05);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let m = IsingModel::benchmark(5).unwrap();
    let cfg = timing(0.1, 13, 4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| timing_noise_run(&m, 0.2, 60, &cfg).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.mean.values, b.mean.values);
    assert_eq!(a.stderr.values, b.stderr.values);
}

#[test]
fn zero_noise_reproduces_clean_dynamics() {
    let m = IsingModel::benchmark(5).unwrap();
    let noisy = timing_noise_run(&m, 0.3, 40, &timing(0.0, 3, 1)).unwrap();
    let clean = run_dynamics(&m, 0.3, 40, &[ObservableKind::Accuracy]).unwrap().remove(0);
    for (a, b) in noisy.mean.values.iter().zip(&clean.values) {
        assert!((a.re - b.re).abs() < 1e-14);
    }
    assert!(noisy.stderr.values.iter().all(|s| s.re < 1e-14));
}

#[test]
fn stderr_shrinks_as_inverse_square_root() {
    let m = IsingModel::benchmark(6).unwrap();
    let small = timing_noise_run(&m, 0.1, 200, &timing(0.2, 100, 8)).unwrap();
    let large = timing_noise_run(&m, 0.1, 200, &timing(0.2, 400, 8)).unwrap();
    let ratio: f64 = (100..=200).map(|k| large.stderr.values[k].re / small.stderr.values[k].re).sum::<f64>() / 101.0;
    assert!((ratio - 0.5).abs() <= 0.1, "ratio {ratio}");
}

#[test]
fn rescaled_times_carry_eta_squared() {
    let m = IsingModel::benchmark(3).unwrap();
    let r = timing_noise_run(&m, 0.5, 4, &timing(0.1, 2, 0)).unwrap();
    assert!((r.rescaled_times[4] - 4.0 * 0.5 * 0.01).abs() < 1e-15);
    assert_eq!(r.realizations, 2);
}

#[test]
fn heating_rate_scales_with_eta_squared() {
    // Per realization the excess energy has a zero-mean part linear in η;
    // many cheap realizations keep it below the η² heating.
    let m = IsingModel::benchmark(4).unwrap();
    let (tau, steps) = (0.5, 400);
    let clean = run_dynamics(&m, tau, steps, &[ObservableKind::Accuracy]).unwrap().remove(0);
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * tau).collect();
    let mut rates = vec![];
    for eta in [0.02, 0.04, 0.08] {
        let noisy = timing_noise_run(&m, tau, steps, &timing(eta, 2000, 21)).unwrap();
        let excess: Vec<f64> = noisy.mean.values.iter().zip(&clean.values).map(|(a, b)| a.re - b.re).collect();
        rates.push(slope(&times, &excess));
    }
    assert!(rates[0] > 0.0);
    for w in rates.windows(2) {
        let r = w[1] / w[0];
        assert!((r / 4.0 - 1.0).abs() <= 0.25, "rates {rates:?}");
    }
}

#[test]
fn ensemble_noise_does_not_heat() {
    let m = IsingModel::benchmark(6).unwrap();
    let (tau, steps) = (0.1, 2000);
    let cfg_e = NoiseConfig::new(NoiseKind::Ensemble, 0.2, 40, 5).unwrap();
    let runs = ensemble_noise_run(&m, tau, steps, &cfg_e).unwrap();
    assert_eq!(runs.len(), 2);
    let clean = run_dynamics(&m, tau, steps, &[ObservableKind::Accuracy]).unwrap().remove(0);
    let half = steps / 2;
    let times: Vec<f64> = (half..=steps).map(|k| k as f64 * tau).collect();
    let drift = |mean: &[num_complex::Complex64]| {
        let d: Vec<f64> = (half..=steps).map(|k| mean[k].re - clean.values[k].re).collect();
        slope(&times, &d) * (times[times.len() - 1] - times[0])
    };
    let se: f64 = (half..=steps).map(|k| runs[0].stderr.values[k].re).sum::<f64>() / (steps - half + 1) as f64;
    let ens_drift = drift(&runs[0].mean.values);
    assert!(ens_drift.abs() <= 2.0 * se, "ensemble drift {ens_drift} vs stderr {se}");
    // Timing noise of the same size heats visibly over the same span.
    let t = timing_noise_run(&m, tau, steps, &timing(0.2, 40, 5)).unwrap();
    let tse: f64 = (half..=steps).map(|k| t.stderr.values[k].re).sum::<f64>() / (steps - half + 1) as f64;
    assert!(drift(&t.mean.values) > 2.0 * tse);
}

#[test]
fn lindblad_without_noise_is_the_magnus_state_vector() {
    let m = IsingModel::benchmark(4).unwrap();
    let tau = 0.1;
    let steps = 30;
    let e0 = m.j * 3.0 / 4.0 + m.h * 2.0;
    let h = common::h(&m);
    for (generator, order) in [(LindbladGenerator::MagnusFirst, 1u8), (LindbladGenerator::MagnusSecond, 2)] {
        let cfg = LindbladConfig { generator, ..LindbladConfig::default() };
        let run = lindblad_oracle(&m, tau, 0.0, steps as f64 * tau, &cfg).unwrap();
        let u = common::propagator(&magnus_hf(&m, tau, order).unwrap().matrix, tau);
        let mut v = common::all_up(4);
        for k in 1..=steps {
            v = u.dot(&v);
            let q = (common::expect(&h, &v).re - e0) / -e0;
            assert!((run.accuracy.values[k].re - q).abs() <= 1e-6, "{generator:?} k={k}");
        }
        assert!(run.max_trace_drift < 1e-10);
    }
}

#[test]
fn lindblad_floquet_generator_follows_trotter_steps() {
    let m = IsingModel::benchmark(4).unwrap();
    let cfg = LindbladConfig { generator: LindbladGenerator::Floquet, ..LindbladConfig::default() };
    let run = lindblad_oracle(&m, 0.2, 0.0, 4.0, &cfg).unwrap();
    let clean = run_dynamics(&m, 0.2, 20, &[ObservableKind::Accuracy]).unwrap().remove(0);
    for (a, b) in run.accuracy.values.iter().zip(&clean.values) {
        assert!((a.re - b.re).abs() < 1e-6);
    }
}

#[test]
fn lindblad_noise_heats_and_stays_physical() {
    let m = IsingModel::benchmark(3).unwrap();
    let cfg = LindbladConfig::default();
    let clean = lindblad_oracle(&m, 0.1, 0.0, 20.0, &cfg).unwrap();
    let noisy = lindblad_oracle(&m, 0.1, 0.3, 20.0, &cfg).unwrap();
    let last = noisy.accuracy.len() - 1;
    assert!(noisy.accuracy.values[last].re > clean.accuracy.values[last].re);
    assert!(noisy.max_trace_drift < 1e-10);
    assert!(noisy.max_hermiticity_defect < 1e-10);
}

#[test]
fn invalid_noise_parameters_are_rejected() {
    assert!(NoiseConfig::new(NoiseKind::Timing, -0.1, 10, 0).is_err());
    assert!(NoiseConfig::new(NoiseKind::Timing, 0.1, 0, 0).is_err());
    let m = IsingModel::benchmark(MAX_LINDBLAD_SITES + 1).unwrap();
    assert!(lindblad_oracle(&m, 0.1, 0.1, 1.0, &LindbladConfig::default()).is_err());
    let m = IsingModel::benchmark(3).unwrap();
    assert!(ensemble_noise_run(&m, 0.1, 5, &timing(0.1, 2, 0)).is_err());
}
