mod common;

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use trotterlab::evolve::{floquet_eigensystem, KrylovConfig};
use trotterlab::observables::*;
use trotterlab::spin::make_all_up_state;
use trotterlab::IsingModel;

fn real(r: &TrajectoryRecord) -> Vec<f64> {
    r.checked_real().unwrap()
}

#[test]
fn initial_values_and_layout() {
    let m = IsingModel::benchmark(6).unwrap();
    let recs = run_dynamics(&m, 0.2, 50, &ObservableKind::ALL).unwrap();
    assert_eq!(recs.len(), 4);
    for r in &recs {
        assert_eq!(r.len(), 51);
        let t = r.times();
        assert!(t.windows(2).all(|w| ((w[1] - w[0]) - 0.2).abs() < 1e-12));
    }
    let get = |k: ObservableKind| recs.iter().find(|r| r.meta.observable == k.label()).unwrap();
    assert_eq!(get(ObservableKind::Magnetization).values[0].re, 0.5);
    assert_eq!(get(ObservableKind::Accuracy).values[0].re, 0.0);
    assert_eq!(get(ObservableKind::Loschmidt).values[0].re, 1.0);
    for k in ObservableKind::ALL {
        assert!(get(k).max_imag() <= REALNESS_TOL, "{k:?}");
    }
}

#[test]
fn tiny_steps_keep_accuracy_near_zero() {
    let m = IsingModel::benchmark(8).unwrap();
    let q = run_dynamics(&m, 1e-3, 1000, &[ObservableKind::Accuracy]).unwrap().remove(0);
    assert!(real(&q).iter().all(|v| v.abs() <= 1e-3));
}

#[test]
fn exact_reference_conserves_energy() {
    let m = IsingModel::benchmark(8).unwrap();
    let kinds = [ObservableKind::Energy, ObservableKind::Magnetization];
    let recs = exact_reference(&m, 0.25, 40, &kinds, &KrylovConfig::default()).unwrap();
    let e = real(&recs[0]);
    assert!(e.iter().all(|x| (x - e[0]).abs() <= 1e-8 * 8.0));
    assert!(recs[1].max_imag() <= 1e-12);
}

#[test]
fn exact_reference_two_sites() {
    let m = IsingModel::new(2, 1.0, 0.8, 1.7).unwrap();
    let t = 1.9;
    let recs = exact_reference(&m, t, 1, &[ObservableKind::Magnetization], &KrylovConfig::default()).unwrap();
    let v = common::propagator(&common::h(&m), t).dot(&common::all_up(2));
    let want = common::expect(&common::magnetization(2), &v).re;
    assert!((recs[0].values[1].re - want).abs() < 1e-10);
}

/// `exp(−iθ(a σz + b σx)/2)` on a single spin.
fn spin_rotation(a: f64, b: f64, theta: f64) -> Array2<Complex64> {
    let w = (a * a + b * b).sqrt();
    let (c, s) = ((w * theta / 2.0).cos(), (w * theta / 2.0).sin());
    let i = common::I;
    Array2::from_shape_vec(
        (2, 2),
        vec![
            Complex64::new(c, 0.0) - i * s * a / w,
            -i * s * b / w,
            -i * s * b / w,
            Complex64::new(c, 0.0) + i * s * a / w,
        ],
    )
    .unwrap()
}

#[test]
fn single_site_error_against_closed_form() {
    let m = IsingModel::new(1, 1.0, 2.0, 2.0).unwrap();
    let tau = 0.3;
    let n = 40;
    let err = trotter_error_trajectory(&m, tau, n, &KrylovConfig::default()).unwrap();
    let period = spin_rotation(m.h, 0.0, tau).dot(&spin_rotation(0.0, m.g, tau));
    let exact = spin_rotation(m.h, m.g, tau);
    let (mut a, mut b) = (common::all_up(1), common::all_up(1));
    let mz = |v: &ndarray::Array1<Complex64>| 0.5 * (v[0].norm_sqr() - v[1].norm_sqr());
    assert_eq!(err.delta_m.values[0].re, 0.0);
    for k in 1..=n {
        a = period.dot(&a);
        b = exact.dot(&b);
        let want = (mz(&b) - mz(&a)).abs();
        assert!((err.delta_m.values[k].re - want).abs() < 1e-10, "k={k}");
        let scaled = want / (m.h * tau).powi(2);
        assert!((err.normalized.values[k].re - scaled).abs() < 1e-9);
    }
}

#[test]
fn error_curves_collapse_for_small_steps() {
    let m = IsingModel::benchmark(8).unwrap();
    let cfg = KrylovConfig::default();
    let a = trotter_error_trajectory(&m, 0.05, 200, &cfg).unwrap();
    let b = trotter_error_trajectory(&m, 0.1, 100, &cfg).unwrap();
    let (ra, rb) = (real(&a.normalized), real(&b.normalized));
    // Relative agreement, with the reference magnitude floored at a tenth of
    // the curve's maximum so zero crossings do not dominate.
    let floor = 0.1 * rb.iter().cloned().fold(0.0, f64::max);
    for k in 1..=100 {
        let (x, y) = (ra[2 * k], rb[k]);
        assert!((x - y).abs() <= 0.2 * x.abs().max(y.abs()).max(floor), "t={}: {x} vs {y}", k as f64 * 0.1);
    }
}

#[test]
fn long_time_errors_scale_quadratically() {
    let m = IsingModel::benchmark(8).unwrap();
    let ladder = [0.02, 0.04, 0.08, 0.16];
    let mut q = vec![];
    let mut dm = vec![];
    for &tau in &ladder {
        let acc = run_dynamics(&m, tau, 20_000, &[ObservableKind::Accuracy]).unwrap().remove(0);
        q.push(stroboscopic_average(&acc, 10_000).unwrap().mean);
        // The signed difference cancels the temporal fluctuations common to
        // both dynamics, which at this size dwarf the Trotter shift of M.
        let err = trotter_error_trajectory(&m, tau, 20_000, &KrylovConfig::default()).unwrap();
        dm.push(stroboscopic_average(&err.signed, 10_000).unwrap().mean.abs());
    }
    let slope = |ys: &[f64]| {
        let xs: Vec<f64> = ladder.iter().map(|t: &f64| t.ln()).collect();
        let ys: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        num / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
    };
    let (sq, sm) = (slope(&q), slope(&dm));
    assert!((sq - 2.0).abs() <= 0.2, "Q_E slope {sq}");
    assert!((sm - 2.0).abs() <= 0.3, "dM slope {sm} from {dm:?}");
}

#[test]
fn large_steps_heat_to_infinite_temperature() {
    let m = IsingModel::benchmark(10).unwrap();
    let q = run_dynamics(&m, 2.5, 4000, &[ObservableKind::Accuracy]).unwrap().remove(0);
    let avg = stroboscopic_average(&q, 2000).unwrap();
    assert!((avg.mean - 1.0).abs() <= 0.1, "{}", avg.mean);
}

#[test]
fn stroboscopic_average_examples() {
    let meta = TrajectoryMeta::new("c", "c", &IsingModel::benchmark(2).unwrap(), 0.1);
    let c = TrajectoryRecord::from_real(meta.clone(), &[2.5; 30]);
    let avg = stroboscopic_average(&c, 10).unwrap();
    assert_eq!((avg.mean, avg.fluctuation), (2.5, 0.0));
    let alt: Vec<f64> = (0..30).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let avg = stroboscopic_average(&TrajectoryRecord::from_real(meta.clone(), &alt), 20).unwrap();
    assert!(avg.mean.abs() < 1e-15 && (avg.fluctuation - 1.0).abs() < 1e-15);
    assert!(stroboscopic_average(&c, 31).is_err());
    assert!(stroboscopic_average(&c, 0).is_err());
}

#[test]
fn ipr_is_one_for_a_floquet_eigenstate() {
    let m = IsingModel::benchmark(6).unwrap().with_g(0.0);
    let (res, _) = ipr_dynamical(&m, 0.4, 200, 100).unwrap();
    assert!((res.ipr - 1.0).abs() < 1e-12);
    assert!(res.lambda_ipr.abs() < 1e-12);
    assert!(res.ratio.abs() < 1e-12);
}

#[test]
fn dynamical_ipr_matches_floquet_basis() {
    let m = IsingModel::benchmark(8).unwrap();
    let psi = make_all_up_state(8).unwrap();
    for tau in [0.3, 1.0, 2.5] {
        let (res, _) = ipr_dynamical(&m, tau, 20_000, 10_000).unwrap();
        let spec = floquet_eigensystem(&m, tau).unwrap();
        let want = spec.blocked_ipr(&psi);
        assert!((res.ipr - want).abs() <= 0.05 * want, "tau={tau}: {} vs {want}", res.ipr);
    }
}

#[test]
fn ipr_window_must_fit() {
    let m = IsingModel::benchmark(4).unwrap();
    assert!(ipr_dynamical(&m, 0.1, 100, 60).is_err());
}

#[test]
fn otoc_starts_at_one_sixteenth() {
    let m = IsingModel::benchmark(6).unwrap();
    let r = otoc_run(&m, 0.5, 3, 2).unwrap();
    assert!((r.trajectory.values[0] - Complex64::new(1.0 / 16.0, 0.0)).norm() < 1e-15);
}

#[test]
fn otoc_two_state_scheme_matches_dense_evaluation() {
    let m = IsingModel::benchmark(6).unwrap();
    let tau = 0.45;
    let steps = 25;
    let r = otoc_run(&m, tau, steps, 5).unwrap();
    let u = common::propagator(&common::hz(&m), tau).dot(&common::propagator(&common::hx(&m), tau));
    let mag = common::magnetization(6);
    let psi0 = common::all_up(6);
    let mut un: Array2<Complex64> = Array2::eye(64);
    for n in 0..=steps {
        if n > 0 {
            un = u.dot(&un);
        }
        let udag = un.t().mapv(|x| x.conj());
        let vt = udag.dot(&mag).dot(&un);
        let f = psi0.dot(&vt.dot(&mag).dot(&vt).dot(&mag).dot(&psi0));
        assert!((r.trajectory.values[n] - f).norm() < 1e-8, "n={n}");
    }
}

#[test]
fn csv_and_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = IsingModel::benchmark(4).unwrap();
    let rec = otoc_run(&m, 0.3, 12, 4).unwrap().trajectory;
    let path = dir.path().join("f.csv");
    rec.write_csv(&path).unwrap();
    let back = TrajectoryRecord::read_csv(&path, rec.meta.clone()).unwrap();
    assert_eq!(back.values, rec.values);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("step,time,value_re,value_im"));
    let json = TrajectoryRecord::from_json(&rec.to_json().unwrap()).unwrap();
    assert_eq!(json.values, rec.values);
    assert_eq!(json.meta, rec.meta);
}

#[test]
fn complex_values_are_not_silently_dropped() {
    let meta = TrajectoryMeta::new("x", "M", &IsingModel::benchmark(2).unwrap(), 0.1);
    let mut r = TrajectoryRecord::new(meta);
    r.push(Complex64::new(1.0, 1e-6));
    assert!(r.checked_real().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn observables_stay_in_range(tau in 0.01f64..3.0, steps in 1usize..60) {
        let m = IsingModel::benchmark(5).unwrap();
        let recs = run_dynamics(&m, tau, steps, &[ObservableKind::Magnetization, ObservableKind::Loschmidt]).unwrap();
        for v in real(&recs[0]) {
            prop_assert!((-0.5 - 1e-12..=0.5 + 1e-12).contains(&v));
        }
        for v in real(&recs[1]) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn trailing_average_is_bounded_by_the_data(xs in prop::collection::vec(-5.0f64..5.0, 1..200), w in 1usize..200) {
        let w = w.min(xs.len());
        let avg = trailing_average(&xs, w).unwrap();
        let tail = &xs[xs.len() - w..];
        let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(avg.mean >= lo - 1e-12 && avg.mean <= hi + 1e-12);
        prop_assert!(avg.fluctuation >= 0.0);
    }
}
