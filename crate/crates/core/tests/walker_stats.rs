use fracwos_core::problems::make_problem;
use fracwos_core::rng::Stream;
use fracwos_core::walker::{fwos_estimate, fwos_estimate_many, fwos_truncated_many, relative_l2_values, walk};
use fracwos_core::BenchmarkId;

#[test]
fn unbiased_at_the_origin() {
    for &alpha in &[0.5, 1.5] {
        let p = make_problem(&BenchmarkId::ball_poly(2, alpha)).unwrap();
        let e = fwos_estimate(&p, &[0.0, 0.0], 100_000, 1e-6, 10_000, &Stream::new(1)).unwrap();
        let z = (e.value - 1.0) / e.std_error();
        assert!(z.abs() < 4.0, "alpha {alpha}: {} (z = {z})", e.value);
    }
}

#[test]
fn feynman_kac_at_random_points() {
    let p = make_problem(&BenchmarkId::ball_poly(2, 1.0)).unwrap();
    let s = Stream::new(2);
    let pts = p.domain().sample_interior(20, &mut s.child(0).rng()).unwrap();
    let est = fwos_estimate_many(&p, &pts, 10_000, 1e-6, 10_000, &s.child(1)).unwrap();
    for (x, e) in pts.rows().into_iter().zip(&est) {
        let u = p.exact(x.as_slice().unwrap()).unwrap();
        let z = (e.value - u) / e.std_error();
        assert!(z.abs() < 4.0, "at {x}: {} vs {u} (z = {z})", e.value);
    }
}

#[test]
fn exact_completion_after_one_step_is_unbiased() {
    let p = make_problem(&BenchmarkId::ball_poly(10, 1.6)).unwrap();
    let s = Stream::new(3);
    let pts = p.domain().sample_interior(1000, &mut s.child(0).rng()).unwrap();
    let oracle = |x: &[f64]| p.exact(x);
    let est = fwos_truncated_many(&p, &pts, 10_000, 1, 1e-4, &oracle, &s.child(1)).unwrap();
    let exact: Vec<f64> = pts.rows().into_iter().map(|x| p.exact(x.as_slice().unwrap()).unwrap()).collect();
    let vals: Vec<f64> = est.iter().map(|e| e.value).collect();
    let err = relative_l2_values(&vals, &exact).unwrap();
    assert!(err < 2e-2, "relative error {err}");
    assert!(est.iter().all(|e| e.tally.steps <= e.tally.n));
}

#[test]
fn mean_steps_grow_with_alpha() {
    let mut prev = 0.0;
    for &alpha in &[0.4, 0.8, 1.2, 1.6] {
        let p = make_problem(&BenchmarkId::ball_poly(10, alpha)).unwrap();
        let s = Stream::new(4);
        let pts = p.domain().sample_interior(100, &mut s.child(0).rng()).unwrap();
        let est = fwos_estimate_many(&p, &pts, 100, 1e-4, 10_000, &s.child(1)).unwrap();
        let steps: usize = est.iter().map(|e| e.tally.steps).sum();
        let non_exited: usize = est.iter().map(|e| e.tally.non_exited).sum();
        let mean = steps as f64 / 10_000.0;
        assert!(mean.is_finite() && mean > prev, "alpha {alpha}: {mean} after {prev}");
        assert!((non_exited as f64) < 1e-3 * 10_000.0, "alpha {alpha}: {non_exited} capped walks");
        prev = mean;
    }
}

#[test]
fn constant_boundary_data_is_reproduced_exactly() {
    let p = make_problem(&BenchmarkId::constant(5, 1.3, 2.5)).unwrap();
    let pts = p.domain().sample_interior(10, &mut Stream::new(5).rng()).unwrap();
    for n in [1, 7, 100] {
        let est = fwos_estimate_many(&p, &pts, n, 1e-4, 10_000, &Stream::new(6)).unwrap();
        assert!(est.iter().all(|e| e.value == 2.5));
    }
}

#[test]
fn walks_respect_the_cap_and_the_exit_flag() {
    let p = make_problem(&BenchmarkId::ball_poly(3, 1.8)).unwrap();
    let mut rng = Stream::new(7).rng();
    for _ in 0..2000 {
        let w = walk(&p, &[0.2, 0.1, -0.3], 1e-4, 5, &mut rng).unwrap();
        assert!(w.steps <= 5);
        let depth = p.domain().dist_to_boundary(&w.terminal).unwrap();
        if w.exited {
            assert!(depth <= 1e-4);
        } else {
            assert_eq!(w.steps, 5);
            assert!(depth > 1e-4);
        }
    }
}
