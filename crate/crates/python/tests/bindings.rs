use riemopt::{run_maxcut, run_rayleigh, run_verify};

#[test]
fn rayleigh_trace_verifies() {
    let a: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| 1.0 / (1 + i + j) as f64).collect()).collect();
    let r = run_rayleigh(&a, "rtr", 1e-9, Some(1e-6), None, None, 4).unwrap();
    assert_eq!(r.status, "second_order_met");
    let norm: f64 = r.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    let (passed, summary, _) = run_verify(&r.trace_json).unwrap();
    assert!(passed, "{summary}");
}

#[test]
fn maxcut_certificate_is_tight_on_a_triangle() {
    let c = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
    let s = run_maxcut(&c, Some(3), 1e-9, 1e-7, 5).unwrap();
    // Three unit vectors summing to zero: min <C, X> = 6 cos(2pi/3) = -3.
    assert!((s.objective + 3.0).abs() < 1e-6, "objective {}", s.objective);
    assert!(s.lower_bound() <= s.objective);
    assert!(s.feasibility() <= 1e-12);
}

#[test]
fn verify_rejects_garbage() {
    assert!(run_verify("not a trace").is_err());
    assert!(run_verify("{\"schema\": \"nope\"}").is_err());
}
