use pathogan_core::stats::{student_t, summarize, two_sided_t_p_value, TTestKind};
use pathogan_core::SeededStream;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn reference_p(t: f64, df: f64) -> f64 {
    let d = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * (1.0 - d.cdf(t.abs()))
}

#[test]
fn textbook_pair() {
    let a = [30.02, 29.99, 30.11, 29.97, 30.01, 29.99];
    let b = [29.89, 29.93, 29.72, 29.98, 30.02, 29.98];
    let r = student_t(&a, &b, TTestKind::Pooled).unwrap();
    assert!((r.t_statistic - 1.959).abs() < 1e-3, "{}", r.t_statistic);
    assert_eq!(r.degrees_of_freedom, 10.0);
    assert!((r.p_value - reference_p(r.t_statistic, 10.0)).abs() < 1e-10);
    assert!((r.p_value - 0.078).abs() < 1e-3);
    assert!(!r.significant);
}

#[test]
fn p_values_match_statrs() {
    let mut stream = SeededStream::new(1);
    for _ in 0..2000 {
        let df = 1.0 + stream.below(60) as f64 + stream.uniform();
        let t = stream.normal() * 4.0;
        let ours = two_sided_t_p_value(t, df);
        assert!((ours - reference_p(t, df)).abs() < 1e-9, "t={t} df={df}");
    }
}

#[test]
fn welch_matches_hand_formula() {
    let a = [1.0, 2.0, 3.0, 4.0, 10.0];
    let b = [2.0, 2.5, 2.7, 3.1, 2.2, 2.9];
    let r = student_t(&a, &b, TTestKind::Welch).unwrap();
    let (sa, sb) = (summarize(&a).unwrap(), summarize(&b).unwrap());
    let (va, vb) = (sa.std.powi(2) / 5.0, sb.std.powi(2) / 6.0);
    let t = (sa.mean - sb.mean) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / 4.0 + vb * vb / 5.0);
    assert!((r.t_statistic - t).abs() < 1e-12);
    assert!((r.degrees_of_freedom - df).abs() < 1e-10);
    assert!((r.p_value - reference_p(t, df)).abs() < 1e-9);
}
