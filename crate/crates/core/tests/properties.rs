use pathogan_core::fitness::{host_fitness, pathogen_fitness, FitnessParams};
use pathogan_core::metrics::{frechet_distance, GaussianMoments};
use pathogan_core::stats::{comparison_matrix, student_t, summarize, MethodSample, TTestKind, SIGNIFICANCE_LEVEL};
use pathogan_core::Matrix;
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn sample(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..100.0f64, n)
}

fn moments() -> impl Strategy<Value = GaussianMoments> {
    (prop::array::uniform2(-5.0..5.0f64), prop::array::uniform4(-2.0..2.0f64)).prop_map(|(mean, a)| {
        let a = Matrix::from_vec(2, 2, a.to_vec());
        let mut cov = a.matmul(&a.transpose());
        cov[(0, 0)] += 1e-3;
        cov[(1, 1)] += 1e-3;
        GaussianMoments { mean: mean.to_vec(), cov, n_samples: 100 }
    })
}

proptest! {
    #[test]
    fn host_fitness_decreases_in_err_real(a in unit(), b in unit(), g in prop::collection::vec(unit(), 0..4)) {
        let p = FitnessParams::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(host_fitness(hi, &g, &p).unwrap() <= host_fitness(lo, &g, &p).unwrap());
    }

    #[test]
    fn host_fitness_decreases_with_more_load(e in unit(), g in prop::collection::vec(unit(), 0..4), extra in unit()) {
        let p = FitnessParams::default();
        let mut more = g.clone();
        more.push(extra);
        prop_assert!(host_fitness(e, &more, &p).unwrap() <= host_fitness(e, &g, &p).unwrap());
    }

    #[test]
    fn pathogen_fitness_increases(a in unit(), b in unit()) {
        let p = FitnessParams::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pathogen_fitness(lo, &p).unwrap() <= pathogen_fitness(hi, &p).unwrap());
    }

    #[test]
    fn fitness_bounded_by_floors(e in unit(), g in prop::collection::vec(unit(), 0..6)) {
        let p = FitnessParams::default();
        let h = host_fitness(e, &g, &p).unwrap();
        let v = pathogen_fitness(e, &p).unwrap();
        prop_assert!(h >= p.host_floor() && h <= 1.0);
        prop_assert!(v >= p.pathogen_floor() && v <= p.v);
    }

    #[test]
    fn frechet_symmetric_non_negative(p in moments(), q in moments()) {
        let d = frechet_distance(&p, &q).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, frechet_distance(&q, &p).unwrap());
    }

    #[test]
    fn t_antisymmetric(a in sample(2..10), b in sample(2..10)) {
        let ab = student_t(&a, &b, TTestKind::Pooled).unwrap();
        let ba = student_t(&b, &a, TTestKind::Pooled).unwrap();
        prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert_eq!(ab.significant, ab.p_value < SIGNIFICANCE_LEVEL);
    }

    #[test]
    fn summarize_permutation_invariant(mut v in sample(2..12), seed in any::<u64>()) {
        let s = summarize(&v).unwrap();
        let n = v.len();
        v.rotate_left((seed as usize) % n);
        v.reverse();
        let r = summarize(&v).unwrap();
        prop_assert_eq!(s.median, r.median);
        prop_assert!((s.mean - r.mean).abs() <= 1e-12 * s.mean.abs().max(1.0));
        prop_assert!((s.std - r.std).abs() <= 1e-10 * s.std.max(1.0));
    }

    #[test]
    fn comparison_ratios_antisymmetric(samples in prop::collection::vec(sample(5..8), 5)) {
        let methods: Vec<MethodSample> =
            samples.into_iter().enumerate().map(|(i, v)| MethodSample::new(format!("m{i}"), v)).collect();
        let m = comparison_matrix(&methods, TTestKind::Pooled).unwrap();
        for i in 0..5 {
            prop_assert_eq!(m.cell(i, i).median_ratio, Some(1.0));
            prop_assert!(!m.cell(i, i).significant);
            for j in 0..5 {
                let (a, b) = (m.cell(i, j).median_ratio.unwrap(), m.cell(j, i).median_ratio.unwrap());
                prop_assert!((a * b - 1.0).abs() < 1e-12);
                prop_assert_eq!(m.cell(i, j).t_statistic, -m.cell(j, i).t_statistic);
            }
        }
    }
}
