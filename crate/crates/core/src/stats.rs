//! Best-score-per-run statistics: order statistics, Student t-tests and the
//! pairwise median-ratio comparison matrix.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Two-sided significance level.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// Fewest runs per method the comparison protocol accepts.
pub const MIN_RUNS_PER_METHOD: usize = 5;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample is empty")]
    Empty,
    #[error("need at least {needed} values, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("sample contains a non-finite or negative value: {0}")]
    BadValue(f64),
    #[error("need at least two methods to compare")]
    TooFewMethods,
}

/// Best Fréchet distances of one method, one value per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSample {
    pub method: String,
    pub values: Vec<f64>,
}

impl MethodSample {
    pub fn new(method: impl Into<String>, values: Vec<f64>) -> Self {
        Self { method: method.into(), values }
    }

    pub fn validate(&self, min_runs: usize) -> Result<(), StatsError> {
        if self.values.is_empty() {
            return Err(StatsError::Empty);
        }
        if let Some(bad) = self.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(StatsError::BadValue(*bad));
        }
        if self.values.len() < min_runs {
            return Err(StatsError::TooFew { needed: min_runs, found: self.values.len() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: f64,
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Even-length samples take the midpoint of the two central values.
pub fn median(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) })
}

pub fn sample_variance(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, found: values.len() });
    }
    let m = mean(values)?;
    Ok(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64)
}

/// Median, mean and sample standard deviation. Needs two or more values.
pub fn summarize(values: &[f64]) -> Result<Summary, StatsError> {
    // Sum in sorted order so the result does not depend on input order.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let std = libm::sqrt(sample_variance(&sorted)?);
    Ok(Summary { median: median(&sorted)?, mean: mean(&sorted)?, std })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Equal-variance Student t with pooled variance.
    #[default]
    Pooled,
    /// Welch's unequal-variance t with Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    /// Two-sided.
    pub p_value: f64,
    pub significant: bool,
    /// Set when both samples have zero variance but different means.
    pub degenerate: bool,
}

/// Two-sample t-test of `a` against `b`; positive `t` means `mean(a) > mean(b)`.
pub fn student_t(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFew { needed: 2, found: s.len() });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a)?, mean(b)?);
    let (va, vb) = (sample_variance(a)?, sample_variance(b)?);
    let (se2, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            (pooled * (1.0 / na + 1.0 / nb), df)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let denom = qa * qa / (na - 1.0) + qb * qb / (nb - 1.0);
            let df = if denom > 0.0 { se2 * se2 / denom } else { na + nb - 2.0 };
            (se2, df)
        }
    };
    let diff = ma - mb;
    if se2 == 0.0 {
        let degenerate = diff != 0.0;
        let t = if degenerate { f64::INFINITY.copysign(diff) } else { 0.0 };
        let p = if degenerate { 0.0 } else { 1.0 };
        return Ok(TTest { t_statistic: t, degrees_of_freedom: df, p_value: p, significant: degenerate, degenerate });
    }
    let t = diff / libm::sqrt(se2);
    let p = two_sided_t_p_value(t, df);
    Ok(TTest { t_statistic: t, degrees_of_freedom: df, p_value: p, significant: p < SIGNIFICANCE_LEVEL, degenerate: false })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn two_sided_t_p_value(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// `I_x(a, b)` by Lentz's continued fraction, using the symmetry
/// `I_x(a, b) = 1 − I_{1−x}(b, a)` where the fraction converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// One ordered pair of methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub row_method: String,
    pub col_method: String,
    /// `median(col) / median(row)`: above 1 means the row method reaches a
    /// lower (better) distance. `None` when the row median is zero.
    pub median_ratio: Option<f64>,
    pub t_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    pub methods: Vec<String>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<ComparisonCell>>,
}

impl ComparisonMatrix {
    pub fn cell(&self, row: usize, col: usize) -> &ComparisonCell {
        &self.cells[row][col]
    }

    pub fn size(&self) -> usize {
        self.methods.len()
    }
}

pub fn comparison_matrix(samples: &[MethodSample], kind: TTestKind) -> Result<ComparisonMatrix, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewMethods);
    }
    let medians = samples.iter().map(|s| median(&s.values)).collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::with_capacity(samples.len());
    for (r, row) in samples.iter().enumerate() {
        let mut line = Vec::with_capacity(samples.len());
        for (c, col) in samples.iter().enumerate() {
            let cell = if r == c {
                ComparisonCell {
                    row_method: row.method.clone(),
                    col_method: col.method.clone(),
                    median_ratio: Some(1.0),
                    t_statistic: 0.0,
                    p_value: 1.0,
                    significant: false,
                }
            } else {
                let t = student_t(&row.values, &col.values, kind)?;
                ComparisonCell {
                    row_method: row.method.clone(),
                    col_method: col.method.clone(),
                    median_ratio: (medians[r] != 0.0).then(|| medians[c] / medians[r]),
                    t_statistic: t.t_statistic,
                    p_value: t.p_value,
                    significant: t.significant,
                }
            };
            line.push(cell);
        }
        cells.push(line);
    }
    Ok(ComparisonMatrix { methods: samples.iter().map(|s| s.method.clone()).collect(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn summarize_small() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert_abs_diff_eq!(s.std, libm::sqrt(5.0 / 3.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, 1.2910, epsilon = 1e-4);
        let c = summarize(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((c.median, c.mean, c.std), (5.0, 5.0, 0.0));
    }

    #[test]
    fn summarize_reproduces_table_median() {
        let s = summarize(&[98.4, 140.2, 112.89, 105.0, 131.7]).unwrap();
        assert_eq!(s.median, 112.89);
    }

    #[test]
    fn single_value() {
        assert_eq!(median(&[3.0]).unwrap(), 3.0);
        assert_eq!(mean(&[3.0]).unwrap(), 3.0);
        assert!(matches!(summarize(&[3.0]), Err(StatsError::TooFew { needed: 2, found: 1 })));
        assert_eq!(median(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn t_identical_samples() {
        let t = student_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], TTestKind::Pooled).unwrap();
        assert_eq!(t.t_statistic, 0.0);
        assert!(!t.significant);
        assert_abs_diff_eq!(t.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn t_separated_samples() {
        let t = student_t(&[1.0, 2.0, 3.0], &[101.0, 102.0, 103.0], TTestKind::Pooled).unwrap();
        assert!(t.t_statistic < -100.0);
        assert!(t.significant);
    }

    #[test]
    fn t_zero_variance() {
        let same = student_t(&[2.0, 2.0], &[2.0, 2.0, 2.0], TTestKind::Pooled).unwrap();
        assert_eq!((same.t_statistic, same.p_value, same.significant, same.degenerate), (0.0, 1.0, false, false));
        let diff = student_t(&[2.0, 2.0], &[3.0, 3.0], TTestKind::Pooled).unwrap();
        assert_eq!(diff.p_value, 0.0);
        assert!(diff.significant && diff.degenerate);
        assert_eq!(diff.t_statistic, f64::NEG_INFINITY);
    }

    #[test]
    fn t_needs_two_values() {
        assert!(student_t(&[1.0], &[1.0, 2.0], TTestKind::Pooled).is_err());
    }

    #[test]
    fn incomplete_beta_known_values() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_0.5(a, a) = 0.5
        assert_abs_diff_eq!(regularized_incomplete_beta(1.0, 1.0, 0.3), 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(regularized_incomplete_beta(2.5, 1.0, 0.4), libm::pow(0.4, 2.5), epsilon = 1e-14);
        assert_abs_diff_eq!(regularized_incomplete_beta(3.7, 3.7, 0.5), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn cauchy_p_value() {
        // df = 1 is Cauchy: P(|T| ≥ 1) = 0.5
        assert_abs_diff_eq!(two_sided_t_p_value(1.0, 1.0), 0.5, epsilon = 1e-13);
    }

    #[test]
    fn matrix_two_medians() {
        let a = MethodSample::new("a", vec![90.0, 100.0, 110.0]);
        let b = MethodSample::new("b", vec![140.0, 150.0, 160.0]);
        let m = comparison_matrix(&[a, b], TTestKind::Pooled).unwrap();
        assert_eq!(m.size(), 2);
        assert_abs_diff_eq!(m.cell(0, 1).median_ratio.unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.cell(1, 0).median_ratio.unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m.cell(0, 0).median_ratio, Some(1.0));
        assert!(!m.cell(1, 1).significant);
    }

    #[test]
    fn matrix_zero_median_flagged() {
        let a = MethodSample::new("a", vec![0.0, 0.0, 1.0]);
        let b = MethodSample::new("b", vec![1.0, 2.0, 3.0]);
        let m = comparison_matrix(&[a, b], TTestKind::Pooled).unwrap();
        assert_eq!(m.cell(0, 1).median_ratio, None);
        assert_eq!(m.cell(1, 0).median_ratio, Some(0.0));
    }

    #[test]
    fn matrix_needs_two_methods() {
        let a = MethodSample::new("a", vec![1.0, 2.0]);
        assert_eq!(comparison_matrix(&[a], TTestKind::Pooled), Err(StatsError::TooFewMethods));
    }

    #[test]
    fn sample_validation() {
        assert!(MethodSample::new("m", vec![1.0; 5]).validate(5).is_ok());
        assert!(matches!(MethodSample::new("m", vec![1.0; 4]).validate(5), Err(StatsError::TooFew { .. })));
        assert!(matches!(MethodSample::new("m", vec![1.0, f64::NAN]).validate(1), Err(StatsError::BadValue(_))));
        assert!(matches!(MethodSample::new("m", vec![-1.0]).validate(1), Err(StatsError::BadValue(_))));
    }
}
