//! Small summary-statistics helpers used by evaluation and reporting.

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Half-width of a 95% normal-approximation confidence interval:
/// `1.96 * s / sqrt(n)` with `s` the sample standard deviation (n - 1
/// denominator). Returns `None` when fewer than two values are available,
/// since the sample deviation is undefined there.
pub fn compute_ci95(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = mean(values).unwrap();
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    Some(1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Median of the values (mean of the two middle elements for even lengths).
/// `None` for an empty slice. Input order is irrelevant.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median of non-finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        Some(sorted[n / 2])
    } else {
        Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}
