//! Small shared numerical helpers: stable log-sum-exp, least-squares affine
//! fits, log-factorials, and grids.

/// log(sum(exp(v))) with max-shifting. Returns -inf for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Streaming variant over an iterator of (log_term, multiplicity-weight in
/// log space is not needed here) -- kept for call sites that never
/// materialize the term list.
pub fn log_sum_exp_iter<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Least-squares affine fit y = intercept + slope * x.
///
/// Returns (intercept, slope, max_abs_residual). Requires at least one
/// point; a single point fits exactly with zero slope.
pub fn affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(!xs.is_empty());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let max_resid = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0_f64, f64::max);
    (intercept, slope, max_resid)
}

/// Table of ln(k!) built by summation; exact to ~1e-13 relative error,
/// which is far below every tolerance that consumes it.
pub struct LnFactorial {
    table: Vec<f64>,
}

impl LnFactorial {
    pub fn up_to(n: usize) -> Self {
        let mut table = Vec::with_capacity(n + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).ln();
            table.push(acc);
        }
        LnFactorial { table }
    }

    pub fn ln_factorial(&self, k: usize) -> f64 {
        self.table[k]
    }

    /// ln C(n, k)
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.table[n] - self.table[k] - self.table[n - k]
    }
}

/// `count` evenly spaced points, endpoints included (count >= 2) or the
/// midpoint for count == 1.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 1);
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(|i| lo + step * i as f64).collect()
}

/// Interior grid: `count` midpoints of an even subdivision, never touching
/// the endpoints. Useful for itinerary scans that must avoid branch joints.
pub fn interior_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / count as f64;
    (0..count).map(|i| lo + step * (i as f64 + 0.5)).collect()
}
