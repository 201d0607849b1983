//! Small numerical helpers shared by the refinement and scaling studies.

/// Least-squares slope of `log y` against `log x`.
///
/// Pairs with a non-positive coordinate are skipped; `NaN` if fewer than two
/// pairs remain.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Observed convergence order from errors measured at spacings `h`.
pub fn observed_order(h: &[f64], err: &[f64]) -> f64 {
    log_log_slope(h, err)
}

/// Pairwise orders `log(e_i/e_{i+1}) / log(h_i/h_{i+1})`.
pub fn pairwise_orders(h: &[f64], err: &[f64]) -> Vec<f64> {
    h.windows(2)
        .zip(err.windows(2))
        .map(|(hh, ee)| (ee[0] / ee[1]).ln() / (hh[0] / hh[1]).ln())
        .collect()
}
