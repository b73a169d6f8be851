//! Small statistics helpers: least-squares line fits and sample moments.

/// Ordinary least-squares fit `y = intercept + slope * x`.
/// Returns `None` for fewer than two distinct abscissae.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let sxx: f64 = x[..n].iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x[..n].iter().zip(&y[..n]).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Decay order of `values[i] ~ c * base^(-order * levels[i])`, fitted on
/// the logarithm. Nonpositive values are skipped.
pub fn decay_order(levels: &[f64], values: &[f64], base: f64) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(l, v)| (*l, v.ln() / base.ln()))
        .unzip();
    linear_fit(&x, &y).map(|(_, slope)| -slope)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
