use crate::error::{Error, Result};

/// Min-max normalize a curve onto [0, 1]; a constant curve maps to zeros.
pub fn normalize_curve(curve: &[f64]) -> Vec<f64> {
    let min = curve.iter().copied().fold(f64::INFINITY, f64::min);
    let max = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    curve
        .iter()
        .map(|&v| if span > 0.0 { (v - min) / span } else { 0.0 })
        .collect()
}

/// Normalize each curve, then average point-wise over the curves that
/// reach each epoch.
pub fn normalize_and_average_curves(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    if curves.is_empty() {
        return Err(Error::InvalidInput("no curves to average".into()));
    }
    if let Some(c) = curves.iter().find(|c| c.len() < 2) {
        return Err(Error::InvalidInput(format!(
            "curve with {} points; need at least 2",
            c.len()
        )));
    }
    let normalized: Vec<Vec<f64>> = curves.iter().map(|c| normalize_curve(c)).collect();
    let len = normalized.iter().map(Vec::len).max().unwrap_or(0);
    Ok((0..len)
        .map(|e| {
            let vals: Vec<f64> = normalized.iter().filter_map(|c| c.get(e).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect())
}
