//! Error measures, residual statistics and evaluation sweeps.

mod csv_out;
mod eval;

pub use csv_out::{format_sig, write_csv, CsvTable};
pub use eval::{evaluate, noise_sweep, EvalOptions, EvalReport, SweepRow, EVAL_CHUNK};

use crate::error::{Error, Result};
use crate::field::Field;

/// Threshold separating the two Darcy coefficient levels 3 and 12.
pub const DARCY_THRESHOLD: f64 = 7.5;

/// `‖pred − truth‖₂ / ‖truth‖₂` for each batch item.
pub fn relative_l2_per_sample(pred: &Field, truth: &Field) -> Result<Vec<f64>> {
    pred.require_same_shape(truth, "relative L2")?;
    let per = truth.channels() * truth.plane_len();
    pred.data()
        .chunks(per)
        .zip(truth.data().chunks(per))
        .enumerate()
        .map(|(i, (p, t))| {
            let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("sample {i}: truth has zero norm")));
            }
            let diff = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            Ok(diff / norm)
        })
        .collect()
}

/// Mean of [`relative_l2_per_sample`].
pub fn relative_l2(pred: &Field, truth: &Field) -> Result<f64> {
    let per = relative_l2_per_sample(pred, truth)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Fraction of pixels on the wrong side of [`DARCY_THRESHOLD`].
pub fn darcy_error_rate(pred_a: &Field, truth_a: &Field) -> Result<f64> {
    pred_a.require_same_shape(truth_a, "Darcy error rate")?;
    let wrong = pred_a
        .data()
        .iter()
        .zip(truth_a.data())
        .filter(|(p, t)| (**p > DARCY_THRESHOLD) != (**t > DARCY_THRESHOLD))
        .count();
    Ok(wrong as f64 / truth_a.data().len() as f64)
}

/// Sample skewness `m₃/m₂^{3/2}` and excess kurtosis `m₄/m₂² − 3` of
/// `values`, with central moments `m_k` normalized by the count. Returns
/// `(0, 0)` when the values are (numerically) constant.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.len() < 2 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m2 <= (1e-14 * scale).powi(2) {
        return (0.0, 0.0);
    }
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// [`moments`] over every pixel of `r`.
pub fn residual_moments(r: &Field) -> (f64, f64) {
    moments(r.data())
}
