//! Evaluation metrics: BER, SNR and delta-SNR, digital power level and
//! boxplot statistics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::modem::{IqBuffer, Payload};
use crate::{Error, Result};

/// Ceiling reported by [`estimate_snr`] for (near) noiseless input, dB.
pub const SNR_CEILING_DB: f64 = 60.0;
const SNR_FLOOR_DB: f64 = -60.0;

/// Minimum number of symbols [`estimate_snr`] accepts.
pub const MIN_SNR_SYMBOLS: usize = 100;

/// Default averaging window of the digital power level, samples.
pub const DEFAULT_POWER_WINDOW: usize = 1024;

/// Fraction of differing bits between two equal-length payloads.
pub fn ber(truth: &Payload, received: &Payload) -> Result<f64> {
    if truth.len() != received.len() {
        return Err(Error::LengthMismatch(truth.len(), received.len()));
    }
    if truth.is_empty() {
        return Err(Error::Empty);
    }
    let errors = truth
        .bits()
        .iter()
        .zip(received.bits())
        .filter(|(a, b)| a != b)
        .count();
    Ok(errors as f64 / truth.len() as f64)
}

/// Windowed mean of I^2 + Q^2 over consecutive non-overlapping windows of
/// `window_m` samples. A trailing partial window is averaged over its own
/// length.
pub fn digital_power(signal: &IqBuffer, window_m: usize) -> Result<Vec<f64>> {
    if window_m == 0 {
        return Err(Error::InvalidParameter("power window must be >= 1".into()));
    }
    Ok(signal
        .samples()
        .chunks(window_m)
        .map(|w| w.iter().map(|s| s.re * s.re + s.im * s.im).sum::<f64>() / w.len() as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// Error-vector estimate against known transmitted symbols.
    DataAided,
    /// Second/fourth moment (M2M4) estimate.
    Blind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub db: f64,
    pub mode: SnrMode,
}

fn clamp_db(ratio: f64) -> f64 {
    if !ratio.is_finite() || ratio <= 0.0 {
        return if ratio.is_nan() || ratio <= 0.0 { SNR_FLOOR_DB } else { SNR_CEILING_DB };
    }
    (10.0 * ratio.log10()).clamp(SNR_FLOOR_DB, SNR_CEILING_DB)
}

/// Symbol-level SNR estimate. Data-aided when `reference` is supplied (the
/// complex gain is fitted by least squares, then signal power is divided by
/// the mean squared residual), blind M2M4 otherwise.
pub fn estimate_snr(symbols: &[Complex64], reference: Option<&[Complex64]>) -> Result<SnrEstimate> {
    if symbols.len() < MIN_SNR_SYMBOLS {
        return Err(Error::TooShort {
            needed: MIN_SNR_SYMBOLS,
            got: symbols.len(),
        });
    }
    match reference {
        Some(r) => {
            if r.len() != symbols.len() {
                return Err(Error::LengthMismatch(symbols.len(), r.len()));
            }
            let rr: f64 = r.iter().map(|x| x.norm_sqr()).sum();
            if rr == 0.0 {
                return Err(Error::ZeroPower);
            }
            let yr: Complex64 = symbols.iter().zip(r).map(|(y, x)| y * x.conj()).sum();
            let g = yr / rr;
            let err: f64 = symbols.iter().zip(r).map(|(y, x)| (y - g * x).norm_sqr()).sum();
            let sig = g.norm_sqr() * rr;
            let ratio = if err == 0.0 { f64::INFINITY } else { sig / err };
            Ok(SnrEstimate {
                db: clamp_db(ratio),
                mode: SnrMode::DataAided,
            })
        }
        None => {
            let n = symbols.len() as f64;
            let m2 = symbols.iter().map(|y| y.norm_sqr()).sum::<f64>() / n;
            let m4 = symbols.iter().map(|y| y.norm_sqr().powi(2)).sum::<f64>() / n;
            if m2 == 0.0 {
                return Err(Error::ZeroPower);
            }
            let s = (2.0 * m2 * m2 - m4).max(0.0).sqrt();
            let noise = m2 - s;
            let ratio = if noise <= 1e-12 * m2 { f64::INFINITY } else { s / noise };
            Ok(SnrEstimate {
                db: clamp_db(ratio),
                mode: SnrMode::Blind,
            })
        }
    }
}

/// Five-number summary with 1.5 IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Quartiles by linear interpolation; whiskers at the most extreme values
/// within 1.5 IQR of the box; everything beyond is an outlier.
pub fn boxplot_stats(values: &[f64]) -> Result<PowerStats> {
    if values.len() < 5 {
        return Err(Error::TooShort {
            needed: 5,
            got: values.len(),
        });
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("NaN in boxplot input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let inside = || sorted.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence);
    let lower_whisker = inside().fold(f64::INFINITY, f64::min);
    let upper_whisker = inside().fold(f64::NEG_INFINITY, f64::max);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|v| *v < lo_fence || *v > hi_fence)
        .collect();
    Ok(PowerStats {
        median,
        q1,
        q3,
        lower_whisker,
        upper_whisker,
        outliers,
    })
}
