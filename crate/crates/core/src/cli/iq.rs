//! IQ recordings: interleaved little-endian f32 (I then Q) plus a JSON
//! sidecar with the same basename.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::modem::IqBuffer;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqMeta {
    pub sample_rate: f64,
    pub carrier_freq: f64,
    #[serde(default)]
    pub description: String,
    pub seed: Option<u64>,
    pub num_samples: usize,
}

/// Sidecar path for a data file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `buf` and its sidecar.
pub fn write_iq(path: &Path, buf: &IqBuffer, description: &str, seed: Option<u64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(buf.len() * 8);
    for s in buf.samples() {
        bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = IqMeta {
        sample_rate: buf.sample_rate(),
        carrier_freq: buf.carrier_freq(),
        description: description.to_string(),
        seed,
        num_samples: buf.len(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialize(e.to_string()))?;
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

/// Read a recording. Without a sidecar, `fallback_rate` supplies the sample
/// rate (with a warning); with neither the read fails.
pub fn read_iq(path: &Path, fallback_rate: Option<f64>) -> Result<(IqBuffer, Option<IqMeta>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedIq(
            path.to_path_buf(),
            format!("{} bytes is not a whole number of f32 values", bytes.len()),
        ));
    }
    if (bytes.len() / 4) % 2 != 0 {
        return Err(Error::MalformedIq(
            path.to_path_buf(),
            "odd number of floats (truncated I/Q pair)".into(),
        ));
    }
    let side = sidecar_path(path);
    let meta: Option<IqMeta> = match std::fs::read_to_string(&side) {
        Ok(text) => Some(
            serde_json::from_str(&text)
                .map_err(|e| Error::MalformedIq(side.clone(), e.to_string()))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&side, e)),
    };
    let (rate, carrier) = match &meta {
        Some(m) => (m.sample_rate, m.carrier_freq),
        None => {
            let rate = fallback_rate.ok_or_else(|| {
                Error::MalformedIq(
                    path.to_path_buf(),
                    "metadata sidecar missing and no sample rate supplied".into(),
                )
            })?;
            log::warn!("{}: no sidecar, assuming {rate} S/s", path.display());
            (rate, crate::modem::DEFAULT_CARRIER_HZ)
        }
    };
    let samples: Vec<Complex64> = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    if let Some(m) = &meta {
        if m.num_samples != samples.len() {
            return Err(Error::MalformedIq(
                path.to_path_buf(),
                format!("sidecar says {} samples, file has {}", m.num_samples, samples.len()),
            ));
        }
    }
    Ok((IqBuffer::with_carrier(samples, rate, carrier)?, meta))
}
