//! QPSK transmitter: payload generation, Gray mapping and RRC pulse shaping.
//!
//! Bits are NRZ-coded per rail (0 -> +1, 1 -> -1). The first bit of each pair
//! drives the quadrature rail and the second bit the in-phase rail, which
//! yields the Gray sequence 00, 01, 11, 10 around the unit circle:
//!
//! | bits | symbol           |
//! |------|------------------|
//! | 00   | (+1 + j) / sqrt2 |
//! | 01   | (-1 + j) / sqrt2 |
//! | 11   | (-1 - j) / sqrt2 |
//! | 10   | (+1 - j) / sqrt2 |

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default carrier frequency, Hz. Metadata only; all processing is baseband.
pub const DEFAULT_CARRIER_HZ: f64 = 2.1e9;

/// Galois feedback masks (right-shift form) for maximal-length LFSRs.
const PRIMITIVE_TAPS: [u32; 15] = [
    0x3, 0x6, 0xC, 0x14, 0x30, 0x60, 0xB8, 0x110, 0x240, 0x500, 0xE08, 0x1C80, 0x3802, 0x6000,
    0xD008,
];

/// A complex baseband sample sequence with its sample rate and carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    samples: Vec<Complex64>,
    sample_rate: f64,
    carrier_freq: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        Self::with_carrier(samples, sample_rate, DEFAULT_CARRIER_HZ)
    }

    pub fn with_carrier(samples: Vec<Complex64>, sample_rate: f64, carrier_freq: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!("sample rate {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::InvalidParameter(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            carrier_freq,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn carrier_freq(&self) -> f64 {
        self.carrier_freq
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Mean of |x|^2 over the whole buffer, 0 for an empty buffer.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Same metadata, new samples. Internal helper for stages that keep the
    /// rate and carrier.
    pub(crate) fn map_samples(&self, samples: Vec<Complex64>) -> IqBuffer {
        IqBuffer {
            samples,
            sample_rate: self.sample_rate,
            carrier_freq: self.carrier_freq,
        }
    }

    /// Buffer scaled by a linear amplitude factor.
    pub fn scaled(&self, amplitude: f64) -> IqBuffer {
        self.map_samples(self.samples.iter().map(|s| s * amplitude).collect())
    }
}

/// An ordered bit sequence (each element 0 or 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    bits: Vec<u8>,
}

impl Payload {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidParameter(format!("bit {i} is not 0 or 1")));
        }
        Ok(Self { bits })
    }

    /// Parse a hex string, most significant bit first, keeping `nbits` bits.
    pub fn from_hex(hex: &str, nbits: usize) -> Result<Self> {
        let digits: Vec<u32> = hex
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| {
                c.to_digit(16)
                    .ok_or_else(|| Error::InvalidParameter(format!("invalid hex digit {c:?}")))
            })
            .collect::<Result<_>>()?;
        if digits.len() * 4 < nbits {
            return Err(Error::InvalidParameter(format!(
                "{} hex digits cannot supply {nbits} bits",
                digits.len()
            )));
        }
        let bits = digits
            .iter()
            .flat_map(|d| (0..4).rev().map(move |k| ((d >> k) & 1) as u8))
            .take(nbits)
            .collect();
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// The payload repeated `n` times back to back.
    pub fn repeated(&self, n: usize) -> Payload {
        Payload {
            bits: self.bits.repeat(n),
        }
    }
}

/// Transmitter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModemParams {
    pub sample_rate: f64,
    /// Samples per symbol.
    pub sps: usize,
    pub rolloff: f64,
    /// RRC half-support in symbols.
    pub rrc_span_symbols: usize,
    /// Transmit gain, applied as a linear amplitude scale.
    pub tx_gain_db: f64,
}

impl Default for ModemParams {
    fn default() -> Self {
        Self {
            sample_rate: 250_000.0,
            sps: 4,
            rolloff: 0.35,
            rrc_span_symbols: 10,
            tx_gain_db: 53.6,
        }
    }
}

impl ModemParams {
    pub fn symbol_rate(&self) -> f64 {
        self.sample_rate / self.sps as f64
    }

    /// Occupied bandwidth of the RRC-shaped signal, (1 + rolloff) * symbol rate.
    pub fn occupied_bandwidth(&self) -> f64 {
        (1.0 + self.rolloff) * self.symbol_rate()
    }

    pub fn ntaps(&self) -> usize {
        2 * self.rrc_span_symbols * self.sps + 1
    }

    /// Delay in samples introduced by one RRC filter.
    pub fn group_delay(&self) -> usize {
        self.rrc_span_symbols * self.sps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rolloff {} outside (0, 1]",
                self.rolloff
            )));
        }
        if self.sps < 2 {
            return Err(Error::InvalidParameter(format!("sps {} < 2", self.sps)));
        }
        if self.rrc_span_symbols < 4 {
            return Err(Error::InvalidParameter(format!(
                "RRC span {} < 4 symbols",
                self.rrc_span_symbols
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!("sample rate {}", self.sample_rate)));
        }
        if !self.tx_gain_db.is_finite() {
            return Err(Error::InvalidParameter("tx gain must be finite".into()));
        }
        Ok(())
    }
}

/// Feedback mask for a maximal-length Galois LFSR of the given degree (2..=16).
pub fn primitive_taps(degree: u32) -> Option<u32> {
    (2..=16)
        .contains(&degree)
        .then(|| PRIMITIVE_TAPS[degree as usize - 2])
}

/// Bits from a right-shifting Galois LFSR. Each step emits the low bit and, if
/// it was set, XORs `taps` into the shifted state.
pub fn lfsr_generate(degree: u32, taps: u32, seed: u32, nbits: usize) -> Result<Payload> {
    if !(1..=32).contains(&degree) {
        return Err(Error::InvalidParameter(format!("LFSR degree {degree}")));
    }
    let mask = if degree == 32 { u32::MAX } else { (1u32 << degree) - 1 };
    let mut state = seed & mask;
    if state == 0 {
        return Err(Error::ZeroSeed);
    }
    let taps = taps & mask;
    let mut bits = Vec::with_capacity(nbits);
    for _ in 0..nbits {
        let out = state & 1;
        state >>= 1;
        if out == 1 {
            state ^= taps;
        }
        bits.push(out as u8);
    }
    Ok(Payload { bits })
}

/// Default payload source: degree-9 maximal LFSR seeded with 1.
pub fn default_payload(nbits: usize) -> Payload {
    lfsr_generate(9, PRIMITIVE_TAPS[7], 1, nbits).expect("nonzero seed")
}

#[inline]
fn nrz(bit: u8) -> f64 {
    if bit == 0 {
        FRAC_1_SQRT_2
    } else {
        -FRAC_1_SQRT_2
    }
}

pub fn qpsk_map(b0: u8, b1: u8) -> Complex64 {
    Complex64::new(nrz(b1), nrz(b0))
}

/// Map bit pairs onto unit-modulus QPSK symbols.
pub fn qpsk_modulate(payload: &Payload) -> Result<Vec<Complex64>> {
    if payload.len() % 2 != 0 {
        return Err(Error::OddPayload(payload.len()));
    }
    Ok(payload
        .bits
        .chunks_exact(2)
        .map(|p| qpsk_map(p[0], p[1]))
        .collect())
}

/// Hard quadrant decision. Zero components resolve toward bit 0.
pub fn qpsk_decide(s: Complex64) -> Complex64 {
    Complex64::new(
        if s.re >= 0.0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 },
        if s.im >= 0.0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 },
    )
}

/// Minimum-distance demodulation, inverse of [`qpsk_modulate`].
pub fn qpsk_demodulate(symbols: &[Complex64]) -> Payload {
    let mut bits = Vec::with_capacity(symbols.len() * 2);
    for s in symbols {
        bits.push(u8::from(s.im < 0.0));
        bits.push(u8::from(s.re < 0.0));
    }
    Payload { bits }
}

/// Root-raised-cosine impulse response at `t` symbol periods.
pub(crate) fn rrc_value(t: f64, rolloff: f64) -> f64 {
    let a = rolloff;
    if t.abs() < 1e-12 {
        return 1.0 - a + 4.0 * a / PI;
    }
    let edge = 1.0 / (4.0 * a);
    if (t.abs() - edge).abs() < 1e-9 {
        return a / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * (PI / (4.0 * a)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * a)).cos());
    }
    let num = (PI * t * (1.0 - a)).sin() + 4.0 * a * t * (PI * t * (1.0 + a)).cos();
    let den = PI * t * (1.0 - (4.0 * a * t).powi(2));
    num / den
}

/// Scale that brings the sampled RRC to unit energy.
pub(crate) fn rrc_norm(params: &ModemParams) -> f64 {
    let sps = params.sps as f64;
    let c = params.group_delay() as f64;
    let energy: f64 = (0..params.ntaps())
        .map(|k| rrc_value((k as f64 - c) / sps, params.rolloff).powi(2))
        .sum();
    1.0 / energy.sqrt()
}

/// Unit-energy, symmetric RRC taps of length `2 * span * sps + 1`.
pub fn rrc_taps(params: &ModemParams) -> Result<Vec<f64>> {
    params.validate()?;
    let sps = params.sps as f64;
    let c = params.group_delay() as f64;
    let norm = rrc_norm(params);
    let mut taps: Vec<f64> = (0..params.ntaps())
        .map(|k| rrc_value((k as f64 - c) / sps, params.rolloff) * norm)
        .collect();
    // exact symmetry
    let n = taps.len();
    for k in 0..n / 2 {
        let avg = 0.5 * (taps[k] + taps[n - 1 - k]);
        taps[k] = avg;
        taps[n - 1 - k] = avg;
    }
    Ok(taps)
}

/// Full linear convolution of complex samples with real taps.
pub(crate) fn convolve(x: &[Complex64], h: &[f64]) -> Vec<Complex64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![Complex64::new(0.0, 0.0); x.len() + h.len() - 1];
    for (i, xi) in x.iter().enumerate() {
        if xi.re == 0.0 && xi.im == 0.0 {
            continue;
        }
        for (k, hk) in h.iter().enumerate() {
            y[i + k] += xi * hk;
        }
    }
    y
}

/// Zero-stuff by `sps`, RRC filter and apply the transmit gain.
pub fn pulse_shape(symbols: &[Complex64], params: &ModemParams) -> Result<IqBuffer> {
    if symbols.is_empty() {
        return Err(Error::Empty);
    }
    let taps = rrc_taps(params)?;
    let mut up = vec![Complex64::new(0.0, 0.0); symbols.len() * params.sps];
    for (i, s) in symbols.iter().enumerate() {
        up[i * params.sps] = *s;
    }
    // drop the trailing sps-1 zeros so the length is sps*n + ntaps - 1
    up.truncate((symbols.len() - 1) * params.sps + 1);
    let mut y = convolve(&up, &taps);
    y.resize(symbols.len() * params.sps + taps.len() - 1, Complex64::new(0.0, 0.0));
    let gain = 10f64.powf(params.tx_gain_db / 20.0);
    if gain != 1.0 {
        y.iter_mut().for_each(|s| *s *= gain);
    }
    IqBuffer::new(y, params.sample_rate)
}

/// Modulate and shape a payload in one step.
pub fn transmit(payload: &Payload, params: &ModemParams) -> Result<IqBuffer> {
    pulse_shape(&qpsk_modulate(payload)?, params)
}
