//! Software channel emulator.
//!
//! Each link is a sum of L taps. Tap `i` has constant amplitude `gain`, a
//! delay oscillating sinusoidally around `mean_delay`, and a phase that
//! advances linearly at its Doppler rate:
//!
//! ```text
//! tau_i(t) = mean_delay + delay_osc_amplitude * sin(2 pi delay_osc_rate t)
//! phi_i(t) = initial_phase + 2 pi doppler_hz t
//! y(t)     = sum_i gain_i * exp(j phi_i(t)) * x(t - tau_i(t)) + n(t)
//! ```
//!
//! Fractional delays use a 16-sample Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::interp;
use crate::modem::IqBuffer;
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Upper bound on realization length, in samples.
pub const MAX_REALIZATION_SAMPLES: u64 = 1 << 27;

/// Maximum number of taps per profile.
pub const MAX_TAPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelTap {
    /// Seconds.
    pub mean_delay: f64,
    /// Seconds.
    #[serde(default)]
    pub delay_osc_amplitude: f64,
    /// Hz.
    #[serde(default)]
    pub delay_osc_rate: f64,
    /// Linear amplitude.
    pub gain: f64,
    #[serde(default)]
    pub doppler_hz: f64,
    /// Radians at t = 0.
    #[serde(default)]
    pub initial_phase: f64,
}

impl ChannelTap {
    /// A tap with no oscillation, no Doppler and zero phase.
    pub fn fixed(mean_delay: f64, gain: f64) -> Self {
        Self {
            mean_delay,
            delay_osc_amplitude: 0.0,
            delay_osc_rate: 0.0,
            gain,
            doppler_hz: 0.0,
            initial_phase: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [
            self.mean_delay,
            self.delay_osc_amplitude,
            self.delay_osc_rate,
            self.gain,
            self.doppler_hz,
            self.initial_phase,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite tap parameter".into()));
        }
        if self.mean_delay < 0.0 {
            return Err(Error::InvalidParameter("negative tap delay".into()));
        }
        if self.delay_osc_amplitude.abs() > self.mean_delay {
            return Err(Error::InvalidParameter(
                "delay oscillation amplitude exceeds mean delay".into(),
            ));
        }
        if self.gain < 0.0 {
            return Err(Error::InvalidParameter("negative tap gain".into()));
        }
        Ok(())
    }
}

/// Declarative description of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    pub taps: Vec<ChannelTap>,
    /// SNR of the added noise relative to the noiseless channel output, dB.
    /// `None` means noiseless.
    #[serde(default)]
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
}

impl ChannelProfile {
    /// Single unit tap, no delay, no Doppler, no noise.
    pub fn identity() -> Self {
        Self {
            taps: vec![ChannelTap::fixed(0.0, 1.0)],
            noise_snr_db: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() || self.taps.len() > MAX_TAPS {
            return Err(Error::InvalidParameter(format!(
                "profile must have 1..={MAX_TAPS} taps, has {}",
                self.taps.len()
            )));
        }
        for t in &self.taps {
            t.validate()?;
        }
        if self.taps.windows(2).any(|w| w[1].mean_delay < w[0].mean_delay) {
            return Err(Error::InvalidParameter("taps must be sorted by mean delay".into()));
        }
        if let Some(snr) = self.noise_snr_db {
            if snr.is_nan() {
                return Err(Error::InvalidParameter("noise SNR is NaN".into()));
            }
        }
        Ok(())
    }

    pub fn max_delay(&self) -> f64 {
        self.taps
            .iter()
            .map(|t| t.mean_delay + t.delay_osc_amplitude.abs())
            .fold(0.0, f64::max)
    }
}

/// Relative motion of the two ends of a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkKinematics {
    /// m/s.
    pub relative_speed: f64,
    /// Radians between the direction of motion and the incoming wave.
    pub arrival_angle: f64,
    /// Hz.
    pub carrier_freq: f64,
}

/// Doppler shift `v / c * f_c * cos(angle)` in Hz.
pub fn doppler_shift(kin: &LinkKinematics) -> f64 {
    kin.relative_speed / SPEED_OF_LIGHT * kin.carrier_freq * kin.arrival_angle.cos()
}

/// Per-sample trajectory of one tap.
#[derive(Debug, Clone, PartialEq)]
pub struct TapTrajectory {
    pub gain: f64,
    /// Delay in samples at each output sample.
    pub delay_samples: Vec<f64>,
    /// Phase in radians at each output sample.
    pub phase: Vec<f64>,
}

/// A time-sampled channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    sample_rate: f64,
    taps: Vec<TapTrajectory>,
    noise_snr_db: Option<f64>,
    seed: u64,
}

impl ChannelRealization {
    pub fn len(&self) -> usize {
        self.taps.first().map_or(0, |t| t.phase.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn taps(&self) -> &[TapTrajectory] {
        &self.taps
    }

    pub fn max_delay_samples(&self) -> f64 {
        self.taps
            .iter()
            .flat_map(|t| t.delay_samples.iter().copied())
            .fold(0.0, f64::max)
    }
}

/// Sample the tap trajectories over `duration` seconds.
pub fn realize_channel(
    profile: &ChannelProfile,
    duration: f64,
    sample_rate: f64,
) -> Result<ChannelRealization> {
    profile.validate()?;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::InvalidParameter(format!("sample rate {sample_rate}")));
    }
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::InvalidParameter(format!("duration {duration}")));
    }
    let n = (duration * sample_rate).ceil();
    if n > MAX_REALIZATION_SAMPLES as f64 {
        return Err(Error::BufferTooLarge(n as u64, MAX_REALIZATION_SAMPLES));
    }
    let n = n as usize;
    let taps = profile
        .taps
        .iter()
        .map(|tap| {
            let mut delay_samples = Vec::with_capacity(n);
            let mut phase = Vec::with_capacity(n);
            for k in 0..n {
                let t = k as f64 / sample_rate;
                let tau = if tap.delay_osc_amplitude == 0.0 {
                    tap.mean_delay
                } else {
                    tap.mean_delay
                        + tap.delay_osc_amplitude * (2.0 * PI * tap.delay_osc_rate * t).sin()
                };
                delay_samples.push(tau * sample_rate);
                phase.push(tap.initial_phase + 2.0 * PI * tap.doppler_hz * t);
            }
            TapTrajectory {
                gain: tap.gain,
                delay_samples,
                phase,
            }
        })
        .collect();
    Ok(ChannelRealization {
        sample_rate,
        taps,
        noise_snr_db: profile.noise_snr_db,
        seed: profile.seed,
    })
}

/// Number of output samples [`apply_channel`] produces for a signal of
/// `signal_len` samples through `profile`.
pub fn output_len(profile: &ChannelProfile, signal_len: usize, sample_rate: f64) -> usize {
    signal_len + (profile.max_delay() * sample_rate).ceil() as usize
}

/// Realize `profile` over exactly the span [`apply_channel`] needs for `signal`.
pub fn realize_for(profile: &ChannelProfile, signal: &IqBuffer) -> Result<ChannelRealization> {
    let n = output_len(profile, signal.len(), signal.sample_rate());
    realize_channel(profile, n as f64 / signal.sample_rate(), signal.sample_rate())
}

/// Pass `signal` through a realization. The output extends past the input by
/// the largest tap delay so no delayed energy is dropped.
pub fn apply_channel(signal: &IqBuffer, real: &ChannelRealization) -> Result<IqBuffer> {
    if signal.sample_rate() != real.sample_rate {
        return Err(Error::SampleRateMismatch(signal.sample_rate(), real.sample_rate));
    }
    let out_len = signal.len() + real.max_delay_samples().ceil() as usize;
    if real.len() < out_len {
        return Err(Error::InvalidParameter(format!(
            "realization covers {} samples, signal needs {out_len}",
            real.len()
        )));
    }
    let x = signal.samples();
    let mut y = vec![Complex64::new(0.0, 0.0); out_len];
    for tap in &real.taps {
        if tap.gain == 0.0 {
            continue;
        }
        let mut sampler = interp::CachedSampler::default();
        for (n, yn) in y.iter_mut().enumerate() {
            let v = sampler.sample(x, n as f64 - tap.delay_samples[n]);
            let ph = tap.phase[n];
            let rot = if ph == 0.0 {
                Complex64::new(tap.gain, 0.0)
            } else {
                Complex64::from_polar(tap.gain, ph)
            };
            *yn += v * rot;
        }
    }
    let out = signal.map_samples(y);
    match real.noise_snr_db {
        Some(snr) if snr.is_finite() => add_awgn(&out, snr, real.seed),
        _ => Ok(out),
    }
}

/// Circular complex white Gaussian noise of the given power.
pub fn gaussian_noise(n: usize, power: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (power / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * sigma, im * sigma)
        })
        .collect()
}

/// Add white Gaussian noise at `snr_db` relative to the measured signal power.
/// `f64::INFINITY` returns the input untouched.
pub fn add_awgn(signal: &IqBuffer, snr_db: f64, seed: u64) -> Result<IqBuffer> {
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("SNR is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let p = signal.mean_power();
    if p <= 0.0 {
        return Err(Error::ZeroPower);
    }
    let noise_power = p / 10f64.powf(snr_db / 10.0);
    let noise = gaussian_noise(signal.len(), noise_power, seed);
    Ok(signal.map_samples(
        signal
            .samples()
            .iter()
            .zip(noise)
            .map(|(s, n)| s + n)
            .collect(),
    ))
}

/// Sample-wise sum of buffers, each starting at its offset in seconds
/// (rounded to the nearest sample).
pub fn superpose(components: &[(IqBuffer, f64)]) -> Result<IqBuffer> {
    let (first, _) = components.first().ok_or(Error::Empty)?;
    let fs = first.sample_rate();
    let mut placed = Vec::with_capacity(components.len());
    for (buf, offset) in components {
        if buf.sample_rate() != fs {
            return Err(Error::SampleRateMismatch(fs, buf.sample_rate()));
        }
        if !(offset.is_finite() && *offset >= 0.0) {
            return Err(Error::InvalidParameter(format!("start offset {offset}")));
        }
        placed.push(((offset * fs).round() as usize, buf));
    }
    let len = placed.iter().map(|(s, b)| s + b.len()).max().unwrap_or(0);
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    for (start, buf) in placed {
        for (yk, x) in y[start..].iter_mut().zip(buf.samples()) {
            *yk += x;
        }
    }
    Ok(first.map_samples(y))
}
