//! Synchronizing QPSK receivers.
//!
//! Two profiles share the same building blocks:
//!
//! - **Baseline**: matched filter, sampling at a known (or energy-estimated)
//!   offset, coarse 4th-power CFO removal, phase-rotation search, CMA
//!   equalizer, second-order DPLL (62.8 mrad), hard decisions.
//! - **Hardened**: polyphase matched-filter bank driven by a Gardner timing
//!   error detector, coarse CFO removal, phase-rotation search, DPLL at
//!   15.7 mrad, then a decision-directed LMS equalizer whose reference
//!   amplitude is the synchronizer's RSS. DD adaptation needs
//!   phase-coherent decisions, so it runs after the loop.
//!
//! Loop bandwidths are normalized to the symbol period (Bn * T).

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::interp;
use crate::metrics::{self, SnrEstimate};
use crate::modem::{self, rrc_norm, rrc_value, IqBuffer, ModemParams, Payload};
use crate::{Error, Result};

/// Baseline DPLL loop bandwidth, rad/symbol.
pub const BASELINE_LOOP_BW: f64 = 62.8e-3;
/// Hardened DPLL loop bandwidth, rad/symbol.
pub const HARDENED_LOOP_BW: f64 = 15.7e-3;

/// Gardner detector slope for power-normalized RRC/RC QPSK at alpha 0.35,
/// per symbol of timing error (measured on a frozen loop).
const GARDNER_GAIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverProfile {
    Baseline,
    Hardened,
}

impl std::fmt::Display for ReceiverProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReceiverProfile::Baseline => "baseline",
            ReceiverProfile::Hardened => "hardened",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizerKind {
    Cma,
    DdLms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingOffset {
    /// Channel delay in samples, supplied by an oracle.
    Known(f64),
    /// Pick the sampling phase that maximizes matched-filter output energy.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub profile: ReceiverProfile,
    pub n_phase_branches: usize,
    /// Normalized loop noise bandwidth, rad/symbol.
    pub dpll_loop_bw: f64,
    pub dpll_damping: f64,
    pub equalizer: EqualizerKind,
    pub eq_taps: usize,
    pub eq_step: f64,
    pub polyphase_branches: usize,
    /// Normalized TED loop bandwidth (hardened only).
    pub ted_loop_bw: f64,
    pub sampling_offset: SamplingOffset,
    /// Symbols scored by the phase search.
    pub pilot_symbols: usize,
    /// Symbols used by the coarse CFO estimate (0 disables it).
    pub acquisition_symbols: usize,
    /// Leading symbols excluded from BER and SNR.
    pub warmup_symbols: usize,
    /// Trailing symbols excluded from BER and SNR.
    pub guard_symbols: usize,
}

impl ReceiverConfig {
    pub fn baseline() -> Self {
        Self {
            profile: ReceiverProfile::Baseline,
            n_phase_branches: 32,
            dpll_loop_bw: BASELINE_LOOP_BW,
            dpll_damping: std::f64::consts::FRAC_1_SQRT_2,
            equalizer: EqualizerKind::Cma,
            eq_taps: 11,
            eq_step: 1e-3,
            polyphase_branches: 32,
            ted_loop_bw: 0.01,
            sampling_offset: SamplingOffset::Estimated,
            pilot_symbols: 64,
            acquisition_symbols: 96,
            warmup_symbols: 200,
            guard_symbols: 4,
        }
    }

    pub fn hardened() -> Self {
        Self {
            profile: ReceiverProfile::Hardened,
            dpll_loop_bw: HARDENED_LOOP_BW,
            equalizer: EqualizerKind::DdLms,
            eq_step: 5e-3,
            ..Self::baseline()
        }
    }

    pub fn for_profile(profile: ReceiverProfile) -> Self {
        match profile {
            ReceiverProfile::Baseline => Self::baseline(),
            ReceiverProfile::Hardened => Self::hardened(),
        }
    }

    pub fn with_known_offset(mut self, delay_samples: f64) -> Self {
        self.sampling_offset = SamplingOffset::Known(delay_samples);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.dpll_loop_bw > 0.0 && self.dpll_loop_bw.is_finite()) {
            return bad("DPLL loop bandwidth must be > 0");
        }
        if !(self.dpll_damping > 0.0) {
            return bad("DPLL damping must be > 0");
        }
        if self.n_phase_branches < 2 {
            return bad("need at least 2 phase branches");
        }
        if self.eq_taps % 2 == 0 {
            return bad("equalizer length must be odd");
        }
        if !(self.eq_step > 0.0) {
            return bad("equalizer step must be > 0");
        }
        if self.polyphase_branches < 2 {
            return bad("need at least 2 polyphase branches");
        }
        if !(self.ted_loop_bw > 0.0) {
            return bad("TED loop bandwidth must be > 0");
        }
        if self.pilot_symbols == 0 {
            return bad("pilot window must be nonempty");
        }
        Ok(())
    }
}

/// Per-symbol receiver diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RxDiagnostics {
    pub cfo_estimate_trace: Vec<f64>,
    pub timing_error_trace: Vec<f64>,
    pub eq_error_trace: Vec<f64>,
    pub selected_phase_branch: usize,
    pub phase_search_score: f64,
    pub coarse_cfo_hz: f64,
    pub lock_flag: bool,
}

// ---------------------------------------------------------------------------
// phase search

#[derive(Debug, Clone)]
pub struct PhaseSearch {
    pub best_branch: usize,
    /// Mean distance to the nearest constellation point at the best branch,
    /// after unit-RMS normalization of the pilot window.
    pub score: f64,
    pub rotated: IqBuffer,
}

/// Score above which the phase search is considered to have found no QPSK
/// signal.
pub const LOCK_SCORE_THRESHOLD: f64 = 0.3;

fn pilot_score(pilot: &[Complex64], rot: Complex64) -> f64 {
    pilot
        .iter()
        .map(|s| {
            let r = s * rot;
            (r - modem::qpsk_decide(r)).norm()
        })
        .sum::<f64>()
        / pilot.len() as f64
}

/// Try `n_branches` uniformly spaced rotations 2 pi k / n and keep the one
/// whose first `pilot_len` samples sit closest to the QPSK grid. The buffer is
/// treated as symbol-spaced. Ties go to the lowest index.
pub fn differential_phase_search(
    signal: &IqBuffer,
    n_branches: usize,
    pilot_len: usize,
) -> Result<PhaseSearch> {
    if signal.is_empty() {
        return Err(Error::Empty);
    }
    if n_branches < 2 {
        return Err(Error::InvalidParameter("need at least 2 phase branches".into()));
    }
    let n = pilot_len.min(signal.len()).max(1);
    let raw = &signal.samples()[..n];
    let rms = (raw.iter().map(|s| s.norm_sqr()).sum::<f64>() / n as f64).sqrt();
    let pilot: Vec<Complex64> = if rms > 0.0 {
        raw.iter().map(|s| s / rms).collect()
    } else {
        raw.to_vec()
    };
    let mut best = (0usize, f64::INFINITY);
    for k in 0..n_branches {
        let rot = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n_branches as f64);
        let score = pilot_score(&pilot, rot);
        if score < best.1 - 1e-9 {
            best = (k, score);
        }
    }
    let rot = Complex64::from_polar(1.0, 2.0 * PI * best.0 as f64 / n_branches as f64);
    let rotated = signal.map_samples(signal.samples().iter().map(|s| s * rot).collect());
    Ok(PhaseSearch {
        best_branch: best.0,
        score: best.1,
        rotated,
    })
}

// ---------------------------------------------------------------------------
// matched filter and timing

#[derive(Debug, Clone)]
pub struct MatchedOutput {
    pub buffer: IqBuffer,
    /// Samples of delay added by the filter.
    pub group_delay: usize,
}

/// Full convolution with the transmitter's RRC taps.
pub fn matched_filter(signal: &IqBuffer, params: &ModemParams) -> Result<MatchedOutput> {
    if signal.sample_rate() != params.sample_rate {
        return Err(Error::SampleRateMismatch(signal.sample_rate(), params.sample_rate));
    }
    let taps = modem::rrc_taps(params)?;
    Ok(MatchedOutput {
        buffer: signal.map_samples(modem::convolve(signal.samples(), &taps)),
        group_delay: params.group_delay(),
    })
}

#[derive(Debug, Clone)]
pub struct TimingOutput {
    pub symbols: Vec<Complex64>,
    /// Timing error estimate per symbol, in symbols. Zero for open-loop modes.
    pub timing_error_trace: Vec<f64>,
    /// Strobe positions in matched-filter output coordinates.
    pub strobes: Vec<f64>,
}

/// Interpolating matched-filter bank: branch `p` is the RRC advanced by
/// `p / P` of a sample. Branch 0 equals [`modem::rrc_taps`].
struct PolyphaseBank {
    branches: Vec<Vec<f64>>,
}

impl PolyphaseBank {
    fn new(params: &ModemParams, n_branches: usize) -> Self {
        let sps = params.sps as f64;
        let gd = params.group_delay() as f64;
        let norm = rrc_norm(params);
        let ntaps = params.ntaps();
        let branches = (0..n_branches)
            .map(|p| {
                let f = p as f64 / n_branches as f64;
                (0..ntaps)
                    .map(|j| rrc_value((j as f64 + f - gd) / sps, params.rolloff) * norm)
                    .collect()
            })
            .collect();
        Self { branches }
    }

    /// Matched-filter output at fractional position `t` (nearest branch).
    fn output(&self, x: &[Complex64], t: f64) -> Complex64 {
        let p_count = self.branches.len();
        let mut m = t.floor();
        let mut p = ((t - m) * p_count as f64).round() as usize;
        if p == p_count {
            p = 0;
            m += 1.0;
        }
        let m = m as i64;
        let h = &self.branches[p];
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, hj) in h.iter().enumerate() {
            let idx = m - j as i64;
            if idx < 0 {
                break;
            }
            if let Some(v) = x.get(idx as usize) {
                acc += v * hj;
            }
        }
        acc
    }
}

/// Sampling phase in [0, sps) that maximizes mean strobe energy over the first
/// symbols, searched on a 1/8-sample grid.
fn energy_phase(sample: impl Fn(f64) -> Complex64, sps: usize, base: f64, nsym: usize) -> f64 {
    let steps = sps * 8;
    let mut best = (0.0, f64::NEG_INFINITY);
    for s in 0..steps {
        let phi = s as f64 / 8.0;
        let e: f64 = (0..nsym)
            .map(|k| sample(base + phi + (k * sps) as f64).norm_sqr())
            .sum();
        if e > best.1 + 1e-12 * e.abs() {
            best = (phi, e);
        }
    }
    best.0
}

fn loop_gains(bw: f64, zeta: f64) -> (f64, f64) {
    let theta = bw / (zeta + 0.25 / zeta);
    let d = 1.0 + 2.0 * zeta * theta + theta * theta;
    (4.0 * zeta * theta / d, 4.0 * theta * theta / d)
}

/// Symbol timing recovery.
///
/// Baseline expects a matched-filtered buffer and samples it open-loop.
/// Hardened expects the raw shaped signal and runs the polyphase bank with a
/// Gardner TED loop, initialized from the energy-maximizing phase.
pub fn recover_timing(
    signal: &IqBuffer,
    cfg: &ReceiverConfig,
    params: &ModemParams,
) -> Result<TimingOutput> {
    let sps = params.sps;
    if signal.len() < sps {
        return Err(Error::TooShort {
            needed: sps,
            got: signal.len(),
        });
    }
    let gd = params.group_delay() as f64;
    let x = signal.samples();
    match cfg.profile {
        ReceiverProfile::Baseline => {
            // strobes must keep full pulse support inside the raw input
            let last = x.len() as f64 - 1.0 - 2.0 * gd;
            let start = match cfg.sampling_offset {
                SamplingOffset::Known(d) => 2.0 * gd + d,
                SamplingOffset::Estimated => {
                    let nsym = ((last - 2.0 * gd) / sps as f64).max(1.0).min(128.0) as usize;
                    2.0 * gd + energy_phase(|t| interp::sample_at(x, t), sps, 2.0 * gd, nsym)
                }
            };
            let mut symbols = Vec::new();
            let mut sampler = interp::CachedSampler::default();
            let mut t = start;
            while t <= last {
                symbols.push(sampler.sample(x, t));
                t += sps as f64;
            }
            if symbols.is_empty() {
                return Err(Error::TooShort {
                    needed: (start + 1.0) as usize,
                    got: x.len(),
                });
            }
            let n = symbols.len();
            Ok(TimingOutput {
                symbols,
                timing_error_trace: vec![0.0; n],
                strobes: (0..n).map(|k| start + (k * sps) as f64).collect(),
            })
        }
        ReceiverProfile::Hardened => {
            let bank = PolyphaseBank::new(params, cfg.polyphase_branches);
            let last = x.len() as f64 - 1.0;
            let nsym = ((last - 2.0 * gd) / sps as f64).max(1.0).min(128.0) as usize;
            let mut tau = 2.0 * gd
                + match cfg.sampling_offset {
                    SamplingOffset::Known(d) => d,
                    SamplingOffset::Estimated => {
                        energy_phase(|t| bank.output(x, t), sps, 2.0 * gd, nsym)
                    }
                };
            let (kp, ki) = loop_gains(cfg.ted_loop_bw, cfg.dpll_damping);
            let half = sps as f64 / 2.0;
            let mut integ = 0.0;
            let mut prev = Complex64::new(0.0, 0.0);
            let mut power = 0.0;
            let mut symbols = Vec::new();
            let mut trace = Vec::new();
            let mut strobes = Vec::new();
            while tau <= last {
                strobes.push(tau);
                let y = bank.output(x, tau);
                let mid = bank.output(x, tau - half);
                let p = y.norm_sqr();
                power = if symbols.is_empty() { p } else { 0.98 * power + 0.02 * p };
                // positive when the strobe is late
                let err = if symbols.is_empty() || power <= 0.0 {
                    0.0
                } else {
                    (mid * (y - prev).conj()).re / (power * GARDNER_GAIN)
                };
                trace.push(err);
                symbols.push(y);
                prev = y;
                integ += ki * err;
                tau += sps as f64 * (1.0 - kp * err - integ);
            }
            Ok(TimingOutput {
                symbols,
                timing_error_trace: trace,
                strobes,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// carrier recovery

/// Coarse CFO in Hz from the 4th-power spectrum of the first `n` symbols.
pub fn coarse_cfo(symbols: &[Complex64], n: usize, symbol_rate: f64) -> f64 {
    let n = n.min(symbols.len());
    if n < 8 {
        return 0.0;
    }
    let nfft = 16384;
    let mut buf: Vec<Complex64> = symbols[..n].iter().map(|s| s.powi(4)).collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    fft.process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|c| c.norm_sqr()).collect();
    let (k, _) = mag
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &m)| if m > b.1 { (i, m) } else { b });
    let at = |i: isize| mag[i.rem_euclid(nfft as isize) as usize];
    let (a, b, c) = (at(k as isize - 1), at(k as isize), at(k as isize + 1));
    let den = a - 2.0 * b + c;
    let delta = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    let mut bin = k as f64 + delta;
    if bin > nfft as f64 / 2.0 {
        bin -= nfft as f64;
    }
    bin / nfft as f64 / 4.0 * symbol_rate
}

fn derotate(symbols: &[Complex64], freq_hz: f64, symbol_rate: f64) -> Vec<Complex64> {
    if freq_hz == 0.0 {
        return symbols.to_vec();
    }
    let w = 2.0 * PI * freq_hz / symbol_rate;
    symbols
        .iter()
        .enumerate()
        .map(|(k, s)| s * Complex64::from_polar(1.0, -w * k as f64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DpllOutput {
    pub corrected: Vec<Complex64>,
    /// Frequency estimate per symbol, Hz.
    pub freq_trace_hz: Vec<f64>,
    /// Phase detector output per symbol, rad.
    pub phase_error: Vec<f64>,
}

/// Second-order (PI) decision-directed QPSK phase-locked loop.
pub fn dpll_cfo_correct(
    symbols: &[Complex64],
    cfg: &ReceiverConfig,
    symbol_rate: f64,
) -> Result<DpllOutput> {
    if symbols.is_empty() {
        return Err(Error::Empty);
    }
    cfg.validate()?;
    let (kp, ki) = loop_gains(cfg.dpll_loop_bw, cfg.dpll_damping);
    let to_hz = symbol_rate / (2.0 * PI);
    let mut phase = 0.0f64;
    let mut integ = 0.0f64;
    let mut corrected = Vec::with_capacity(symbols.len());
    let mut freq = Vec::with_capacity(symbols.len());
    let mut perr = Vec::with_capacity(symbols.len());
    for s in symbols {
        let z = s * Complex64::from_polar(1.0, -phase);
        let d = modem::qpsk_decide(z);
        let e = if z.norm_sqr() > 0.0 { (z * d.conj()).arg() } else { 0.0 };
        integ += ki * e;
        phase = (phase + kp * e + integ).rem_euclid(2.0 * PI);
        corrected.push(z);
        freq.push(integ * to_hz);
        perr.push(e);
    }
    Ok(DpllOutput {
        corrected,
        freq_trace_hz: freq,
        phase_error: perr,
    })
}

/// First index after which `trace` stays within `tol` of `target`, or `None`.
pub fn convergence_index(trace: &[f64], target: f64, tol: f64) -> Option<usize> {
    let last_bad = trace.iter().rposition(|v| (v - target).abs() >= tol);
    match last_bad {
        None => Some(0),
        Some(i) if i + 1 < trace.len() => Some(i + 1),
        Some(_) => None,
    }
}

// ---------------------------------------------------------------------------
// equalizer

#[derive(Debug, Clone)]
pub struct EqOutput {
    pub symbols: Vec<Complex64>,
    pub error_trace: Vec<f64>,
    pub taps: Vec<Complex64>,
}

/// Symbol-spaced adaptive FIR, center-spike initialized.
///
/// CMA minimizes (|y|^2 - 1)^2. DD-LMS drives y toward the hard decision
/// scaled by a running RSS estimate of its input; the error therefore only
/// shrinks when decisions are phase-coherent.
pub fn equalize(symbols: &[Complex64], cfg: &ReceiverConfig) -> Result<EqOutput> {
    if cfg.eq_taps % 2 == 0 {
        return Err(Error::InvalidParameter("equalizer length must be odd".into()));
    }
    if !(cfg.eq_step > 0.0) {
        return Err(Error::InvalidParameter("equalizer step must be > 0".into()));
    }
    let ntaps = cfg.eq_taps;
    let c = ntaps / 2;
    let mut w = vec![Complex64::new(0.0, 0.0); ntaps];
    w[c] = Complex64::new(1.0, 0.0);
    let mu = cfg.eq_step;
    let zero = Complex64::new(0.0, 0.0);
    let at = |i: isize| -> Complex64 {
        if i < 0 || i as usize >= symbols.len() {
            zero
        } else {
            symbols[i as usize]
        }
    };
    let mut rss = 1.0;
    let mut out = Vec::with_capacity(symbols.len());
    let mut trace = Vec::with_capacity(symbols.len());
    let mut window = vec![zero; ntaps];
    for n in 0..symbols.len() {
        for (k, slot) in window.iter_mut().enumerate() {
            *slot = at(n as isize + c as isize - k as isize);
        }
        let y: Complex64 = w.iter().zip(&window).map(|(a, b)| a * b).sum();
        match cfg.equalizer {
            EqualizerKind::Cma => {
                let disp = y.norm_sqr() - 1.0;
                let g = y * disp;
                for (wk, xk) in w.iter_mut().zip(&window) {
                    *wk -= mu * g * xk.conj();
                }
                trace.push(disp * disp);
            }
            EqualizerKind::DdLms => {
                rss = 0.99 * rss + 0.01 * symbols[n].norm();
                let d = modem::qpsk_decide(y) * rss;
                let e = d - y;
                for (wk, xk) in w.iter_mut().zip(&window) {
                    *wk += mu * e * xk.conj();
                }
                trace.push(e.norm_sqr());
            }
        }
        out.push(y);
    }
    Ok(EqOutput {
        symbols: out,
        error_trace: trace,
        taps: w,
    })
}

// ---------------------------------------------------------------------------
// full chain

/// BER of a recovered stream against a repeating payload, after the best
/// cyclic alignment and QPSK quadrant rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerAlignment {
    pub errors: usize,
    pub total: usize,
    /// Bit offset into the payload of the first recovered bit.
    pub offset: usize,
    /// Quarter turns applied to the recovered symbols.
    pub rotation: usize,
}

impl BerAlignment {
    pub fn ber(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.errors as f64 / self.total as f64
        }
    }
}

fn quarter_turn(s: Complex64, r: usize) -> Complex64 {
    match r % 4 {
        0 => s,
        1 => Complex64::new(-s.im, s.re),
        2 => -s,
        _ => Complex64::new(s.im, -s.re),
    }
}

/// Find the symbol-aligned cyclic offset and quarter-turn rotation that
/// minimizes bit errors against `truth`.
pub fn align_to_truth(symbols: &[Complex64], truth: &Payload) -> Result<BerAlignment> {
    if truth.is_empty() || truth.len() % 2 != 0 {
        return Err(Error::OddPayload(truth.len()));
    }
    let t = truth.bits();
    let l = t.len();
    let mut best = BerAlignment {
        errors: usize::MAX,
        total: symbols.len() * 2,
        offset: 0,
        rotation: 0,
    };
    for r in 0..4 {
        let rotated: Vec<Complex64> = symbols.iter().map(|s| quarter_turn(*s, r)).collect();
        let bits = modem::qpsk_demodulate(&rotated);
        let bits = bits.bits();
        for off in (0..l).step_by(2) {
            let mut errors = 0usize;
            let mut idx = off;
            for b in bits {
                errors += usize::from(*b != t[idx]);
                idx += 1;
                if idx == l {
                    idx = 0;
                }
                if errors >= best.errors {
                    break;
                }
            }
            if errors < best.errors {
                best = BerAlignment {
                    errors,
                    total: bits.len(),
                    offset: off,
                    rotation: r,
                };
            }
        }
    }
    if symbols.is_empty() {
        best.errors = 0;
    }
    Ok(best)
}

/// Output of [`receive`].
#[derive(Debug, Clone)]
pub struct Reception {
    /// Bits recovered from the evaluated window (after warmup, before guard),
    /// quadrant-corrected when a truth payload was supplied.
    pub payload: Payload,
    /// Soft symbols of the evaluated window.
    pub symbols: Vec<Complex64>,
    pub diagnostics: RxDiagnostics,
    pub alignment: Option<BerAlignment>,
    pub snr: Option<SnrEstimate>,
}

impl Reception {
    pub fn ber(&self) -> Option<f64> {
        self.alignment.map(|a| a.ber())
    }
}

/// Scale every symbol so the first `span` symbols have unit RMS.
fn normalize_rms(symbols: &mut [Complex64], span: usize) {
    let span = span.clamp(1, symbols.len().max(1)).min(symbols.len());
    if span == 0 {
        return;
    }
    let rms = (symbols[..span].iter().map(|s| s.norm_sqr()).sum::<f64>() / span as f64).sqrt();
    if rms > 0.0 {
        symbols.iter_mut().for_each(|s| *s /= rms);
    }
}

/// Full receive chain. When `truth` is given the BER is computed against the
/// repeating payload and the SNR is data-aided; otherwise the SNR is blind.
pub fn receive(
    signal: &IqBuffer,
    cfg: &ReceiverConfig,
    params: &ModemParams,
    truth: Option<&Payload>,
) -> Result<Reception> {
    cfg.validate()?;
    params.validate()?;
    if signal.sample_rate() != params.sample_rate {
        return Err(Error::SampleRateMismatch(signal.sample_rate(), params.sample_rate));
    }
    let rs = params.symbol_rate();

    let timing = match cfg.profile {
        ReceiverProfile::Baseline => {
            let mf = matched_filter(signal, params)?;
            recover_timing(&mf.buffer, cfg, params)?
        }
        ReceiverProfile::Hardened => recover_timing(signal, cfg, params)?,
    };
    let mut syms = timing.symbols;
    let n = syms.len();
    let eval_end = n.saturating_sub(cfg.guard_symbols);
    normalize_rms(&mut syms, eval_end);

    let coarse = if cfg.acquisition_symbols > 0 {
        coarse_cfo(&syms, cfg.acquisition_symbols, rs)
    } else {
        0.0
    };
    let syms = derotate(&syms, coarse, rs);

    let search = differential_phase_search(
        &IqBuffer::new(syms, rs)?,
        cfg.n_phase_branches,
        cfg.pilot_symbols,
    )?;
    let syms = search.rotated.into_samples();

    let (out, eq_trace, freq_trace, phase_err) = match cfg.equalizer {
        EqualizerKind::Cma => {
            let eq = equalize(&syms, cfg)?;
            let pll = dpll_cfo_correct(&eq.symbols, cfg, rs)?;
            (pll.corrected, eq.error_trace, pll.freq_trace_hz, pll.phase_error)
        }
        EqualizerKind::DdLms => {
            let pll = dpll_cfo_correct(&syms, cfg, rs)?;
            let eq = equalize(&pll.corrected, cfg)?;
            (eq.symbols, eq.error_trace, pll.freq_trace_hz, pll.phase_error)
        }
    };

    let tail = &phase_err[phase_err.len().saturating_sub(100)..];
    let pe_rms = (tail.iter().map(|e| e * e).sum::<f64>() / tail.len().max(1) as f64).sqrt();
    let diagnostics = RxDiagnostics {
        cfo_estimate_trace: freq_trace.iter().map(|f| f + coarse).collect(),
        timing_error_trace: timing.timing_error_trace,
        eq_error_trace: eq_trace,
        selected_phase_branch: search.best_branch,
        phase_search_score: search.score,
        coarse_cfo_hz: coarse,
        lock_flag: search.score < LOCK_SCORE_THRESHOLD && pe_rms < 0.25,
    };

    let start = cfg.warmup_symbols.min(eval_end);
    let window = out[start..eval_end].to_vec();

    let (payload, alignment, snr) = match truth {
        Some(truth) => {
            let al = align_to_truth(&window, truth)?;
            let fixed: Vec<Complex64> = window.iter().map(|s| quarter_turn(*s, al.rotation)).collect();
            let payload = modem::qpsk_demodulate(&fixed);
            let snr = if window.len() >= metrics::MIN_SNR_SYMBOLS {
                let reference = reference_symbols(truth, al.offset, window.len())?;
                Some(metrics::estimate_snr(&fixed, Some(&reference))?)
            } else {
                None
            };
            (payload, Some(al), snr)
        }
        None => {
            let snr = if window.len() >= metrics::MIN_SNR_SYMBOLS {
                Some(metrics::estimate_snr(&window, None)?)
            } else {
                None
            };
            (modem::qpsk_demodulate(&window), None, snr)
        }
    };

    Ok(Reception {
        payload,
        symbols: window,
        diagnostics,
        alignment,
        snr,
    })
}

/// `n` transmitted symbols of the repeating payload starting at bit `offset`.
pub fn reference_symbols(truth: &Payload, offset: usize, n: usize) -> Result<Vec<Complex64>> {
    let syms = modem::qpsk_modulate(truth)?;
    let l = syms.len();
    Ok((0..n).map(|k| syms[(offset / 2 + k) % l]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::default_payload;

    fn clean_symbols(n: usize) -> Vec<Complex64> {
        modem::qpsk_modulate(&default_payload(2 * n)).unwrap()
    }

    fn rotate(s: &[Complex64], freq_hz: f64, rs: f64, phase: f64) -> Vec<Complex64> {
        let w = 2.0 * PI * freq_hz / rs;
        s.iter()
            .enumerate()
            .map(|(k, x)| x * Complex64::from_polar(1.0, w * k as f64 + phase))
            .collect()
    }

    #[test]
    fn phase_search_unrotated_picks_branch_zero() {
        let s = IqBuffer::new(clean_symbols(200), 62_500.0).unwrap();
        let r = differential_phase_search(&s, 32, 64).unwrap();
        assert_eq!(r.best_branch, 0);
        assert!(r.score < 1e-9);
    }

    #[test]
    fn phase_search_compensates_rotation_modulo_quarter_turn() {
        let rot = 2.0 * PI * 5.0 / 32.0;
        let s = IqBuffer::new(rotate(&clean_symbols(200), 0.0, 1.0, rot), 62_500.0).unwrap();
        let r = differential_phase_search(&s, 32, 64).unwrap();
        // total rotation must be a multiple of pi/2: (5 + k) % 8 == 0
        assert_eq!((5 + r.best_branch) % 8, 0);
        assert_eq!(r.best_branch, 3);
        assert!(r.score < 1e-9);
    }

    #[test]
    fn phase_search_errors() {
        let e = IqBuffer::new(vec![], 1.0).unwrap();
        assert!(matches!(differential_phase_search(&e, 32, 64), Err(Error::Empty)));
        let s = IqBuffer::new(clean_symbols(10), 1.0).unwrap();
        assert!(differential_phase_search(&s, 1, 64).is_err());
    }

    #[test]
    fn dpll_zero_cfo_is_transparent() {
        let s = clean_symbols(2000);
        let out = dpll_cfo_correct(&s, &ReceiverConfig::baseline(), 62_500.0).unwrap();
        for (a, b) in s.iter().zip(&out.corrected) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(out.freq_trace_hz.iter().all(|f| f.abs() < 1e-6));
    }

    #[test]
    fn loop_gain_formula() {
        let (kp, ki) = loop_gains(BASELINE_LOOP_BW, std::f64::consts::FRAC_1_SQRT_2);
        assert!(kp > ki && ki > 0.0);
        let (kp2, ki2) = loop_gains(HARDENED_LOOP_BW, std::f64::consts::FRAC_1_SQRT_2);
        assert!(kp2 < kp && ki2 < ki);
    }

    #[test]
    fn coarse_cfo_recovers_offset() {
        for f in [-2500.0, -500.0, 0.0, 670.0, 2313.0] {
            let s = rotate(&clean_symbols(200), f, 62_500.0, 0.4);
            let est = coarse_cfo(&s, 96, 62_500.0);
            assert!((est - f).abs() < 20.0, "{f}: {est}");
        }
    }

    #[test]
    fn convergence_index_semantics() {
        assert_eq!(convergence_index(&[5.0, 3.0, 0.1, 0.0], 0.0, 1.0), Some(2));
        assert_eq!(convergence_index(&[0.0, 0.0], 0.0, 1.0), Some(0));
        assert_eq!(convergence_index(&[0.0, 9.0], 0.0, 1.0), None);
    }

    #[test]
    fn alignment_handles_offset_and_rotation() {
        let p = default_payload(200);
        let s = modem::qpsk_modulate(&p.repeated(5)).unwrap();
        let shifted: Vec<_> = s[37..].iter().map(|x| quarter_turn(*x, 3)).collect();
        let al = align_to_truth(&shifted, &p).unwrap();
        assert_eq!(al.errors, 0);
        assert_eq!(al.offset, 74);
        assert_eq!(al.rotation, 1);
    }

    fn pull_in(freq: f64, bw: f64) -> Option<usize> {
        let mut cfg = ReceiverConfig::baseline();
        cfg.dpll_loop_bw = bw;
        let s = rotate(&clean_symbols(20_000), freq, 62_500.0, 0.0);
        let out = dpll_cfo_correct(&s, &cfg, 62_500.0).unwrap();
        convergence_index(&out.freq_trace_hz, freq, 5.0)
    }

    #[test]
    fn dpll_tracks_500_hz_and_narrow_loop_is_slower() {
        for f in [500.0, -500.0] {
            let wide = pull_in(f, BASELINE_LOOP_BW).expect("wide loop locks");
            let narrow = pull_in(f, HARDENED_LOOP_BW).expect("narrow loop locks");
            assert!(narrow > wide, "{f}: narrow {narrow} wide {wide}");
        }
        // clean decisions after lock
        let s = rotate(&clean_symbols(4000), 500.0, 62_500.0, 0.0);
        let out = dpll_cfo_correct(&s, &ReceiverConfig::baseline(), 62_500.0).unwrap();
        let al = align_to_truth(&out.corrected[1000..], &default_payload(8000)).unwrap();
        assert_eq!(al.errors, 0);
    }

    #[test]
    fn dpll_alone_locks_within_1_khz() {
        for f in [-1000.0, -300.0, 700.0, 1000.0] {
            let wide = pull_in(f, BASELINE_LOOP_BW).expect("wide");
            let narrow = pull_in(f, HARDENED_LOOP_BW).expect("narrow");
            assert!(narrow >= wide);
        }
    }

    #[test]
    fn receiver_cfo_estimate_up_to_2_khz() {
        let params = ModemParams::default();
        let truth = default_payload(200);
        let tx = modem::transmit(&truth.repeated(40), &params).unwrap();
        for f in [-2000.0, -1500.0, 1200.0, 2000.0] {
            let w = 2.0 * PI * f / params.sample_rate;
            let shifted = tx.map_samples(
                tx.samples()
                    .iter()
                    .enumerate()
                    .map(|(k, x)| x * Complex64::from_polar(1.0, w * k as f64))
                    .collect(),
            );
            for cfg in [ReceiverConfig::baseline(), ReceiverConfig::hardened()] {
                let out = receive(&shifted, &cfg, &params, Some(&truth)).unwrap();
                let tr = &out.diagnostics.cfo_estimate_trace;
                let tail = &tr[..tr.len() - cfg.guard_symbols];
                assert!(
                    convergence_index(tail, f, 5.0).is_some(),
                    "{f} Hz {:?}: ends at {}",
                    cfg.profile,
                    tail[tail.len() - 1]
                );
                assert_eq!(out.alignment.unwrap().errors, 0);
            }
        }
    }

    fn shaped(params: &ModemParams, delay: f64, nsym: usize) -> IqBuffer {
        let p = default_payload(2 * nsym);
        let tx = modem::transmit(&p, params).unwrap();
        let x = tx.samples();
        let n = x.len() + delay.ceil() as usize;
        let y = (0..n).map(|k| interp::sample_at(x, k as f64 - delay)).collect();
        IqBuffer::new(y, params.sample_rate).unwrap()
    }

    #[test]
    fn known_offset_samples_constellation_points() {
        let params = ModemParams {
            tx_gain_db: 0.0,
            ..ModemParams::default()
        };
        let nsym = 300;
        let rx = shaped(&params, 0.0, nsym);
        let mf = matched_filter(&rx, &params).unwrap();
        assert_eq!(mf.group_delay, 40);
        let cfg = ReceiverConfig::baseline().with_known_offset(0.0);
        let t = recover_timing(&mf.buffer, &cfg, &params).unwrap();
        let want = modem::qpsk_modulate(&default_payload(2 * nsym)).unwrap();
        assert_eq!(t.symbols.len(), nsym);
        // the truncated RRC pair is not exactly Nyquist; the worst-case
        // deviation is bounded by the sum of its symbol-spaced sidelobes
        // times the largest symbol magnitude
        let taps = modem::rrc_taps(&params).unwrap();
        let rc = modem::convolve(
            &taps.iter().map(|t| Complex64::new(*t, 0.0)).collect::<Vec<_>>(),
            &taps,
        );
        let c = taps.len() - 1;
        let bound: f64 = (1..=c / params.sps)
            .map(|k| 2.0 * rc[c + k * params.sps].norm())
            .sum::<f64>()
            + (rc[c].norm() - 1.0).abs();
        assert!(bound < 1e-2);
        for (a, b) in t.symbols.iter().zip(&want) {
            assert!((a - b).norm() <= bound + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn hardened_ted_recovers_half_sample_offset() {
        let params = ModemParams::default();
        let rx = shaped(&params, 0.5, 2000);
        let mut cfg = ReceiverConfig::hardened();
        cfg.sampling_offset = SamplingOffset::Known(0.0);
        let t = recover_timing(&rx, &cfg, &params).unwrap();
        // symbol k sits at 2 * group delay + 0.5 + k * sps
        let sps = params.sps as f64;
        for (k, pos) in t.strobes.iter().enumerate().skip(200) {
            let ideal = 2.0 * params.group_delay() as f64 + 0.5 + k as f64 * sps;
            assert!(((pos - ideal) / sps).abs() < 0.05, "symbol {k}: {pos} vs {ideal}");
        }
        let tail = &t.timing_error_trace[200..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean.abs() < 0.05);
        let out = receive(&rx, &ReceiverConfig::hardened(), &params, Some(&default_payload(4000))).unwrap();
        assert_eq!(out.alignment.unwrap().errors, 0);
    }

    #[test]
    fn clean_chain_both_profiles() {
        let params = ModemParams::default();
        let truth = default_payload(200);
        let p = truth.repeated(30);
        let tx = modem::transmit(&p, &params).unwrap();
        for cfg in [
            ReceiverConfig::baseline().with_known_offset(0.0),
            ReceiverConfig::baseline(),
            ReceiverConfig::hardened(),
        ] {
            for eq in [EqualizerKind::Cma, EqualizerKind::DdLms] {
                let cfg = ReceiverConfig {
                    equalizer: eq,
                    ..cfg.clone()
                };
                let out = receive(&tx, &cfg, &params, Some(&truth)).unwrap();
                let al = out.alignment.unwrap();
                assert_eq!(al.errors, 0, "{:?} {:?}", cfg.profile, eq);
                assert!(al.total > 5000);
                assert!(out.diagnostics.lock_flag);
                let n = out.diagnostics.cfo_estimate_trace.len();
                assert_eq!(out.diagnostics.timing_error_trace.len(), n);
                assert_eq!(out.diagnostics.eq_error_trace.len(), n);
            }
        }
    }

    #[test]
    fn noise_does_not_lock() {
        let noise = crate::channel::gaussian_noise(20_000, 1.0, 5);
        let buf = IqBuffer::new(noise, 250_000.0).unwrap();
        for cfg in [ReceiverConfig::baseline(), ReceiverConfig::hardened()] {
            let out = receive(&buf, &cfg, &ModemParams::default(), None).unwrap();
            assert!(!out.diagnostics.lock_flag, "{:?} score {}", cfg.profile, out.diagnostics.phase_search_score);
        }
    }

    fn isi_db(channel: &[Complex64], taps: &[Complex64]) -> f64 {
        let mut c = vec![Complex64::new(0.0, 0.0); channel.len() + taps.len() - 1];
        for (i, h) in channel.iter().enumerate() {
            for (j, w) in taps.iter().enumerate() {
                c[i + j] += h * w;
            }
        }
        let peak = c.iter().map(|x| x.norm_sqr()).fold(0.0, f64::max);
        let total: f64 = c.iter().map(|x| x.norm_sqr()).sum();
        10.0 * ((total - peak) / peak).log10()
    }

    #[test]
    fn cma_opens_two_tap_channel() {
        let s = clean_symbols(40_000);
        let h = [Complex64::new(1.0, 0.0), Complex64::new(0.3, 0.0)];
        let x: Vec<Complex64> = (0..s.len())
            .map(|n| s[n] * h[0] + if n > 0 { s[n - 1] * h[1] } else { Complex64::new(0.0, 0.0) })
            .collect();
        let cfg = ReceiverConfig::baseline();
        let out = equalize(&x, &cfg).unwrap();
        // y_{n-c} = sum_k w_k x_{n-k}, so the taps are the causal response
        let cma = isi_db(&h, &out.taps);
        // brute-force zero-forcing inverse truncated to the same length
        let zf: Vec<Complex64> = (0..cfg.eq_taps)
            .map(|k| Complex64::new((-0.3f64).powi(k as i32), 0.0))
            .collect();
        let zf_isi = isi_db(&h, &zf);
        let unequalized = isi_db(&h, &[Complex64::new(1.0, 0.0)]);
        assert!(cma < -20.0, "CMA ISI {cma} dB (ZF {zf_isi} dB, none {unequalized} dB)");
        assert!(zf_isi < cma);
    }

    #[test]
    fn equalizer_stays_bounded() {
        let n = 1_000_000;
        let s = clean_symbols(n);
        let noise = crate::channel::gaussian_noise(n, 0.1, 11);
        let x: Vec<Complex64> = s.iter().zip(&noise).map(|(a, b)| a + b).collect();
        for cfg in [ReceiverConfig::baseline(), ReceiverConfig::hardened()] {
            let out = equalize(&x, &cfg).unwrap();
            let peak = out.symbols.iter().map(|y| y.norm()).fold(0.0, f64::max);
            assert!(peak < 10.0, "{:?} peak {peak}", cfg.equalizer);
        }
    }

    #[test]
    fn equalizers_under_equal_power_replay() {
        let n = 20_000;
        let s = clean_symbols(n + 3);
        let rs = 62_500.0;
        // replay: same data two symbols late, 300 Hz apart, random phase
        let composite: Vec<Complex64> = (0..n)
            .map(|k| {
                let r = Complex64::from_polar(1.0, 2.0 * PI * 300.0 * k as f64 / rs + 1.3);
                (s[k + 2] + s[k] * r) / 2f64.sqrt()
            })
            .collect();
        let truth = default_payload(2 * (n + 3));
        let cma = equalize(&composite, &ReceiverConfig::baseline()).unwrap();
        let dd = equalize(&composite, &ReceiverConfig::hardened()).unwrap();
        let tail = |t: &[f64]| t[n / 2..].iter().sum::<f64>() / (n / 2) as f64;
        // DD error stays well above what a converged QPSK equalizer shows
        assert!(tail(&dd.error_trace) > 0.1, "dd {}", tail(&dd.error_trace));
        let ber_cma = align_to_truth(&cma.symbols, &truth).unwrap().ber();
        let ber_dd = align_to_truth(&dd.symbols, &truth).unwrap().ber();
        assert!(ber_cma > 0.05 && ber_dd > 0.05, "cma {ber_cma} dd {ber_dd}");
        println!("cma tail {} dd tail {}", tail(&cma.error_trace), tail(&dd.error_trace));
    }

    #[test]
    fn receive_is_deterministic() {
        let params = ModemParams::default();
        let truth = default_payload(200);
        let tx = modem::transmit(&truth.repeated(10), &params).unwrap();
        let noisy = crate::channel::add_awgn(&tx, 12.0, 3).unwrap();
        let a = receive(&noisy, &ReceiverConfig::hardened(), &params, Some(&truth)).unwrap();
        let b = receive(&noisy, &ReceiverConfig::hardened(), &params, Some(&truth)).unwrap();
        assert_eq!(a.payload, b.payload);
        assert_eq!(a.diagnostics, b.diagnostics);
    }

    #[test]
    fn config_validation() {
        let mut c = ReceiverConfig::baseline();
        c.eq_taps = 10;
        assert!(c.validate().is_err());
        let mut c = ReceiverConfig::hardened();
        c.dpll_loop_bw = 0.0;
        assert!(c.validate().is_err());
        let mut c = ReceiverConfig::baseline();
        c.n_phase_branches = 1;
        assert!(c.validate().is_err());
        assert!(ReceiverConfig::hardened().validate().is_ok());
    }
}
