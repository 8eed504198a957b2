#![allow(dead_code)]

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Frequency of the strongest spectral line, Hann-windowed FFT with parabolic
/// interpolation on the log magnitude.
pub fn tone_frequency(samples: &[Complex64], sample_rate: f64) -> f64 {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos();
            s * w
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|c| c.norm().max(1e-300).ln()).collect();
    let peak = (0..n).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
    let (l, c, r) = (mag[(peak + n - 1) % n], mag[peak], mag[(peak + 1) % n]);
    let delta = 0.5 * (l - r) / (l - 2.0 * c + r);
    let mut bin = peak as f64 + delta;
    if bin > n as f64 / 2.0 {
        bin -= n as f64;
    }
    bin * sample_rate / n as f64
}

pub fn tone(freq: f64, sample_rate: f64, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * freq * k as f64 / sample_rate))
        .collect()
}

/// Direct linear convolution, independent of the library's implementation.
pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, h) in b.iter().enumerate() {
            y[i + j] += x * h;
        }
    }
    y
}
