//! Band-limited fractional-delay interpolation shared by the channel and the
//! receiver's known-offset sampler.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Kernel length in samples.
pub(crate) const KERNEL_LEN: usize = 16;
const HALF: i64 = (KERNEL_LEN / 2) as i64;
const KAISER_BETA: f64 = 5.0;
// I0(KAISER_BETA)
const I0_BETA: f64 = 27.239871823604442;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..50 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn kaiser(offset: f64) -> f64 {
    let r = offset / HALF as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / I0_BETA
}

/// Normalized kernel weights for a fractional offset in (0, 1), for input
/// samples `base + 1 - KERNEL_LEN / 2 ..= base + KERNEL_LEN / 2`.
pub(crate) fn weights(frac: f64) -> [f64; KERNEL_LEN] {
    // sin(pi (frac - k)) = sin(pi frac) * (-1)^k
    let s = (PI * frac).sin();
    let mut w = [0.0; KERNEL_LEN];
    let mut wsum = 0.0;
    for (i, k) in ((1 - HALF)..=HALF).enumerate() {
        let d = frac - k as f64;
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        w[i] = sign * s / (PI * d) * kaiser(d);
        wsum += w[i];
    }
    // unity DC gain
    w.iter_mut().for_each(|v| *v /= wsum);
    w
}

/// Weighted sum of the kernel's support around `base`.
#[inline]
pub(crate) fn apply(x: &[Complex64], base: i64, w: &[f64; KERNEL_LEN]) -> Complex64 {
    let first = base + 1 - HALF;
    if first >= 0 && ((first as usize) + KERNEL_LEN) <= x.len() {
        let seg = &x[first as usize..first as usize + KERNEL_LEN];
        seg.iter().zip(w).map(|(v, k)| v * k).sum()
    } else {
        (0..KERNEL_LEN).map(|i| get(x, first + i as i64) * w[i]).sum()
    }
}

/// Value of `x` at a fractional sample position. Positions outside the
/// buffer read as zero. Integer positions return the stored sample exactly.
pub(crate) fn sample_at(x: &[Complex64], pos: f64) -> Complex64 {
    let base = pos.floor();
    let frac = pos - base;
    if frac == 0.0 {
        return get(x, base as i64);
    }
    apply(x, base as i64, &weights(frac))
}

/// [`sample_at`] with the kernel reused while the fractional part repeats,
/// as it does along a constant delay.
#[derive(Debug, Default)]
pub(crate) struct CachedSampler {
    frac: f64,
    w: Option<[f64; KERNEL_LEN]>,
}

impl CachedSampler {
    pub(crate) fn sample(&mut self, x: &[Complex64], pos: f64) -> Complex64 {
        let base = pos.floor();
        let frac = pos - base;
        if frac == 0.0 {
            return get(x, base as i64);
        }
        let w = match self.w {
            Some(w) if self.frac == frac => w,
            _ => {
                let w = weights(frac);
                self.frac = frac;
                self.w = Some(w);
                w
            }
        };
        apply(x, base as i64, &w)
    }
}

#[inline]
fn get(x: &[Complex64], idx: i64) -> Complex64 {
    if idx < 0 || idx as usize >= x.len() {
        Complex64::new(0.0, 0.0)
    } else {
        x[idx as usize]
    }
}
