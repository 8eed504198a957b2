mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use replay_testbed::channel::*;
use replay_testbed::IqBuffer;

const FS: f64 = 250_000.0;

fn buf(v: Vec<Complex64>) -> IqBuffer {
    IqBuffer::new(v, FS).unwrap()
}

fn two_tap(doppler: f64, phase: f64, seed: u64) -> ChannelProfile {
    ChannelProfile {
        taps: vec![
            ChannelTap {
                mean_delay: 3.3 / FS,
                delay_osc_amplitude: 0.4 / FS,
                delay_osc_rate: 37.0,
                gain: 0.9,
                doppler_hz: doppler,
                initial_phase: phase,
            },
            ChannelTap {
                mean_delay: 5.8 / FS,
                delay_osc_amplitude: 0.5 / FS,
                delay_osc_rate: 1.0,
                gain: 0.3,
                doppler_hz: -doppler,
                initial_phase: 0.3,
            },
        ],
        noise_snr_db: None,
        seed,
    }
}

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_channel_is_linear(
        (a, b) in (50usize..400).prop_flat_map(|n| (complex_vec(n), complex_vec(n))),
        doppler in -3000.0f64..3000.0,
        phase in 0.0f64..6.28,
    ) {
        let prof = two_tap(doppler, phase, 1);
        let sum: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (a, b, sum) = (buf(a), buf(b), buf(sum));
        let real = realize_for(&prof, &a).unwrap();
        let ya = apply_channel(&a, &real).unwrap();
        let yb = apply_channel(&b, &real).unwrap();
        let ys = apply_channel(&sum, &real).unwrap();
        for ((s, p), q) in ys.samples().iter().zip(ya.samples()).zip(yb.samples()) {
            prop_assert!((s - (p + q)).norm() < 1e-9);
        }
    }

    #[test]
    fn single_tap_scales_power_by_gain_squared(
        x in complex_vec(256),
        gain in 0.0f64..4.0,
        doppler in -5000.0f64..5000.0,
        phase in 0.0f64..6.28,
    ) {
        let prof = ChannelProfile {
            taps: vec![ChannelTap { doppler_hz: doppler, initial_phase: phase, ..ChannelTap::fixed(0.0, gain) }],
            noise_snr_db: None,
            seed: 0,
        };
        let x = buf(x);
        let y = apply_channel(&x, &realize_for(&prof, &x).unwrap()).unwrap();
        let want = gain * gain * x.mean_power();
        prop_assert!((y.mean_power() - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn same_profile_and_seed_is_bit_identical(seed in any::<u64>(), snr in 0.0f64..40.0) {
        let mut prof = two_tap(700.0, 1.0, seed);
        prof.noise_snr_db = Some(snr);
        let x = buf(common::tone(1000.0, FS, 512));
        let y1 = apply_channel(&x, &realize_for(&prof, &x).unwrap()).unwrap();
        let y2 = apply_channel(&x, &realize_for(&prof, &x).unwrap()).unwrap();
        prop_assert_eq!(y1.samples(), y2.samples());
    }
}

#[test]
fn tone_shift_matches_doppler_over_one_second() {
    for (f0, doppler) in [(10_000.0, 661.79), (-20_000.0, 2313.07), (0.0, -789.74)] {
        let x = buf(common::tone(f0, FS, FS as usize));
        let prof = ChannelProfile {
            taps: vec![ChannelTap { doppler_hz: doppler, ..ChannelTap::fixed(1.7 / FS, 1.0) }],
            noise_snr_db: None,
            seed: 0,
        };
        let y = apply_channel(&x, &realize_for(&prof, &x).unwrap()).unwrap();
        // skip the interpolator's start-up region
        let tail = &y.samples()[64..];
        let f = common::tone_frequency(tail, FS);
        assert!((f - (f0 + doppler)).abs() < 1.0, "{f0}+{doppler}: measured {f}");
        // mean instantaneous frequency agrees as well
        let inst: f64 = tail.windows(2).map(|w| (w[1] * w[0].conj()).arg()).sum::<f64>()
            / (tail.len() - 1) as f64
            * FS
            / (2.0 * std::f64::consts::PI);
        assert!((inst - (f0 + doppler)).abs() < 1.0, "instantaneous {inst}");
    }
}

#[test]
fn different_seeds_give_different_noise() {
    let x = buf(common::tone(1000.0, FS, 512));
    let mut p1 = ChannelProfile::identity();
    p1.noise_snr_db = Some(10.0);
    let mut p2 = p1.clone();
    p2.seed = 1;
    let y1 = apply_channel(&x, &realize_for(&p1, &x).unwrap()).unwrap();
    let y2 = apply_channel(&x, &realize_for(&p2, &x).unwrap()).unwrap();
    assert_ne!(y1.samples(), y2.samples());
}
