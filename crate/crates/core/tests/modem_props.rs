mod common;

use proptest::prelude::*;
use replay_testbed::modem::*;
use replay_testbed::receiver::matched_filter;

/// Symbol-spaced samples of RRC * RRC, relative to the peak, excluding it.
fn worst_sidelobe(params: &ModemParams) -> f64 {
    let h = rrc_taps(params).unwrap();
    let rc = common::direct_convolve(&h, &h);
    let peak_at = h.len() - 1;
    let peak = rc[peak_at];
    let sps = params.sps;
    let mut worst = 0.0f64;
    let mut k = peak_at % sps;
    while k < rc.len() {
        if k != peak_at {
            worst = worst.max((rc[k] / peak).abs());
        }
        k += sps;
    }
    worst
}

#[test]
fn raised_cosine_sidelobes_at_default_span() {
    // truncation at +-10 symbols leaves a residual just above 1e-3 for
    // alpha = 0.35; one more symbol of span brings it under
    let w = worst_sidelobe(&ModemParams::default());
    assert!(w > 1.7e-3 && w < 1.8e-3, "worst sidelobe {w}");
    for span in [11, 14, 17] {
        let w = worst_sidelobe(&ModemParams { rrc_span_symbols: span, ..Default::default() });
        assert!(w < 1e-3, "span {span}: {w}");
    }
}

#[test]
fn raised_cosine_sidelobes_across_rolloffs() {
    for (a, bound) in [(0.05, 3e-2), (0.2, 1e-3), (0.35, 2e-3), (0.5, 1e-3), (1.0, 1e-3)] {
        let w = worst_sidelobe(&ModemParams { rolloff: a, ..Default::default() });
        assert!(w < bound, "alpha {a}: {w}");
    }
}

#[test]
fn occupied_bandwidth() {
    let p = ModemParams::default();
    assert_eq!(p.symbol_rate(), 62_500.0);
    assert_eq!(p.occupied_bandwidth(), 84_375.0);
}

fn payload(max_pairs: usize) -> impl Strategy<Value = Payload> {
    prop::collection::vec(0u8..=1, 2..=2 * max_pairs)
        .prop_map(|mut v| {
            if v.len() % 2 == 1 {
                v.pop();
            }
            Payload::new(v).unwrap()
        })
}

fn ideal_round_trip(p: &Payload) -> Payload {
    let params = ModemParams::default();
    let tx = transmit(p, &params).unwrap();
    let mf = matched_filter(&tx, &params).unwrap();
    let first = 2 * mf.group_delay;
    let syms: Vec<_> = (0..p.len() / 2)
        .map(|k| mf.buffer.samples()[first + k * params.sps])
        .collect();
    qpsk_demodulate(&syms)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ideal_channel_round_trip(p in payload(2000)) {
        prop_assert_eq!(ideal_round_trip(&p), p);
    }

    #[test]
    fn modulated_symbols_have_unit_modulus(p in payload(500)) {
        for s in qpsk_modulate(&p).unwrap() {
            prop_assert!((s.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn demodulation_inverts_modulation(p in payload(500)) {
        prop_assert_eq!(qpsk_demodulate(&qpsk_modulate(&p).unwrap()), p);
    }
}

#[test]
fn million_bit_round_trip() {
    let p = default_payload(1_000_000);
    assert_eq!(ideal_round_trip(&p), p);
}
