use fsos_core::signal::{
    generate_records, modulate, ChannelKind, ChannelModel, DatasetConfig, ModulationScheme, SnrGrid,
};
use proptest::prelude::*;

const KINDS: [ChannelKind; 4] = [
    ChannelKind::StaticMultipath,
    ChannelKind::Rayleigh,
    ChannelKind::Rician,
    ChannelKind::NakagamiM,
];

const SCHEMES: [&str; 12] = [
    "BPSK", "QPSK", "8PSK", "16QAM", "64QAM", "4PAM", "2FSK", "GFSK", "CPFSK", "AM-DSB", "AM-SSB",
    "WBFM",
];

proptest! {
    #[test]
    fn tap_profiles_are_normalized_and_named(kind in 0usize..4, six in any::<bool>()) {
        let taps = if six { 6 } else { 4 };
        let ch = ChannelModel::multipath(KINDS[kind], taps).unwrap();
        prop_assert!((ch.tap_powers.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(ch.tap_delays.len(), taps);
        prop_assert_eq!(ChannelModel::from_spec(&ch.spec_name()).unwrap(), ch);
    }

    #[test]
    fn modulated_signals_are_finite(idx in 0usize..SCHEMES.len(), seed in any::<u64>()) {
        let scheme = ModulationScheme::parse(SCHEMES[idx]).unwrap();
        let sig = modulate(&scheme, 64, seed).unwrap();
        prop_assert!(sig.is_finite());
        prop_assert!(sig.mean_power() > 0.0);
    }
}

#[test]
fn single_tap_kinds_reject_multipath_counts() {
    assert!(ChannelModel::multipath(ChannelKind::Rayleigh, 5).is_err());
    assert_eq!(ChannelModel::from_spec("awgn").unwrap().num_taps, 1);
    assert!(ChannelModel::from_spec("rayleigh").is_err());
}

#[test]
fn rayleigh_tap_power_is_exponential() {
    // |h|² of a Rayleigh tap with power p follows Exp(1/p); Kolmogorov–Smirnov at 1%.
    let ch = ChannelModel::rayleigh(4).unwrap();
    let p0 = ch.tap_powers[0];
    let n = 5000;
    let mut x: Vec<f64> = (0..n)
        .map(|s| ch.realize(s as u64).unwrap()[0].norm_sqr() / p0)
        .collect();
    x.sort_by(f64::total_cmp);
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let cdf = 1.0 - (-v).exp();
            (cdf - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - cdf)
        })
        .fold(0.0, f64::max);
    assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn nakagami_fourth_moment_matches_shape() {
    // E|h|⁴ / (E|h|²)² = 1 + 1/m for Nakagami-m amplitudes.
    let ch = ChannelModel::nakagami(4, 2.0).unwrap();
    let n = 40_000;
    let (mut m2, mut m4) = (0.0, 0.0);
    for s in 0..n {
        let g = ch.realize(s).unwrap()[1].norm_sqr();
        m2 += g;
        m4 += g * g;
    }
    let ratio = (m4 / n as f64) / (m2 / n as f64).powi(2);
    assert!((ratio - 1.5).abs() < 0.03, "moment ratio {ratio}");
}

#[test]
fn generation_is_independent_of_thread_count() {
    let cfg = DatasetConfig {
        schemes: vec!["QPSK".into(), "GFSK".into(), "AM-DSB".into()],
        snr_db: SnrGrid::Range {
            start: -4,
            stop: 4,
            step: 4,
        },
        channels: vec!["rician4".into(), "nakagami6".into()],
        samples_per_cell: 3,
        signal_len: 64,
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_records(&cfg, 42).unwrap())
    };
    let (m1, r1) = run(1);
    let (m3, r3) = run(3);
    assert_eq!(m1, m3);
    assert_eq!(r1, r3);
    assert_eq!(r1.len(), 3 * 3 * 2 * 3);
    assert!(r1.iter().all(|r| r.iq.iter().all(|v| v.is_finite())));
}
