//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting.

mod support;

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use fsos_core::eval::{auroc, openness, run_experiment, Experiment, ExperimentConfig, SplitConfig};
use fsos_core::io::DatasetHandle;
use fsos_core::meta::{compute_prototypes, triplet_loss, PrototypeSet, TrainConfig};
use fsos_core::net::{Encoder, EncoderConfig};
use fsos_core::openset::{decide, score_embedding};
use fsos_core::repr::{centered_bin, to_ap, to_psd, PsdScale, WelchParams, Window};
use fsos_core::rng::seeded;
use fsos_core::signal::{
    add_awgn, generate_records, modulate, ChannelModel, DatasetConfig, ModulationScheme, SnrGrid,
};
use fsos_core::tensor::Graph;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use support::gradcheck;

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {criterion}: {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_1_openness() {
    let a = openness(6, 11).unwrap() * 100.0;
    let b = openness(13, 26).unwrap() * 100.0;
    let pass = (a - 15.98).abs() < 0.005 && (b - 18.35).abs() < 0.005;
    verdict(
        1,
        pass,
        &format!("openness(6,11) = {a:.4}%, openness(13,26) = {b:.4}%"),
    );
}

#[test]
fn criterion_2_gradient_integrity() {
    let mut worst_op = ("", 0.0f64);
    for &(name, case) in gradcheck::OPS {
        let e = gradcheck::worst(name, case);
        if e >= worst_op.1 {
            worst_op = (name, e);
        }
    }
    let e2e = gradcheck::encoder::worst();
    let pass = worst_op.1 < gradcheck::TOL && e2e < gradcheck::encoder::TOL_E2E;
    verdict(
        2,
        pass,
        &format!(
            "worst per-op error {:.2e} ({}), tiny encoder {:.2e}, {} instances each",
            worst_op.1,
            worst_op.0,
            e2e,
            gradcheck::INSTANCES
        ),
    );
}

fn cgauss(rng: &mut impl Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(
        rng.sample::<f64, _>(StandardNormal) * s,
        rng.sample::<f64, _>(StandardNormal) * s,
    )
}

#[test]
fn criterion_3_dsp_oracles() {
    let mut rng = seeded(3);
    let mut ap_err = 0.0f64;
    for _ in 0..10 {
        let mut x: Vec<Complex64> = (0..1000).map(|_| cgauss(&mut rng, 2.0)).collect();
        x[0] = Complex64::new(0.0, 0.0);
        x[1] = Complex64::new(-1.5, 0.0);
        let [a, p] = to_ap(&x);
        for ((s, a), p) in x.iter().zip(&a).zip(&p) {
            ap_err = ap_err.max((Complex64::from_polar(*a, *p) - s).norm());
        }
    }

    let rect = WelchParams {
        segment_len: 64,
        overlap: 0,
        window: Window::Rectangular,
        scale: PsdScale::Linear,
        ..WelchParams::default()
    };
    let mut tone_frac = 1.0f64;
    for k0 in [0usize, 5, 31, 40, 63] {
        let x: Vec<Complex64> = (0..1024)
            .map(|n| Complex64::from_polar(1.0, 2.0 * PI * (k0 * n) as f64 / 64.0))
            .collect();
        let psd = to_psd(&x, &rect).unwrap();
        let frac = psd[centered_bin(k0, 64)] / psd.iter().sum::<f64>();
        tone_frac = tone_frac.min(frac);
    }

    let welch = WelchParams {
        segment_len: 64,
        overlap: 32,
        scale: PsdScale::Linear,
        ..WelchParams::default()
    };
    assert_eq!(welch.num_segments(512), 15);
    let sigma2 = 0.7;
    let noise: Vec<Complex64> = (0..512).map(|_| cgauss(&mut rng, sigma2)).collect();
    let psd = to_psd(&noise, &welch).unwrap();
    let mean_bin = psd.iter().sum::<f64>() / psd.len() as f64;
    let parseval = (mean_bin / sigma2 - 1.0).abs();

    let pass = ap_err < 1e-9 && tone_frac >= 0.9999 && parseval <= 0.10;
    verdict(
        3,
        pass,
        &format!(
            "AP round-trip {ap_err:.1e}, tone energy in bin {:.6}%, white-noise PSD mean off by {:.2}%",
            tone_frac * 100.0,
            parseval * 100.0
        ),
    );
}

#[test]
fn criterion_4_channel_calibration() {
    let clean = modulate(&ModulationScheme::parse("QPSK").unwrap(), 50_000, 11).unwrap();
    assert!(clean.len() >= 100_000);
    let p_sig = clean.mean_power();
    let mut snr_err = 0.0f64;
    for snr in -20..=20 {
        let noisy = add_awgn(&clean, snr as f64, (snr + 100) as u64);
        let p_noise = noisy
            .samples
            .iter()
            .zip(&clean.samples)
            .map(|(y, x)| (y - x).norm_sqr())
            .sum::<f64>()
            / clean.len() as f64;
        snr_err = snr_err.max((10.0 * (p_sig / p_noise).log10() - snr as f64).abs());
    }

    const DRAWS: u64 = 10_000;
    let ray = ChannelModel::rayleigh(4).unwrap();
    let mut power = vec![0.0; 4];
    for seed in 0..DRAWS {
        for (acc, h) in power.iter_mut().zip(ray.realize(seed).unwrap()) {
            *acc += h.norm_sqr() / DRAWS as f64;
        }
    }
    let tap_err = power
        .iter()
        .zip(&ray.tap_powers)
        .map(|(m, p)| (m / p - 1.0).abs())
        .fold(0.0, f64::max);

    // moment estimator: Ω² − Var(|h|²) is the squared line-of-sight power
    let ric = ChannelModel::rician(4, 3.0).unwrap();
    let g: Vec<f64> = (0..DRAWS)
        .map(|s| ric.realize(s).unwrap()[0].norm_sqr())
        .collect();
    let omega = g.iter().sum::<f64>() / DRAWS as f64;
    let var = g.iter().map(|v| (v - omega).powi(2)).sum::<f64>() / DRAWS as f64;
    let los = (omega * omega - var).max(0.0).sqrt();
    let k_hat = los / (omega - los);

    let pass = snr_err <= 0.2 && tap_err <= 0.05 && (2.7..=3.3).contains(&k_hat);
    verdict(
        4,
        pass,
        &format!(
            "AWGN worst SNR error {snr_err:.3} dB over -20..20, Rayleigh worst tap power error {:.2}%, Rician K estimate {k_hat:.3}",
            tap_err * 100.0
        ),
    );
}

fn pairwise_auroc(scores: &[f64], unknown: &[bool]) -> f64 {
    let (mut sum, mut pairs) = (0.0, 0.0);
    for (su, _) in scores.iter().zip(unknown).filter(|(_, &u)| u) {
        for (sk, _) in scores.iter().zip(unknown).filter(|(_, &u)| !u) {
            pairs += 1.0;
            sum += match su.partial_cmp(sk).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    sum / pairs
}

#[test]
fn criterion_5_metric_oracles() {
    let mut rng = seeded(5);
    let mut auroc_err = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=500);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0..60) as f64 / 7.0).sin())
            .collect();
        auroc_err = auroc_err
            .max((auroc(&scores, &labels).unwrap() - pairwise_auroc(&scores, &labels)).abs());
    }

    let mut mismatches = 0;
    for _ in 0..1000 {
        let d = rng.random_range(2..10);
        let n = rng.random_range(1..10);
        let mut v = |_| {
            (0..d)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        let set = PrototypeSet {
            prototypes: (0..n).map(&mut v).collect(),
            unknown: Some(v(0)),
            embedding_dim: d,
        };
        let e = v(0);
        let brute = (0..n)
            .map(|j| {
                let dist: f64 = set.prototypes[j]
                    .iter()
                    .zip(&e)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (j, dist)
            })
            .fold((0, f64::INFINITY), |best, (j, dist)| {
                if dist < best.1 {
                    (j, dist)
                } else {
                    best
                }
            })
            .0;
        let mut p = score_embedding(&set, &e).unwrap();
        // the known-class decision alone: no rejection at γ = 0 without c₀
        p[0] = 0.0;
        if decide(&p, 0.0) != brute + 1 {
            mismatches += 1;
        }
    }
    let pass = auroc_err < 1e-12 && mismatches == 0;
    verdict(
        5,
        pass,
        &format!("AUROC vs pairwise oracle max diff {auroc_err:.1e} (50 instances), NCM vs brute force {mismatches}/1000 mismatches"),
    );
}

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[test]
fn criterion_6_loss_and_prototypes() {
    let mut rng = seeded(6);
    let mut min_loss = f64::INFINITY;
    for _ in 0..500 {
        let (m, k, d) = (
            rng.random_range(1..8),
            rng.random_range(2..6),
            rng.random_range(1..6),
        );
        let q: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let mut g = Graph::<f64>::new();
        let (qv, cv) = (g.input(q, &[m, d]), g.input(c, &[k, d]));
        let l = triplet_loss(&mut g, qv, &labels, cv, rng.random_range(0.0..2.0)).unwrap();
        min_loss = min_loss.min(g.scalar(l));
    }

    // queries on their prototypes, prototypes pairwise ≥ m apart
    let margin = 0.5;
    let protos = [[0.0, 0.0], [0.6, 0.0], [0.0, 0.6]];
    let labels = [0usize, 1, 2, 1, 0];
    let q: Vec<f64> = labels.iter().flat_map(|&l| protos[l]).collect();
    let mut g = Graph::<f64>::new();
    let (qv, cv) = (g.input(q, &[5, 2]), g.input(protos.concat(), &[3, 2]));
    let l = triplet_loss(&mut g, qv, &labels, cv, margin).unwrap();
    let separated_loss = g.scalar(l);

    let mut perm_ok = true;
    for _ in 0..200 {
        let n = rng.random_range(3..30);
        let emb: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, 8)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let base = compute_prototypes(&emb, &labels, 3).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pe: Vec<Vec<f64>> = order.iter().map(|&i| emb[i].clone()).collect();
        let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        perm_ok &= compute_prototypes(&pe, &pl, 3).unwrap() == base;
    }

    let enc = Encoder::<f32>::new(EncoderConfig::default(), 6).unwrap();
    let x: Vec<f32> = (0..8 * 5 * 128)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let e = enc.embed(&x, 8).unwrap();
    let norm_err = e
        .chunks(enc.embedding_dim())
        .map(|r| (r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);

    let mut scale_ok = true;
    for _ in 0..500 {
        let set = PrototypeSet {
            prototypes: (0..5).map(|_| unit(&mut rng, 6)).collect(),
            unknown: None,
            embedding_dim: 6,
        };
        let e = unit(&mut rng, 6);
        let s = rng.random_range(0.01..100.0);
        let scaled = PrototypeSet {
            prototypes: set
                .prototypes
                .iter()
                .map(|p| p.iter().map(|v| v * s).collect())
                .collect(),
            ..set.clone()
        };
        let es: Vec<f64> = e.iter().map(|v| v * s).collect();
        scale_ok &= set.nearest(&e).unwrap() == scaled.nearest(&es).unwrap();
    }

    let pass = min_loss >= 0.0 && separated_loss == 0.0 && perm_ok && norm_err <= 1e-6 && scale_ok;
    verdict(
        6,
        pass,
        &format!(
            "min triplet loss {min_loss:.3e}, separated loss {separated_loss}, prototype permutation invariance {perm_ok}, embedding norm error {norm_err:.1e}, scale-invariant argmax {scale_ok}"
        ),
    );
}

const DESK_SCHEMES: [&str; 6] = ["BPSK", "QPSK", "16QAM", "4PAM", "2FSK", "GFSK"];
const DESK_KNOWN: [&str; 4] = ["BPSK", "QPSK", "4PAM", "2FSK"];
const DESK_UNKNOWN: [&str; 2] = ["16QAM", "GFSK"];

fn desk_dataset(channel: &str) -> DatasetHandle {
    let cfg = DatasetConfig {
        schemes: DESK_SCHEMES.map(String::from).to_vec(),
        snr_db: SnrGrid::List(vec![10]),
        channels: vec![channel.into()],
        samples_per_cell: 200,
        signal_len: 128,
    };
    let (meta, recs) = generate_records(&cfg, 7).unwrap();
    DatasetHandle::from_records(meta, &recs).unwrap()
}

fn desk_setup(margin: f64) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            epochs: 5,
            episodes_per_epoch: 50,
            n_way: 4,
            s_shot: 10,
            q_query: 5,
            margin,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn desk_run(channel: &str, margin: f64) -> Experiment {
    let split = SplitConfig::new(&DESK_KNOWN, &DESK_UNKNOWN).unwrap();
    run_experiment(&desk_dataset(channel), &split, &desk_setup(margin)).unwrap()
}

fn awgn_run() -> &'static Experiment {
    static RUN: OnceLock<Experiment> = OnceLock::new();
    RUN.get_or_init(|| desk_run("awgn", 0.5))
}

fn rayleigh_run() -> &'static Experiment {
    static RUN: OnceLock<Experiment> = OnceLock::new();
    RUN.get_or_init(|| desk_run("rayleigh4", 0.5))
}

fn summary(e: &Experiment) -> String {
    let r = &e.evaluation.report;
    format!(
        "known accuracy {:.3}, unknown accuracy {:.3}, AUROC {:.3}, epoch losses {:?}",
        r.known_accuracy.unwrap_or(f64::NAN),
        r.unknown_accuracy.unwrap_or(f64::NAN),
        r.auroc.unwrap_or(f64::NAN),
        e.epoch_losses
            .iter()
            .map(|l| (l * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    )
}

#[test]
fn criterion_7_desk_scale_experiment() {
    let e = awgn_run();
    let r = &e.evaluation.report;
    let l = &e.epoch_losses;
    let pass = r.known_accuracy.is_some_and(|a| a >= 0.85)
        && r.auroc.is_some_and(|a| a >= 0.85)
        && l[0] > l[1]
        && l[1] > l[2];
    // the margin is not published; report its neighbourhood alongside
    for m in [0.2, 1.0] {
        println!(
            "INFO criterion 7 at margin {m}: {}",
            summary(&desk_run("awgn", m))
        );
    }
    verdict(7, pass, &format!("AWGN 10 dB, margin 0.5: {}", summary(e)));
}

#[test]
fn criterion_8_multipath_trend() {
    let e = rayleigh_run();
    let r = &e.evaluation.report;
    let gammas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let mut monotone = true;
    for w in gammas.windows(2) {
        for p in &e.evaluation.scores {
            if decide(p, w[0]) == 0 && decide(p, w[1]) != 0 {
                monotone = false;
            }
        }
    }
    let pass = r.auroc.is_some_and(|a| a >= 0.75) && monotone;
    verdict(
        8,
        pass,
        &format!(
            "Rayleigh 4-tap: {}, gamma monotonicity {monotone}",
            summary(e)
        ),
    );
}

fn artifacts(e: &Experiment, dir: &Path) -> Vec<(String, Vec<u8>)> {
    e.save(dir).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = [
        "bundle/weights.bin",
        "bundle/prototypes.json",
        "predictions.csv",
        "report.json",
        "train_log.csv",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
    .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_reproducibility() {
    let mut identical = true;
    let mut detail = Vec::new();
    for (channel, first) in [("awgn", awgn_run()), ("rayleigh4", rayleigh_run())] {
        // a different worker count must not change anything
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let second = pool.install(|| desk_run(channel, 0.5));
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let fa = artifacts(first, a.path());
        let fb = artifacts(&second, b.path());
        let same = fa == fb;
        identical &= same;
        detail.push(format!(
            "{channel}: {} artifacts identical {same}",
            fa.len()
        ));
    }
    verdict(9, identical, &detail.join(", "));
}
