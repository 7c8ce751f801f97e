//! Central-difference gradient checks shared by the gradcheck and
//! acceptance targets. Every case returns the worst relative error of
//! one random instance.

#![allow(dead_code)]

use fsos_core::tensor::{Graph, Mode, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 100;

type Input = (Vec<f64>, Vec<usize>);

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Input {
    (rand_vec(rng, shape.iter().product()), shape.to_vec())
}

/// Builds `sum(f(inputs) * r)` for a fixed random `r`, so every output
/// element contributes to the checked scalar.
fn project(g: &mut Graph<f64>, y: Var, r: &[f64]) -> Var {
    let shape = g.shape(y).to_vec();
    let w = g.input(r[..g.value(y).len()].to_vec(), &shape);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

/// Relative error `‖a − n‖ / (‖a‖ + ‖n‖)` between analytic and numeric
/// gradients, maximized over inputs.
fn check<F>(inputs: &[Input], rng: &mut ChaCha8Rng, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let r = rand_vec(rng, 4096);
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .zip(inputs)
            .map(|(v, (_, s))| g.leaf(v.clone(), s))
            .collect();
        let y = f(&mut g, &vars);
        let l = project(&mut g, y, &r);
        g.scalar(l)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|(v, s)| g.leaf(v.clone(), s)).collect();
    let y = f(&mut g, &vars);
    let l = project(&mut g, y, &r);
    let grads = g.backward(l, &mut ParamStore::new());

    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let mut worst = 0.0f64;
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .map(|a| a.to_vec())
            .unwrap_or_else(|| vec![0.0; base[k].len()]);
        let mut numeric = Vec::with_capacity(base[k].len());
        for j in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][j] += H;
            let mut minus = base.clone();
            minus[k][j] -= H;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * H));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        if na + nn > 1e-10 {
            worst = worst.max(diff / (na + nn));
        }
    }
    worst
}

/// Worst error of `case` over `INSTANCES` instances, seeded from `name`.
pub fn worst(name: &str, case: fn(&mut ChaCha8Rng) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    (0..INSTANCES).map(|_| case(&mut rng)).fold(0.0, f64::max)
}

pub fn conv1d(rng: &mut ChaCha8Rng) -> f64 {
    let b = rng.random_range(1..3);
    let ci = rng.random_range(1..4);
    let co = rng.random_range(1..4);
    let k = [1, 3, 5][rng.random_range(0..3)];
    let stride = rng.random_range(1..3);
    let pad = rng.random_range(0..=k / 2);
    let l = rng.random_range(k.max(2)..10);
    let x = input(rng, &[b, ci, l]);
    let w = input(rng, &[co, ci, k]);
    check(&[x, w], rng, |g, v| {
        g.conv1d(v[0], v[1], stride, pad).unwrap()
    })
}

pub fn batchnorm(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::<f64>::new();
    let mid = store.add("m", &[3], vec![0.1, -0.2, 0.3], false);
    let vid = store.add("v", &[3], vec![0.5, 1.5, 2.0], false);
    let b = rng.random_range(2..4);
    let l = rng.random_range(1..5);
    let x = input(rng, &[b, 3, l]);
    let gamma = input(rng, &[3]);
    let beta = input(rng, &[3]);
    let mode = if rng.random_bool(0.5) {
        Mode::Train
    } else {
        Mode::Eval
    };
    check(&[x, gamma, beta], rng, |g, v| {
        g.batchnorm(v[0], v[1], v[2], &store, mid, vid, mode)
            .unwrap()
    })
}

pub fn pointwise(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..12);
    let x = input(rng, &[n]);
    let c = rng.random_range(-2.0..2.0);
    match rng.random_range(0..4) {
        0 => check(&[x], rng, |g, v| g.relu(v[0])),
        1 => check(&[x], rng, |g, v| g.sigmoid(v[0])),
        2 => check(&[x], rng, |g, v| g.scale(v[0], c)),
        _ => check(&[x], rng, |g, v| g.mean(v[0])),
    }
}

pub fn binary_elementwise(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..12);
    let a = input(rng, &[n]);
    let b = input(rng, &[n]);
    if rng.random_bool(0.5) {
        check(&[a, b], rng, |g, v| g.add(v[0], v[1]).unwrap())
    } else {
        check(&[a, b], rng, |g, v| g.mul(v[0], v[1]).unwrap())
    }
}

pub fn linear(rng: &mut ChaCha8Rng) -> f64 {
    let (b, din, dout) = (
        rng.random_range(1..4),
        rng.random_range(1..6),
        rng.random_range(1..6),
    );
    let x = input(rng, &[b, din]);
    let w = input(rng, &[dout, din]);
    let bias = input(rng, &[dout]);
    if rng.random_bool(0.5) {
        check(&[x, w, bias], rng, |g, v| {
            g.linear(v[0], v[1], Some(v[2])).unwrap()
        })
    } else {
        check(&[x, w], rng, |g, v| g.linear(v[0], v[1], None).unwrap())
    }
}

pub fn pooling_and_gating(rng: &mut ChaCha8Rng) -> f64 {
    let (b, c, l) = (
        rng.random_range(1..3),
        rng.random_range(1..4),
        rng.random_range(1..6),
    );
    let x = input(rng, &[b, c, l]);
    if rng.random_bool(0.5) {
        check(&[x], rng, |g, v| g.global_avg_pool(v[0]).unwrap())
    } else {
        let s = input(rng, &[b, c]);
        check(&[x, s], rng, |g, v| g.channel_scale(v[0], v[1]).unwrap())
    }
}

pub fn concat(rng: &mut ChaCha8Rng) -> f64 {
    let (b, l) = (rng.random_range(1..3), rng.random_range(1..4));
    let parts: Vec<Input> = (0..rng.random_range(1..4))
        .map(|_| {
            let c = rng.random_range(1..4);
            input(rng, &[b, c, l])
        })
        .collect();
    check(&parts, rng, |g, v| g.concat(v).unwrap())
}

pub fn normalization(rng: &mut ChaCha8Rng) -> f64 {
    let (b, d) = (rng.random_range(1..4), rng.random_range(2..7));
    let x = input(rng, &[b, d]);
    if rng.random_bool(0.5) {
        check(&[x], rng, |g, v| g.l2_normalize(v[0]).unwrap())
    } else {
        check(&[x], rng, |g, v| g.softmax(v[0]).unwrap())
    }
}

pub fn row_selection(rng: &mut ChaCha8Rng) -> f64 {
    let (b, d) = (rng.random_range(2..6), rng.random_range(1..5));
    let x = input(rng, &[b, d]);
    let rows: Vec<usize> = (0..rng.random_range(1..6))
        .map(|_| rng.random_range(0..b))
        .collect();
    let groups: Vec<Vec<usize>> = (0..rng.random_range(1..4))
        .map(|_| {
            (0..rng.random_range(1..4))
                .map(|_| rng.random_range(0..b))
                .collect()
        })
        .collect();
    if rng.random_bool(0.5) {
        check(&[x], rng, |g, v| g.gather_rows(v[0], &rows).unwrap())
    } else {
        check(&[x], rng, |g, v| g.group_mean(v[0], &groups).unwrap())
    }
}

pub fn distance_and_triplet(rng: &mut ChaCha8Rng) -> f64 {
    let (m, gc, d) = (
        rng.random_range(1..5),
        rng.random_range(2..5),
        rng.random_range(1..5),
    );
    let a = input(rng, &[m, d]);
    let b = input(rng, &[gc, d]);
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..gc)).collect();
    let margin = rng.random_range(0.1..1.0);
    if rng.random_bool(0.5) {
        check(&[a, b], rng, |g, v| {
            g.pairwise_distance(v[0], v[1]).unwrap()
        })
    } else {
        check(&[a, b], rng, |g, v| {
            let dist = g.pairwise_distance(v[0], v[1]).unwrap();
            g.triplet_hinge(dist, &labels, margin).unwrap()
        })
    }
}

pub const OPS: &[(&str, fn(&mut ChaCha8Rng) -> f64)] = &[
    ("conv1d", conv1d),
    ("batchnorm", batchnorm),
    ("pointwise", pointwise),
    ("binary", binary_elementwise),
    ("linear", linear),
    ("gating", pooling_and_gating),
    ("concat", concat),
    ("normalize", normalization),
    ("rows", row_selection),
    ("distance", distance_and_triplet),
];

pub mod encoder {
    use super::*;
    use fsos_core::net::{Encoder, EncoderConfig, Fusion};

    pub const TOL_E2E: f64 = 1e-3;
    // Deep ReLU stacks put kinks close to the evaluation point; a smaller
    // step keeps the central-difference stencil on one side of them.
    const H_E2E: f64 = 1e-6;

    fn loss(enc: &Encoder<f64>, x: &[f64], batch: usize, r: &[f64], mode: Mode) -> f64 {
        let mut g = Graph::new();
        let e = enc.forward(&mut g, x, batch, mode).unwrap();
        let l = project(&mut g, e, r);
        g.scalar(l)
    }

    /// Relative error over every parameter of the tiny encoder.
    pub fn encoder_error(seed: u64, fusion: Fusion, se_enabled: bool, mode: Mode) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EncoderConfig {
            fusion,
            se_enabled,
            ..EncoderConfig::tiny()
        };
        let mut enc = Encoder::<f64>::new(cfg, seed).unwrap();
        if mode == Mode::Eval {
            // non-trivial running statistics
            for p in enc.params_mut().iter_mut().filter(|p| !p.trainable) {
                let is_var = p.name.ends_with("running_var");
                p.data.iter_mut().for_each(|v| {
                    *v = if is_var {
                        rng.random_range(0.5..2.0)
                    } else {
                        rng.random_range(-0.3..0.3)
                    }
                });
            }
        }
        let batch = 3;
        let x = rand_vec(&mut rng, batch * 5 * 16);
        let r = rand_vec(&mut rng, 64);

        let mut g = Graph::new();
        let e = enc.forward(&mut g, &x, batch, mode).unwrap();
        let l = project(&mut g, e, &r);
        let mut store = enc.params().clone();
        store.zero_grad();
        g.backward(l, &mut store);

        let ids: Vec<_> = enc
            .params()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect();
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for id in ids {
            for j in 0..enc.params().get(id).data.len() {
                let orig = enc.params().get(id).data[j];
                enc.params_mut().get_mut(id).data[j] = orig + H_E2E;
                let up = loss(&enc, &x, batch, &r, mode);
                enc.params_mut().get_mut(id).data[j] = orig - H_E2E;
                let down = loss(&enc, &x, batch, &r, mode);
                enc.params_mut().get_mut(id).data[j] = orig;
                let numeric = (up - down) / (2.0 * H_E2E);
                let analytic = store.get(id).grad[j];
                diff += (analytic - numeric).powi(2);
                na += analytic * analytic;
                nn += numeric * numeric;
            }
        }
        diff.sqrt() / (na.sqrt() + nn.sqrt())
    }

    /// Worst error over `INSTANCES` configurations, alternating fusion,
    /// SE and batchnorm mode.
    pub fn worst() -> f64 {
        (0..INSTANCES)
            .map(|i| {
                let fusion = if i % 2 == 0 {
                    Fusion::ConcatThenProject
                } else {
                    Fusion::SumAfterProject
                };
                let mode = if i % 4 < 3 { Mode::Train } else { Mode::Eval };
                encoder_error(1000 + i, fusion, i % 5 != 4, mode)
            })
            .fold(0.0, f64::max)
    }
}
