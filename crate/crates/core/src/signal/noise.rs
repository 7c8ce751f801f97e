use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::ComplexSignal;
use crate::rng;

/// Add circular complex Gaussian noise of variance `10^(-snr_db/10)`
/// (the input is assumed to have unit power). `+inf` adds nothing.
pub fn add_awgn(signal: &ComplexSignal, snr_db: f64, seed: u64) -> ComplexSignal {
    let mut out = signal.clone();
    out.snr_db = snr_db;
    let variance = 10f64.powf(-snr_db / 10.0);
    if variance == 0.0 {
        return out;
    }
    let sigma = (variance / 2.0).sqrt();
    let mut r = rng::rng_for(seed, &[3]);
    for s in out.samples.iter_mut() {
        let re: f64 = r.sample(StandardNormal);
        let im: f64 = r.sample(StandardNormal);
        *s += Complex64::new(re * sigma, im * sigma);
    }
    out
}
