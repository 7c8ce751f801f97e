use std::f64::consts::PI;

use num_complex::Complex64;

/// Raised-cosine impulse response spanning `span` symbols on each side of
/// the peak, normalized to unit peak (so the shaped symbol instants keep
/// their constellation values).
pub fn raised_cosine_taps(beta: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps) as isize;
    (-half..=half)
        .map(|i| {
            let t = i as f64 / sps as f64;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (PI * t).sin() / (PI * t)
            };
            let denom = 1.0 - (2.0 * beta * t).powi(2);
            if denom.abs() < 1e-12 {
                // limit at t = ±1/(2β)
                PI / 4.0 * sinc_of(1.0 / (2.0 * beta))
            } else {
                sinc * (PI * beta * t).cos() / denom
            }
        })
        .collect()
}

fn sinc_of(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Gaussian frequency-shaping filter with bandwidth-time product `bt`,
/// normalized to unit sum.
pub fn gaussian_taps(bt: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as isize;
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt) * sps as f64;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Linear convolution trimmed to the input length, aligned on the filter
/// center (odd-length filters).
pub fn convolve_same(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    let delay = taps.len() / 2;
    (0..x.len())
        .map(|n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &h) in taps.iter().enumerate() {
                let idx = n as isize + delay as isize - k as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    acc += x[idx as usize] * h;
                }
            }
            acc
        })
        .collect()
}
