//! IQ, amplitude/phase and Welch PSD representations of a received signal.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsdScale {
    Linear,
    Log10,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchParams {
    pub segment_len: usize,
    pub overlap: usize,
    pub window: Window,
    pub scale: PsdScale,
    /// Values are clamped to this floor before taking log10.
    pub log_floor: f64,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            segment_len: 64,
            overlap: 32,
            window: Window::Hann,
            scale: PsdScale::Log10,
            log_floor: 1e-12,
        }
    }
}

impl WelchParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.segment_len == 0 || self.segment_len > n {
            return Err(Error::InvalidWelchParams(format!(
                "segment length {} must be in 1..={n}",
                self.segment_len
            )));
        }
        if self.overlap >= self.segment_len {
            return Err(Error::InvalidWelchParams(format!(
                "overlap {} must be below the segment length {}",
                self.overlap, self.segment_len
            )));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::InvalidWelchParams(
                "log floor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of segments averaged for a signal of length `n`.
    pub fn num_segments(&self, n: usize) -> usize {
        (n - self.segment_len) / (self.segment_len - self.overlap) + 1
    }
}

/// The three sequence views of one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiSequence {
    /// Rows I and Q.
    pub iq: [Vec<f64>; 2],
    /// Rows amplitude and phase.
    pub ap: [Vec<f64>; 2],
    pub psd: Vec<f64>,
    pub length_n: usize,
    pub psd_bins: usize,
}

pub fn to_iq(samples: &[Complex64]) -> [Vec<f64>; 2] {
    [
        samples.iter().map(|s| s.re).collect(),
        samples.iter().map(|s| s.im).collect(),
    ]
}

/// Amplitude and quadrant-aware phase in (−π, π]; the origin maps to 0.
pub fn to_ap(samples: &[Complex64]) -> [Vec<f64>; 2] {
    let amp = samples.iter().map(|s| s.re.hypot(s.im)).collect();
    let phase = samples
        .iter()
        .map(|s| {
            if s.re == 0.0 && s.im == 0.0 {
                0.0
            } else {
                // atan2 returns −π for (−x, −0.0); fold onto +π
                let p = s.im.atan2(s.re);
                if p <= -PI {
                    PI
                } else {
                    p
                }
            }
        })
        .collect();
    [amp, phase]
}

fn window(kind: Window, len: usize) -> Vec<f64> {
    match kind {
        Window::Rectangular => vec![1.0; len],
        // periodic Hann
        Window::Hann => (0..len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
            .collect(),
    }
}

/// Welch PSD estimate: two-sided, DC-centered, `segment_len` bins, scaled
/// so that `sum(psd) / segment_len` equals the mean signal power.
pub fn to_psd(samples: &[Complex64], params: &WelchParams) -> Result<Vec<f64>> {
    let n = samples.len();
    params.validate(n)?;
    let seg = params.segment_len;
    let hop = seg - params.overlap;
    let w = window(params.window, seg);
    let energy: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let k = params.num_segments(n);

    let mut acc = vec![0.0; seg];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    for s in 0..k {
        let start = s * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = samples[start + i] * w[i];
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let norm = 1.0 / (k as f64 * energy);
    // fftshift: bin 0 of the output is the most negative frequency
    let half = seg / 2;
    let mut psd: Vec<f64> = (0..seg)
        .map(|i| acc[(i + seg - half) % seg] * norm)
        .collect();
    if params.scale == PsdScale::Log10 {
        psd.iter_mut()
            .for_each(|v| *v = v.max(params.log_floor).log10());
    }
    Ok(psd)
}

/// Output index of DFT bin `k` (frequency `k / segment_len`) after centering.
pub fn centered_bin(k: usize, segment_len: usize) -> usize {
    (k + segment_len / 2) % segment_len
}

pub fn to_multisequence(signal: &ComplexSignal, params: &WelchParams) -> Result<MultiSequence> {
    let x = &signal.samples;
    let psd = to_psd(x, params)?;
    Ok(MultiSequence {
        iq: to_iq(x),
        ap: to_ap(x),
        psd_bins: psd.len(),
        psd,
        length_n: x.len(),
    })
}

/// Rescale to zero mean and unit variance; near-constant rows become zero.
pub fn standardize(row: &[f64]) -> Vec<f64> {
    if row.is_empty() {
        return Vec::new();
    }
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var.sqrt() < 1e-12 {
        return vec![0.0; row.len()];
    }
    let inv = 1.0 / var.sqrt();
    row.iter().map(|v| (v - mean) * inv).collect()
}

impl MultiSequence {
    /// Encoder input rows: standardized IQ (2 rows), AP (2 rows) and PSD
    /// (1 row, zero-padded to N), each of length N.
    pub fn encoder_rows(&self, standardize_rows: bool) -> [Vec<f64>; 5] {
        let prep = |r: &[f64]| {
            if standardize_rows {
                standardize(r)
            } else {
                r.to_vec()
            }
        };
        let mut psd = prep(&self.psd);
        psd.resize(self.length_n.max(self.psd_bins), 0.0);
        psd.truncate(self.length_n);
        [
            prep(&self.iq[0]),
            prep(&self.iq[1]),
            prep(&self.ap[0]),
            prep(&self.ap[1]),
            psd,
        ]
    }
}
