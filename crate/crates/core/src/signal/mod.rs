//! Labeled complex baseband signal synthesis: modulation, pulse shaping,
//! multipath fading and calibrated AWGN.

mod channel;
mod dataset;
mod modulation;
mod noise;
mod pulse;

pub use channel::{apply_channel, ChannelKind, ChannelModel};
pub use dataset::{generate_dataset, generate_records, synthesize_record, DatasetConfig, SnrGrid};
pub use modulation::{draw_symbols, map_symbols, modulate, Family, ModulationScheme};
pub use noise::add_awgn;
pub use pulse::{convolve_same, gaussian_taps, raised_cosine_taps};

use num_complex::Complex64;

/// Oversampling factor for linearly modulated and analog signals.
pub const OVERSAMPLING: usize = 2;
/// Raised-cosine roll-off used for linear modulations.
pub const ROLL_OFF: f64 = 0.35;

/// A complex baseband sequence together with how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub modulation: ModulationScheme,
    /// `f64::INFINITY` for a noiseless signal.
    pub snr_db: f64,
    pub channel: ChannelModel,
    pub seed: u64,
}

impl ComplexSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn is_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.re.is_finite() && s.im.is_finite())
    }
}

pub(crate) fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Scale to unit average power. All-zero input is left untouched.
pub(crate) fn normalize_power(x: &mut [Complex64]) {
    let p = mean_power(x);
    if p > 0.0 {
        let g = 1.0 / p.sqrt();
        x.iter_mut().for_each(|s| *s *= g);
    }
}
