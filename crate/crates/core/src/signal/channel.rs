use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_power, ComplexSignal};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    Ideal,
    AwgnOnly,
    StaticMultipath,
    Rayleigh,
    Rician,
    NakagamiM,
}

/// Block-fading multipath channel: one tap realization per signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub num_taps: usize,
    pub rician_k: f64,
    pub nakagami_m: f64,
    pub tap_delays: Vec<usize>,
    /// Linear scale, summing to one.
    pub tap_powers: Vec<f64>,
}

const DEFAULT_RICIAN_K: f64 = 3.0;
const DEFAULT_NAKAGAMI_M: f64 = 2.0;

fn default_profile(num_taps: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let delays = match num_taps {
        4 => vec![0, 2, 4, 6],
        6 => vec![0, 1, 2, 4, 6, 8],
        n => {
            return Err(Error::InvalidChannel(format!(
                "multipath channels use 4 or 6 taps, got {n}"
            )))
        }
    };
    let raw: Vec<f64> = (0..num_taps).map(|k| 0.5f64.powi(k as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok((delays, raw.iter().map(|p| p / total).collect()))
}

impl ChannelModel {
    fn single(kind: ChannelKind) -> Self {
        Self {
            kind,
            num_taps: 1,
            rician_k: DEFAULT_RICIAN_K,
            nakagami_m: DEFAULT_NAKAGAMI_M,
            tap_delays: vec![0],
            tap_powers: vec![1.0],
        }
    }

    pub fn ideal() -> Self {
        Self::single(ChannelKind::Ideal)
    }

    pub fn awgn_only() -> Self {
        Self::single(ChannelKind::AwgnOnly)
    }

    /// Multipath channel with the default exponential power-delay profile.
    pub fn multipath(kind: ChannelKind, num_taps: usize) -> Result<Self> {
        if matches!(kind, ChannelKind::Ideal | ChannelKind::AwgnOnly) {
            return Err(Error::InvalidChannel(format!("{kind:?} has a single tap")));
        }
        let (tap_delays, tap_powers) = default_profile(num_taps)?;
        Ok(Self {
            kind,
            num_taps,
            rician_k: DEFAULT_RICIAN_K,
            nakagami_m: DEFAULT_NAKAGAMI_M,
            tap_delays,
            tap_powers,
        })
    }

    pub fn rayleigh(num_taps: usize) -> Result<Self> {
        Self::multipath(ChannelKind::Rayleigh, num_taps)
    }

    pub fn rician(num_taps: usize, k: f64) -> Result<Self> {
        let mut c = Self::multipath(ChannelKind::Rician, num_taps)?;
        c.rician_k = k;
        c.validate()?;
        Ok(c)
    }

    pub fn nakagami(num_taps: usize, m: f64) -> Result<Self> {
        let mut c = Self::multipath(ChannelKind::NakagamiM, num_taps)?;
        c.nakagami_m = m;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidChannel(msg));
        let single = matches!(self.kind, ChannelKind::Ideal | ChannelKind::AwgnOnly);
        if single != (self.num_taps == 1) {
            return bad(format!("{:?} with {} taps", self.kind, self.num_taps));
        }
        if ![1, 4, 6].contains(&self.num_taps) {
            return bad(format!("unsupported tap count {}", self.num_taps));
        }
        if self.tap_delays.len() != self.num_taps || self.tap_powers.len() != self.num_taps {
            return bad("tap profile length differs from num_taps".into());
        }
        if self.tap_powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("tap powers must be finite and non-negative".into());
        }
        let total: f64 = self.tap_powers.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("tap powers sum to {total}, expected 1"));
        }
        if !(self.rician_k.is_finite() && self.rician_k >= 0.0) {
            return bad(format!("rician k {} out of range", self.rician_k));
        }
        if !(self.nakagami_m.is_finite() && self.nakagami_m >= 0.5) {
            return bad(format!("nakagami m {} below 0.5", self.nakagami_m));
        }
        Ok(())
    }

    /// Short identifier used in dataset metadata (`rayleigh4`, `awgn`, ...).
    pub fn spec_name(&self) -> String {
        let base = match self.kind {
            ChannelKind::Ideal => return "ideal".into(),
            ChannelKind::AwgnOnly => return "awgn".into(),
            ChannelKind::StaticMultipath => "static",
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::Rician => "rician",
            ChannelKind::NakagamiM => "nakagami",
        };
        format!("{base}{}", self.num_taps)
    }

    /// Inverse of [`spec_name`](Self::spec_name). Fading kinds take their
    /// default parameters (Rician k = 3, Nakagami m = 2).
    pub fn from_spec(spec: &str) -> Result<Self> {
        let s = spec.trim().to_ascii_lowercase();
        match s.as_str() {
            "ideal" => return Ok(Self::ideal()),
            "awgn" => return Ok(Self::awgn_only()),
            _ => {}
        }
        let split = s
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| Error::InvalidChannel(format!("missing tap count in '{spec}'")))?;
        let taps: usize = s[split..]
            .parse()
            .map_err(|_| Error::InvalidChannel(format!("bad tap count in '{spec}'")))?;
        let kind = match &s[..split] {
            "static" => ChannelKind::StaticMultipath,
            "rayleigh" => ChannelKind::Rayleigh,
            "rician" => ChannelKind::Rician,
            "nakagami" => ChannelKind::NakagamiM,
            other => {
                return Err(Error::InvalidChannel(format!(
                    "unknown channel kind '{other}'"
                )))
            }
        };
        Self::multipath(kind, taps)
    }

    /// Draw one set of complex tap gains.
    pub fn realize(&self, seed: u64) -> Result<Vec<Complex64>> {
        self.validate()?;
        let mut r = rng::rng_for(seed, &[2]);
        let cgauss = |var: f64, r: &mut rng::Rng| {
            let s = (var / 2.0).sqrt();
            let re: f64 = r.sample(StandardNormal);
            let im: f64 = r.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        };
        let taps = match self.kind {
            ChannelKind::Ideal | ChannelKind::AwgnOnly => vec![Complex64::new(1.0, 0.0)],
            ChannelKind::StaticMultipath => self
                .tap_powers
                .iter()
                .map(|p| Complex64::from_polar(p.sqrt(), r.random_range(0.0..2.0 * PI)))
                .collect(),
            ChannelKind::Rayleigh => self.tap_powers.iter().map(|&p| cgauss(p, &mut r)).collect(),
            ChannelKind::Rician => {
                let k = self.rician_k;
                self.tap_powers
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        if i == 0 {
                            let los = Complex64::from_polar(
                                (k / (k + 1.0) * p).sqrt(),
                                r.random_range(0.0..2.0 * PI),
                            );
                            los + cgauss(p / (k + 1.0), &mut r)
                        } else {
                            cgauss(p, &mut r)
                        }
                    })
                    .collect()
            }
            ChannelKind::NakagamiM => {
                let m = self.nakagami_m;
                self.tap_powers
                    .iter()
                    .map(|&p| {
                        let amp = if p > 0.0 {
                            let g = Gamma::new(m, p / m).expect("validated shape and scale");
                            g.sample(&mut r).sqrt()
                        } else {
                            0.0
                        };
                        Complex64::from_polar(amp, r.random_range(0.0..2.0 * PI))
                    })
                    .collect()
            }
        };
        Ok(taps)
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec_name())
    }
}

/// Convolve with one tap realization and renormalize to unit power.
/// Single-tap channels return the input unchanged.
pub fn apply_channel(
    clean: &ComplexSignal,
    channel: &ChannelModel,
    seed: u64,
) -> Result<ComplexSignal> {
    channel.validate()?;
    let mut out = clean.clone();
    out.channel = channel.clone();
    if channel.num_taps == 1 {
        return Ok(out);
    }
    let taps = channel.realize(seed)?;
    let x = &clean.samples;
    for (n, y) in out.samples.iter_mut().enumerate() {
        *y = channel
            .tap_delays
            .iter()
            .zip(&taps)
            .filter(|(&d, _)| d <= n)
            .map(|(&d, &h)| h * x[n - d])
            .sum();
    }
    normalize_power(&mut out.samples);
    Ok(out)
}
