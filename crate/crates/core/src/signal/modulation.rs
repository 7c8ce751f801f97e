use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pulse::{convolve_same, gaussian_taps, raised_cosine_taps};
use super::{normalize_power, ChannelModel, ComplexSignal, OVERSAMPLING, ROLL_OFF};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Psk,
    Qam,
    Pam,
    Fsk,
    Cpfsk,
    Gfsk,
    Am,
    Fm,
    Pm,
}

impl Family {
    pub fn is_linear(self) -> bool {
        matches!(self, Family::Psk | Family::Qam | Family::Pam)
    }

    pub fn is_analog(self) -> bool {
        matches!(self, Family::Am | Family::Fm | Family::Pm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Analog {
    Dsb,
    DsbSc,
    Usb,
    Lsb,
    Fm,
    WideFm,
    Pm,
}

/// A modulation scheme identified by its canonical name.
///
/// Names are parsed leniently: `QAM16`, `16-QAM` and `16qam` all resolve to
/// `16QAM`, `PAM4` to `4PAM`, `AM-SC` to `AM-DSB-SC`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModulationScheme {
    family: Family,
    order: u32,
    name: String,
}

const ANALOG_NAMES: &[(&str, &str, Family, Analog)] = &[
    ("AMDSB", "AM-DSB", Family::Am, Analog::Dsb),
    ("AMDSBSC", "AM-DSB-SC", Family::Am, Analog::DsbSc),
    ("AMSC", "AM-DSB-SC", Family::Am, Analog::DsbSc),
    ("AMUSB", "AM-USB", Family::Am, Analog::Usb),
    ("AMSSB", "AM-SSB", Family::Am, Analog::Usb),
    ("AMLSB", "AM-LSB", Family::Am, Analog::Lsb),
    ("FM", "FM", Family::Fm, Analog::Fm),
    ("WBFM", "WBFM", Family::Fm, Analog::WideFm),
    ("PM", "PM", Family::Pm, Analog::Pm),
];

const DIGITAL: &[(&str, Family, &[u32])] = &[
    ("PSK", Family::Psk, &[8, 16, 32, 64]),
    ("QAM", Family::Qam, &[4, 8, 16, 32, 64, 128, 256]),
    ("PAM", Family::Pam, &[4, 8, 16]),
    ("FSK", Family::Fsk, &[2, 4, 8, 16]),
];

impl ModulationScheme {
    pub fn parse(name: &str) -> Result<Self> {
        let key: String = name
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_uppercase();
        let unsupported = || Error::UnsupportedScheme(name.to_string());

        if let Some(&(_, canon, family, _)) = ANALOG_NAMES.iter().find(|(k, ..)| *k == key) {
            return Ok(Self {
                family,
                order: 1,
                name: canon.to_string(),
            });
        }
        match key.as_str() {
            "BPSK" => return Ok(Self::digital(Family::Psk, 2, "BPSK")),
            "QPSK" => return Ok(Self::digital(Family::Psk, 4, "QPSK")),
            "CPFSK" => return Ok(Self::digital(Family::Cpfsk, 2, "CPFSK")),
            "GFSK" => return Ok(Self::digital(Family::Gfsk, 2, "GFSK")),
            _ => {}
        }
        // digits then family, or family then digits
        let split = key
            .find(|c: char| !c.is_ascii_digit())
            .ok_or_else(unsupported)?;
        let (order, fam) = if split > 0 {
            (&key[..split], &key[split..])
        } else {
            let d = key
                .find(|c: char| c.is_ascii_digit())
                .ok_or_else(unsupported)?;
            (&key[d..], &key[..d])
        };
        let order: u32 = order.parse().map_err(|_| unsupported())?;
        let &(tag, family, orders) = DIGITAL
            .iter()
            .find(|(tag, ..)| *tag == fam)
            .ok_or_else(unsupported)?;
        if !orders.contains(&order) {
            // BPSK / QPSK are reachable as 2PSK / 4PSK too
            return match (family, order) {
                (Family::Psk, 2) => Ok(Self::digital(Family::Psk, 2, "BPSK")),
                (Family::Psk, 4) => Ok(Self::digital(Family::Psk, 4, "QPSK")),
                _ => Err(unsupported()),
            };
        }
        Ok(Self::digital(family, order, &format!("{order}{tag}")))
    }

    fn digital(family: Family, order: u32, name: &str) -> Self {
        Self {
            family,
            order,
            name: name.to_string(),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn analog(&self) -> Option<Analog> {
        ANALOG_NAMES
            .iter()
            .find(|(_, canon, ..)| *canon == self.name)
            .map(|&(.., a)| a)
    }

    /// Output samples per symbol (analog signals use the nominal rate).
    pub fn samples_per_symbol(&self) -> usize {
        match self.family {
            Family::Fsk | Family::Cpfsk | Family::Gfsk => 8,
            _ => OVERSAMPLING,
        }
    }

    /// Unit-average-power reference constellation for PSK, QAM and PAM.
    /// Index `i` is the point transmitted for symbol value `i`.
    pub fn constellation(&self) -> Option<Vec<Complex64>> {
        let m = self.order as usize;
        let points = match self.family {
            Family::Psk => psk_points(m),
            Family::Qam => qam_points(m),
            Family::Pam => {
                let mut p = vec![Complex64::new(0.0, 0.0); m];
                for k in 0..m {
                    p[gray(k)] = Complex64::new((2 * k) as f64 - (m - 1) as f64, 0.0);
                }
                p
            }
            _ => return None,
        };
        Some(unit_power(points))
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl TryFrom<String> for ModulationScheme {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<ModulationScheme> for String {
    fn from(s: ModulationScheme) -> String {
        s.name
    }
}

impl std::str::FromStr for ModulationScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

fn gray(k: usize) -> usize {
    k ^ (k >> 1)
}

fn unit_power(mut points: Vec<Complex64>) -> Vec<Complex64> {
    let p = points.iter().map(|c| c.norm_sqr()).sum::<f64>() / points.len() as f64;
    let g = 1.0 / p.sqrt();
    points.iter_mut().for_each(|c| *c *= g);
    points
}

fn psk_points(m: usize) -> Vec<Complex64> {
    match m {
        2 => vec![Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)],
        4 => vec![
            Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
            Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
        ],
        _ => {
            let mut p = vec![Complex64::new(0.0, 0.0); m];
            for k in 0..m {
                p[gray(k)] = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64);
            }
            p
        }
    }
}

fn qam_points(m: usize) -> Vec<Complex64> {
    let bits = m.trailing_zeros();
    if bits % 2 == 0 {
        let side = 1usize << (bits / 2);
        let mut p = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..side {
            for q in 0..side {
                let idx = gray(i) * side + gray(q);
                p[idx] = Complex64::new(
                    (2 * i) as f64 - (side - 1) as f64,
                    (2 * q) as f64 - (side - 1) as f64,
                );
            }
        }
        p
    } else if m == 8 {
        let mut p = Vec::with_capacity(8);
        for q in [-1.0, 1.0] {
            for i in [-3.0, -1.0, 1.0, 3.0] {
                p.push(Complex64::new(i, q));
            }
        }
        p
    } else {
        // cross constellation: square grid with the corners removed
        let side = if m == 32 { 6 } else { 12 };
        let corner = (side - (1usize << ((bits + 1) / 2 - 1))) / 2;
        let mut p = Vec::with_capacity(m);
        for q in 0..side {
            for i in 0..side {
                let edge_i = i < corner || i >= side - corner;
                let edge_q = q < corner || q >= side - corner;
                if !(edge_i && edge_q) {
                    p.push(Complex64::new(
                        (2 * i) as f64 - (side - 1) as f64,
                        (2 * q) as f64 - (side - 1) as f64,
                    ));
                }
            }
        }
        debug_assert_eq!(p.len(), m);
        p
    }
}

/// Map symbol values onto the reference constellation (no pulse shaping).
pub fn map_symbols(scheme: &ModulationScheme, symbols: &[usize]) -> Result<Vec<Complex64>> {
    let points = scheme
        .constellation()
        .ok_or_else(|| Error::UnsupportedScheme(format!("{scheme} has no constellation")))?;
    symbols
        .iter()
        .map(|&s| {
            points.get(s).copied().ok_or_else(|| {
                Error::InvalidConfig(format!("symbol {s} out of range for {scheme}"))
            })
        })
        .collect()
}

/// Uniformly random constellation points, before any filtering.
pub fn draw_symbols(
    scheme: &ModulationScheme,
    num_symbols: usize,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let m = scheme.order as usize;
    let mut r = rng::rng_for(seed, &[0]);
    let idx: Vec<usize> = (0..num_symbols).map(|_| r.random_range(0..m)).collect();
    map_symbols(scheme, &idx)
}

/// Produce a clean, unit-power baseband signal of
/// `num_symbols * scheme.samples_per_symbol()` samples.
pub fn modulate(scheme: &ModulationScheme, num_symbols: usize, seed: u64) -> Result<ComplexSignal> {
    if num_symbols < 8 {
        return Err(Error::InvalidLength(format!(
            "need at least 8 symbols, got {num_symbols}"
        )));
    }
    let sps = scheme.samples_per_symbol();
    let len = num_symbols * sps;
    let mut samples = match scheme.family {
        Family::Psk | Family::Qam | Family::Pam => {
            let symbols = draw_symbols(scheme, num_symbols, seed)?;
            let mut up = vec![Complex64::new(0.0, 0.0); len];
            for (i, s) in symbols.into_iter().enumerate() {
                up[i * sps] = s;
            }
            convolve_same(&up, &raised_cosine_taps(ROLL_OFF, sps, 8))
        }
        Family::Fsk => {
            let m = scheme.order as usize;
            let mut r = rng::rng_for(seed, &[0]);
            // tones evenly spread over ±0.25 cycles/sample
            let freqs: Vec<f64> = (0..m)
                .map(|k| 0.25 * ((2 * k) as f64 - (m - 1) as f64) / (m - 1) as f64)
                .collect();
            let inst: Vec<f64> = (0..num_symbols)
                .flat_map(|_| {
                    let f = freqs[r.random_range(0..m)];
                    std::iter::repeat_n(2.0 * PI * f, sps)
                })
                .collect();
            phase_modulate(&integrate(&inst))
        }
        Family::Cpfsk | Family::Gfsk => {
            let h = 0.5;
            let mut r = rng::rng_for(seed, &[0]);
            let nrz: Vec<f64> = (0..num_symbols)
                .flat_map(|_| {
                    let b = if r.random_bool(0.5) { 1.0 } else { -1.0 };
                    std::iter::repeat_n(b, sps)
                })
                .collect();
            let freq = if scheme.family == Family::Gfsk {
                let taps = gaussian_taps(0.35, sps, 4);
                let delay = taps.len() / 2;
                (0..len)
                    .map(|n| {
                        taps.iter()
                            .enumerate()
                            .filter_map(|(k, &t)| {
                                let i = (n + delay).checked_sub(k)?;
                                nrz.get(i).map(|v| v * t)
                            })
                            .sum::<f64>()
                    })
                    .collect()
            } else {
                nrz
            };
            let inst: Vec<f64> = freq.iter().map(|f| PI * h * f / sps as f64).collect();
            phase_modulate(&integrate(&inst))
        }
        Family::Am | Family::Fm | Family::Pm => {
            let analog = scheme
                .analog()
                .expect("analog registry covers every analog family");
            analog_signal(analog, len, seed)
        }
    };
    normalize_power(&mut samples);
    Ok(ComplexSignal {
        samples,
        modulation: scheme.clone(),
        snr_db: f64::INFINITY,
        channel: ChannelModel::ideal(),
        seed,
    })
}

fn integrate(x: &[f64]) -> Vec<f64> {
    x.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn phase_modulate(phase: &[f64]) -> Vec<Complex64> {
    phase
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p))
        .collect()
}

/// Band-limited random message: 8 random-phase tones below 0.1 cycles per
/// sample, peak-normalized. Also returns its Hilbert transform.
fn message(len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::rng_for(seed, &[1]);
    let tones: Vec<(f64, f64, f64)> = (0..8)
        .map(|_| {
            (
                r.random_range(0.5..1.0),
                r.random_range(0.002..0.1),
                r.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let eval = |n: usize, quad: bool| -> f64 {
        tones
            .iter()
            .map(|&(a, f, ph)| {
                let arg = 2.0 * PI * f * n as f64 + ph;
                a * if quad { arg.sin() } else { arg.cos() }
            })
            .sum()
    };
    let m: Vec<f64> = (0..len).map(|n| eval(n, false)).collect();
    let mh: Vec<f64> = (0..len).map(|n| eval(n, true)).collect();
    let peak = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    (
        m.iter().map(|v| v / peak).collect(),
        mh.iter().map(|v| v / peak).collect(),
    )
}

fn analog_signal(kind: Analog, len: usize, seed: u64) -> Vec<Complex64> {
    let (m, mh) = message(len, seed);
    match kind {
        Analog::Dsb => m
            .iter()
            .map(|v| Complex64::new(1.0 + 0.5 * v, 0.0))
            .collect(),
        Analog::DsbSc => m.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        Analog::Usb => m
            .iter()
            .zip(&mh)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect(),
        Analog::Lsb => m
            .iter()
            .zip(&mh)
            .map(|(&a, &b)| Complex64::new(a, -b))
            .collect(),
        Analog::Fm | Analog::WideFm => {
            let dev = if kind == Analog::Fm { 0.05 } else { 0.15 };
            let inst: Vec<f64> = m.iter().map(|v| 2.0 * PI * dev * v).collect();
            phase_modulate(&integrate(&inst))
        }
        Analog::Pm => m
            .iter()
            .map(|v| Complex64::from_polar(1.0, PI / 2.0 * v))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme(name: &str) -> ModulationScheme {
        ModulationScheme::parse(name).unwrap()
    }

    #[test]
    fn parses_aliases_to_canonical_names() {
        assert_eq!(scheme("QAM16").name(), "16QAM");
        assert_eq!(scheme("16-qam").name(), "16QAM");
        assert_eq!(scheme("PAM4").name(), "4PAM");
        assert_eq!(scheme("2-FSK").name(), "2FSK");
        assert_eq!(scheme("AM-SC").name(), "AM-DSB-SC");
        assert_eq!(scheme("8PSK").order(), 8);
        assert_eq!(scheme("wbfm").family(), Family::Fm);
        assert!(ModulationScheme::parse("17QAM").is_err());
        assert!(ModulationScheme::parse("OFDM").is_err());
    }

    #[test]
    fn orders_are_powers_of_two_or_one() {
        for n in [
            "BPSK", "QPSK", "8PSK", "64PSK", "4QAM", "8QAM", "32QAM", "128QAM", "256QAM", "16PAM",
            "16FSK", "CPFSK", "GFSK", "AM-DSB", "FM", "PM",
        ] {
            let s = scheme(n);
            if s.family().is_analog() {
                assert_eq!(s.order(), 1);
            } else {
                assert!(s.order().is_power_of_two(), "{n}");
            }
        }
    }

    #[test]
    fn bpsk_maps_bits_to_antipodal_points() {
        let pts = map_symbols(&scheme("BPSK"), &[1, 0, 1, 1]).unwrap();
        let re: Vec<f64> = pts.iter().map(|c| c.re).collect();
        assert_eq!(re, vec![1.0, -1.0, 1.0, 1.0]);
        assert!(pts.iter().all(|c| c.im == 0.0));
    }

    #[test]
    fn qpsk_symbols_lie_on_the_unit_circle_diagonals() {
        for seed in 0..5 {
            let syms = draw_symbols(&scheme("QPSK"), 64, seed).unwrap();
            for s in syms {
                assert!((s.re.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
                assert!((s.im.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constellations_have_unit_power_and_distinct_points() {
        for n in [
            "BPSK", "QPSK", "8PSK", "4QAM", "8QAM", "16QAM", "32QAM", "64QAM", "128QAM", "256QAM",
            "8PAM",
        ] {
            let pts = scheme(n).constellation().unwrap();
            assert_eq!(pts.len(), scheme(n).order() as usize);
            let p = pts.iter().map(|c| c.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((p - 1.0).abs() < 1e-12, "{n}");
            for i in 0..pts.len() {
                for j in 0..i {
                    assert!((pts[i] - pts[j]).norm() > 1e-6, "{n}");
                }
            }
        }
    }

    #[test]
    fn qam16_monte_carlo_power_is_one() {
        // the grid is normalized analytically; check the empirical average
        let syms = draw_symbols(&scheme("16QAM"), 10_000, 3).unwrap();
        let p = syms.iter().map(|c| c.norm_sqr()).sum::<f64>() / syms.len() as f64;
        assert!((p - 1.0).abs() < 0.02, "{p}");
    }

    #[test]
    fn modulate_produces_unit_power_of_expected_length() {
        for n in [
            "BPSK", "16QAM", "4PAM", "2FSK", "16FSK", "CPFSK", "GFSK", "AM-DSB", "AM-SSB",
            "AM-LSB", "FM", "WBFM", "PM",
        ] {
            let s = modulate(&scheme(n), 64, 11).unwrap();
            assert_eq!(s.len(), 64 * scheme(n).samples_per_symbol());
            assert!((s.mean_power() - 1.0).abs() < 1e-6, "{n}");
            assert!(s.is_finite());
            assert_eq!(s.snr_db, f64::INFINITY);
        }
    }

    #[test]
    fn modulate_is_deterministic_and_rejects_short_bursts() {
        let a = modulate(&scheme("8PSK"), 32, 5).unwrap();
        let b = modulate(&scheme("8PSK"), 32, 5).unwrap();
        let c = modulate(&scheme("8PSK"), 32, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
        assert!(matches!(
            modulate(&scheme("BPSK"), 7, 0),
            Err(Error::InvalidLength(_))
        ));
    }

    #[test]
    fn shaped_signal_passes_through_symbols() {
        // raised cosine is Nyquist: symbol instants keep the (scaled) points
        let s = scheme("QPSK");
        let sig = modulate(&s, 64, 9).unwrap();
        let syms = draw_symbols(&s, 64, 9).unwrap();
        let sps = s.samples_per_symbol();
        let gain = sig.samples[20 * sps].norm() / syms[20].norm();
        for i in 10..50 {
            let expect = syms[i] * gain;
            assert!((sig.samples[i * sps] - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn serde_uses_canonical_name() {
        let s = scheme("QAM64");
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(js, "\"64QAM\"");
        let back: ModulationScheme = serde_json::from_str("\"qam64\"").unwrap();
        assert_eq!(back, s);
    }
}
