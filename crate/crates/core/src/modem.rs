//! Bit mapping, transmission and maximum-likelihood detection.
//!
//! A transmitted word carries `log2 P` pattern bits followed by `log2 M`
//! symbol bits. The receiver knows the channel and picks the
//! `(pattern, symbol)` hypothesis maximising
//!
//! ```text
//! D(q, x) = Σ_n Re{ y_n^* · √ρ H[n,q] x } − (ρ/2) |H[n,q] x|²
//! ```
//!
//! which is the Euclidean-distance rule with the hypothesis-independent
//! `|y|²` dropped. Indices are zero-based throughout.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModemError {
    #[error("expected {expected} bits, got {got}")]
    BitLength { expected: usize, got: usize },
    #[error("bit values must be 0 or 1, found {0}")]
    InvalidBit(u8),
    #[error("{what} must be a power of two, got {value}")]
    NotPowerOfTwo { what: &'static str, value: usize },
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange { what: &'static str, index: usize, size: usize },
    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),
    #[error("noise vector has {got} entries, channel has {expected} receive antennas")]
    NoiseLength { expected: usize, got: usize },
    #[error("SNR must be finite and >= 0, got {0}")]
    BadSnr(f64),
}

/// How bit labels are attached to constellation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Labeling {
    #[default]
    Natural,
    Gray,
}

impl fmt::Display for Labeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Natural => "natural",
            Self::Gray => "gray",
        })
    }
}

impl FromStr for Labeling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "natural" => Ok(Self::Natural),
            "gray" => Ok(Self::Gray),
            _ => Err(format!("unknown labeling {s:?} (expected natural or gray)")),
        }
    }
}

/// Unit-average-energy symbol alphabet with bit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    name: String,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    by_label: Vec<usize>,
    bits: usize,
}

impl Constellation {
    /// `labels[m]` is the bit label of `points[m]`, read MSB first.
    pub fn new(name: impl Into<String>, points: Vec<Complex64>, labels: Vec<u32>) -> Result<Self, ModemError> {
        let m = points.len();
        if m == 0 || !m.is_power_of_two() {
            return Err(ModemError::NotPowerOfTwo { what: "constellation size", value: m });
        }
        if labels.len() != m {
            return Err(ModemError::InvalidConstellation(format!("{m} points but {} labels", labels.len())));
        }
        let energy = points.iter().map(|x| x.norm_sqr()).sum::<f64>() / m as f64;
        if (energy - 1.0).abs() > 1e-12 {
            return Err(ModemError::InvalidConstellation(format!("mean energy is {energy}, expected 1")));
        }
        let mut by_label = vec![usize::MAX; m];
        for (i, &l) in labels.iter().enumerate() {
            let slot = by_label
                .get_mut(l as usize)
                .ok_or_else(|| ModemError::InvalidConstellation(format!("label {l} needs more than log2(M) bits")))?;
            if *slot != usize::MAX {
                return Err(ModemError::InvalidConstellation(format!("label {l} used twice")));
            }
            *slot = i;
        }
        Ok(Self { name: name.into(), points, labels, by_label, bits: m.trailing_zeros() as usize })
    }

    /// `{+1, −1}` labelled `0`, `1`.
    pub fn bpsk() -> Self {
        Self::new("bpsk", vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)], vec![0, 1]).expect("valid")
    }

    /// `(±1 ± j)/√2`, points ordered counter-clockwise from the first quadrant.
    pub fn qpsk(labeling: Labeling) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let points = vec![
            Complex64::new(s, s),
            Complex64::new(-s, s),
            Complex64::new(-s, -s),
            Complex64::new(s, -s),
        ];
        let labels = match labeling {
            Labeling::Natural => vec![0, 1, 2, 3],
            Labeling::Gray => vec![0, 1, 3, 2],
        };
        Self::new("qpsk", points, labels).expect("valid")
    }

    /// Single point `1`: pure pattern keying, no symbol bits.
    pub fn ssk() -> Self {
        Self::new("ssk", vec![Complex64::new(1.0, 0.0)], vec![0]).expect("valid")
    }

    /// `bpsk`, `qpsk` or `ssk`.
    pub fn by_name(name: &str, labeling: Labeling) -> Result<Self, ModemError> {
        match name {
            "bpsk" => Ok(Self::bpsk()),
            "qpsk" => Ok(Self::qpsk(labeling)),
            "ssk" => Ok(Self::ssk()),
            _ => Err(ModemError::InvalidConstellation(format!("unknown constellation {name:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, m: usize) -> Complex64 {
        self.points[m]
    }

    pub fn label(&self, m: usize) -> u32 {
        self.labels[m]
    }

    /// Point index carrying bit label `label`.
    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.by_label.get(label as usize).copied()
    }
}

/// A transmit hypothesis: pattern `p` and constellation point `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxWord {
    pub p: usize,
    pub m: usize,
}

/// Received vector and the SNR it was produced at.
#[derive(Debug, Clone, PartialEq)]
pub struct RxObservation {
    pub y: Vec<Complex64>,
    pub rho: f64,
}

fn log2_exact(what: &'static str, n: usize) -> Result<usize, ModemError> {
    if n == 0 || !n.is_power_of_two() {
        return Err(ModemError::NotPowerOfTwo { what, value: n });
    }
    Ok(n.trailing_zeros() as usize)
}

/// Bits per transmitted word, `log2 P + log2 M`.
pub fn bits_per_word(n_patterns: usize, c: &Constellation) -> Result<usize, ModemError> {
    Ok(log2_exact("pattern count", n_patterns)? + c.bits_per_symbol())
}

/// Packs the word's bit label into an integer, pattern bits high.
pub fn word_label(w: TxWord, c: &Constellation) -> u32 {
    ((w.p as u32) << c.bits_per_symbol()) | c.label(w.m)
}

/// Inverse of [`word_label`].
pub fn word_from_label(label: u32, n_patterns: usize, c: &Constellation) -> Result<TxWord, ModemError> {
    let b = c.bits_per_symbol();
    let p = (label >> b) as usize;
    if p >= n_patterns {
        return Err(ModemError::IndexOutOfRange { what: "pattern", index: p, size: n_patterns });
    }
    let sym = label & ((1u32 << b) - 1);
    let m = c.index_of_label(sym).expect("every b-bit label exists");
    Ok(TxWord { p, m })
}

/// Maps `log2 P + log2 M` bits (values 0/1, MSB first) to a word: the
/// leading bits select the pattern in natural binary, the rest select the
/// point whose label matches.
pub fn map_bits(bits: &[u8], n_patterns: usize, c: &Constellation) -> Result<TxWord, ModemError> {
    let expected = bits_per_word(n_patterns, c)?;
    if bits.len() != expected {
        return Err(ModemError::BitLength { expected, got: bits.len() });
    }
    let mut label = 0u32;
    for &b in bits {
        if b > 1 {
            return Err(ModemError::InvalidBit(b));
        }
        label = (label << 1) | b as u32;
    }
    word_from_label(label, n_patterns, c)
}

/// Inverse of [`map_bits`].
pub fn demap(w: TxWord, n_patterns: usize, c: &Constellation) -> Result<Vec<u8>, ModemError> {
    let n = bits_per_word(n_patterns, c)?;
    check_word(w, n_patterns, c)?;
    let label = word_label(w, c);
    Ok((0..n).rev().map(|i| ((label >> i) & 1) as u8).collect())
}

/// Parses a string of `0`/`1` characters.
pub fn bits_from_str(s: &str) -> Result<Vec<u8>, ModemError> {
    s.bytes()
        .map(|b| match b {
            b'0' => Ok(0),
            b'1' => Ok(1),
            other => Err(ModemError::InvalidBit(other)),
        })
        .collect()
}

/// Number of differing bits between the labels of two words.
pub fn hamming(a: TxWord, b: TxWord, c: &Constellation) -> u32 {
    (word_label(a, c) ^ word_label(b, c)).count_ones()
}

fn check_word(w: TxWord, n_patterns: usize, c: &Constellation) -> Result<(), ModemError> {
    if w.p >= n_patterns {
        return Err(ModemError::IndexOutOfRange { what: "pattern", index: w.p, size: n_patterns });
    }
    if w.m >= c.len() {
        return Err(ModemError::IndexOutOfRange { what: "symbol", index: w.m, size: c.len() });
    }
    Ok(())
}

/// `y = √ρ · H e_p · x_m + noise`.
pub fn transmit(
    h: &ChannelMatrix,
    w: TxWord,
    c: &Constellation,
    rho: f64,
    noise: &[Complex64],
) -> Result<RxObservation, ModemError> {
    let (n_r, n_p) = h.shape();
    check_word(w, n_p, c)?;
    if noise.len() != n_r {
        return Err(ModemError::NoiseLength { expected: n_r, got: noise.len() });
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(ModemError::BadSnr(rho));
    }
    let s = rho.sqrt() * c.point(w.m);
    let y = h.column(w.p).zip(noise).map(|(hp, &z)| s * hp + z).collect();
    Ok(RxObservation { y, rho })
}

/// Decision metric of hypothesis `(q, x)`.
pub fn ml_metric(obs: &RxObservation, h: &ChannelMatrix, q: usize, x: Complex64) -> f64 {
    let sr = obs.rho.sqrt();
    obs.y
        .iter()
        .zip(h.column(q))
        .map(|(y, hq)| {
            let s = hq * x;
            (y.conj() * s * sr).re - 0.5 * obs.rho * s.norm_sqr()
        })
        .sum()
}

/// Maximum-likelihood word given perfect channel knowledge. Ties go to the
/// lowest pattern index, then the lowest symbol index.
pub fn ml_detect(obs: &RxObservation, h: &ChannelMatrix, c: &Constellation) -> TxWord {
    let (_, n_p) = h.shape();
    let sr = obs.rho.sqrt();
    let mut best = TxWord { p: 0, m: 0 };
    let mut best_d = f64::NEG_INFINITY;
    for q in 0..n_p {
        // Per pattern: a = Σ y^* h, e = Σ |h|², so D = √ρ Re{a x} − ρ e |x|²/2.
        let (a, e) = obs
            .y
            .iter()
            .zip(h.column(q))
            .fold((Complex64::new(0.0, 0.0), 0.0), |(a, e), (y, hq)| (a + y.conj() * hq, e + hq.norm_sqr()));
        for (m, &x) in c.points().iter().enumerate() {
            let d = sr * (a * x).re - 0.5 * obs.rho * e * x.norm_sqr();
            if d > best_d {
                best_d = d;
                best = TxWord { p: q, m };
            }
        }
    }
    best
}
